"""Walk through the dense kernels: conv2d, fc, and their gradients.

Shows that the im2col-backed convolution agrees with a naive loop, and
that the analytic backward pass agrees with central finite differences.
"""
import numpy as np

from sgconv import ops

rng = np.random.default_rng(0)

# -- a tiny convolution, checked against explicit loops ---------------------
x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
out = ops.conv2d_forward(x, w)
print(f"conv2d: input {x.shape} * weights {w.shape} -> output {out.shape}")

naive = np.zeros_like(out)
for f in range(3):
    for i in range(3):
        for j in range(3):
            patch = x[0, :, i:i + 3, j:j + 3]
            naive[0, f, i, j] = (patch * w[f]).sum()
print(f"  max |im2col - naive loop| = {np.abs(out - naive).max():.2e}")

# -- fully connected is the same algebra with k = 1 -------------------------
xf = rng.standard_normal((4, 6)).astype(np.float32)
wf = rng.standard_normal((3, 6)).astype(np.float32)
print(f"fc: {xf.shape} @ {wf.shape}.T -> {ops.fc_forward(xf, wf).shape}")

# -- gradients vs central finite differences --------------------------------
x64 = rng.standard_normal((1, 2, 4, 4))
w64 = rng.standard_normal((2, 2, 3, 3))
proj = rng.standard_normal((1, 2, 2, 2))   # loss = sum(proj * conv(x))

dx, dw, _ = ops.conv2d_backward(proj, x64, w64)

h = 1e-5
fd = np.zeros_like(w64)
for idx in np.ndindex(w64.shape):
    w64[idx] += h
    up = (proj * ops.conv2d_forward(x64, w64)).sum()
    w64[idx] -= 2 * h
    down = (proj * ops.conv2d_forward(x64, w64)).sum()
    w64[idx] += h
    fd[idx] = (up - down) / (2 * h)
print(f"conv backward: max |analytic dW - finite diff| = {np.abs(dw - fd).max():.2e}")
