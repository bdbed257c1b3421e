"""Score channel importance per filter, then let the filters group themselves.

Each filter gets a vector: entry j is the l1 norm of its kernel over
input channel j. Filters with similar vectors rely on the same channels,
so clustering the vectors yields filter groups of diverse sizes.
"""
import numpy as np

from sgconv.data import make_blob_dataset
from sgconv.grouping import kmeans_cluster
from sgconv.importance import layer_importance
from sgconv.model import build_toy_cnn
from sgconv.pipeline import TrainConfig, sgd_finetune

# a briefly trained toy net gives structured (non-random) importance
train = make_blob_dataset(400, seed=1)
model = build_toy_cnn(seed=0)
sgd_finetune(model, train, TrainConfig(epochs=3, lr=0.01, seed=0))

conv = model.layer("conv2")
vectors = layer_importance(conv)
print(f"importance matrix for {conv.name}: shape {vectors.shape}")
with np.printoptions(precision=2, suppress=True):
    print(vectors)

for g in (2, 4):
    grouping = kmeans_cluster(vectors, g, seed=0)
    sizes = np.bincount(grouping.assignment, minlength=g)
    print(f"\n{g} groups: sizes {sizes.tolist()}, "
          f"within-group distance sum {grouping.objective:.3f} "
          f"(squared: {grouping.sq_objective:.3f})")
    for gid in range(g):
        members = np.flatnonzero(grouping.assignment == gid).tolist()
        print(f"  group {gid}: filters {members}")
