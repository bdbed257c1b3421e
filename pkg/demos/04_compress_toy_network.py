"""End to end: train a toy CNN on synthetic blobs, compress it, recover accuracy.

The driver repeats (re-score importance, re-cluster, prune to t * step)
until the conv and fc removal targets are met, then runs one global
fine-tuning pass. The report carries the full iteration trace.
"""
from sgconv.data import make_blob_dataset
from sgconv.model import build_toy_cnn
from sgconv.pipeline import PruneSchedule, TrainConfig, evaluate, run_algorithm1, \
    sgd_finetune

train = make_blob_dataset(600, seed=11)
test = make_blob_dataset(300, seed=12)

model = build_toy_cnn(seed=0)
sgd_finetune(model, train, TrainConfig(epochs=6, lr=0.01, seed=0))
baseline = evaluate(model, test)
print(f"baseline test accuracy: {baseline['top1']:.3f}")

schedule = PruneSchedule(num_groups=8, step=0.05, target_conv=0.6, target_fc=0.6,
                         finetune="global", seed=0)
pruned, report = run_algorithm1(model, train, schedule, test_dataset=test)

print(f"\niterations: {len(report['iterations'])}")
print(f"{'t':>3} {'conv r':>8} {'fc r':>8} {'network r':>10} {'test top1':>10}")
for rec in report["iterations"]:
    print(f"{rec['t']:>3} {rec['conv_ratio']:>8.3f} {rec['fc_ratio']:>8.3f} "
          f"{rec['network_ratio']:>10.3f} {rec['accuracy']['top1']:>10.3f}")

after = evaluate(pruned, test)
print(f"\nparams: {report['params_before']} -> {report['params_after']} live")
print(f"final removal ratios: conv {report['final']['conv_ratio']:.3f}, "
      f"fc {report['final']['fc_ratio']:.3f}")
print(f"test accuracy after global fine-tuning: {after['top1']:.3f} "
      f"(baseline {baseline['top1']:.3f})")
