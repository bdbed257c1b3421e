"""Drive everything through the CLI, ending with an ablation sweep CSV.

Same entry points as the installed `sgconv` command; this script calls
main() directly so it runs without installation.
"""
import tempfile
from pathlib import Path

from sgconv.cli import main
from sgconv.data import make_blob_dataset, save_dataset
from sgconv.io import save_model, sgm_paths
from sgconv.model import build_toy_cnn
from sgconv.pipeline import TrainConfig, sgd_finetune

work = Path(tempfile.mkdtemp(prefix="sgconv_demo_"))
print(f"working in {work}\n")

train = make_blob_dataset(400, seed=31)
test = make_blob_dataset(200, seed=32)
save_dataset(train, work / "train.sgd")
save_dataset(test, work / "test.sgd")
model = build_toy_cnn(seed=2)
sgd_finetune(model, train, TrainConfig(epochs=5, lr=0.01, seed=2))
save_model(model, *sgm_paths(work / "toy"))

for argv in [
    ["report", "--model", str(work / "toy.sgm.json")],
    ["eval", "--model", str(work / "toy.sgm.json"), "--data", str(work / "test.sgd")],
    ["prune", "--model", str(work / "toy.sgm.json"), "--data", str(work / "train.sgd"),
     "--groups", "8", "--step", "0.1", "--target-conv", "0.6", "--target-fc", "0.6",
     "--finetune", "global", "--global-epochs", "8", "--seed", "42",
     "--out", str(work / "pruned")],
    ["eval", "--model", str(work / "pruned.sgm.json"), "--data", str(work / "test.sgd")],
    ["deploy", "--model", str(work / "pruned.sgm.json"), "--out", str(work / "deployed")],
    ["report", "--model", str(work / "deployed.sgm.json")],
    ["sweep", "--model", str(work / "toy.sgm.json"), "--data", str(work / "train.sgd"),
     "--test-data", str(work / "test.sgd"), "--groups", "2,8", "--steps", "0.1,0.3",
     "--scopes", "both", "--target", "0.6", "--seeds", "0", "--finetune", "global",
     "--global-epochs", "4", "--out", str(work / "sweep.csv")],
]:
    print(f"$ sgconv {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"exit code {code}"
    print()

print("sweep.csv:")
print((work / "sweep.csv").read_text())
