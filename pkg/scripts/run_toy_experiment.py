#!/usr/bin/env python3
"""End-to-end toolkit run on a generated toy dataset.

Builds the dataset, mixes augmented pairs from the WAV clips, trains a
model with all four loss terms, evaluates the held-out fold, and dumps
embeddings -- each step through the same CLI entry points a shell user
would call.

Usage:
    python3 scripts/run_toy_experiment.py --work-dir /tmp/toyrun --seed 7
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from sermix.cli import main as sermix_main


def step(name, argv):
    print(f"==> sermix {' '.join(argv)}")
    code = sermix_main(argv)
    if code != 0:
        print(f"step {name!r} failed with exit code {code}", file=sys.stderr)
        sys.exit(code)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work-dir", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--model-lr", type=float, default=5e-3,
                    help="toy features converge far faster than the default rate")
    ap.add_argument("--pairs", type=int, default=40)
    args = ap.parse_args()

    work = Path(args.work_dir)
    data_dir = work / "data"
    subprocess.run(
        [sys.executable, str(ROOT / "scripts" / "make_toy_dataset.py"),
         "--out-dir", str(data_dir), "--n-per-class", "25", "25", "25", "25",
         "--t", "50", "--dim", "32", "--seed", str(args.seed), "--wav"],
        check=True,
    )

    step("augment", [
        "augment",
        "--manifest", str(data_dir / "audio.jsonl"),
        "--out-dir", str(work / "mixes"),
        "--pairs", str(args.pairs),
        "--seed", str(args.seed),
    ])

    ckpt = work / "model.ckpt"
    step("train", [
        "train",
        "--manifest", str(data_dir / "features.jsonl"),
        "--out", str(ckpt),
        "--classes", "c0,c1,c2,c3",
        "--fold", "0", "--folds", "4",
        "--epochs", str(args.epochs),
        "--model-lr", str(args.model_lr),
        "--seed", str(args.seed),
    ])

    step("evaluate", [
        "evaluate",
        "--checkpoint", str(ckpt),
        "--manifest", str(data_dir / "features.jsonl"),
        "--classes", "c0,c1,c2,c3",
        "--fold", "0", "--folds", "4",
    ])

    step("dump-embeddings", [
        "dump-embeddings",
        "--checkpoint", str(ckpt),
        "--manifest", str(data_dir / "features.jsonl"),
        "--out", str(work / "embeddings.csv"),
        "--fold", "0", "--folds", "4",
    ])

    print(json.dumps({"work_dir": str(work), "checkpoint": str(ckpt)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
