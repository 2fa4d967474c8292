#!/usr/bin/env python3
"""Generate a synthetic dataset for end-to-end runs of the toolkit.

Writes per-utterance feature files plus a feature manifest, and
optionally sine-tone WAV clips with an audio manifest for the augment
command. Class structure is Gaussian class means in feature space, so a
few epochs of training separate the classes.

Usage:
    python3 scripts/make_toy_dataset.py --out-dir /tmp/toy \\
        --n-per-class 25 25 25 25 --t 50 --dim 32 --seed 7 --wav
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sermix.audio import Waveform, save_wav
from sermix.data import write_features
from sermix.toy import toy_feature_set, toy_waveform


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", required=True, help="output directory")
    ap.add_argument("--n-per-class", type=int, nargs="+", default=[25, 25, 25, 25],
                    help="utterance counts, one per class")
    ap.add_argument("--t", type=int, default=50, help="frames per utterance")
    ap.add_argument("--dim", type=int, default=32, help="feature dimension")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--label-noise", type=float, default=0.0,
                    help="probability of replacing a label with a random one")
    ap.add_argument("--wav", action="store_true",
                    help="also write sine-tone clips and an audio manifest")
    ap.add_argument("--sample-rate", type=int, default=16000)
    ap.add_argument("--clip-seconds", type=float, default=0.5)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = toy_feature_set(
        args.n_per_class, t=args.t, dim=args.dim, seed=args.seed,
        label_noise=args.label_noise,
    )
    classes = [f"c{i}" for i in range(len(args.n_per_class))]

    feat_manifest = out / "features.jsonl"
    with open(feat_manifest, "w", encoding="utf-8") as fh:
        for s in samples:
            feat_path = out / f"{s.id}.feat"
            write_features(feat_path, s.features)
            fh.write(json.dumps({
                "id": s.id,
                "label": classes[s.hard_label],
                "feature_path": str(feat_path),
                "speaker": s.speaker,
                "session": s.session,
            }) + "\n")

    audio_manifest = None
    if args.wav:
        n = int(args.clip_seconds * args.sample_rate)
        rng = np.random.default_rng(args.seed + 1)
        audio_manifest = out / "audio.jsonl"
        with open(audio_manifest, "w", encoding="utf-8") as fh:
            for s in samples:
                # class-dependent pitch so mixes blend distinct tones
                freq = 220.0 * (1 + s.hard_label)
                wav_path = out / f"{s.id}.wav"
                save_wav(
                    Waveform(toy_waveform(n, args.sample_rate, rng, freq=freq),
                             args.sample_rate),
                    wav_path,
                )
                fh.write(json.dumps({
                    "id": s.id,
                    "label": classes[s.hard_label],
                    "audio_path": str(wav_path),
                    "speaker": s.speaker,
                    "session": s.session,
                }) + "\n")

    print(json.dumps({
        "out_dir": str(out),
        "utterances": len(samples),
        "classes": classes,
        "feature_manifest": str(feat_manifest),
        "audio_manifest": str(audio_manifest) if audio_manifest else None,
    }, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
