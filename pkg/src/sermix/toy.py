"""Synthetic data for experiments and end-to-end tests.

Feature sequences are class-conditional Gaussians: each class gets a
mean vector and every frame of an utterance is that mean plus isotropic
noise. Waveforms are sine tones with additive noise. Both give fully
controlled, seeded corpora without shipping any audio.
"""

from __future__ import annotations

import numpy as np

from .mixup import SoftLabel
from .train import Sample


def toy_class_means(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(n_classes, dim))


def toy_feature_set(
    counts: list[int],
    t: int,
    dim: int,
    seed: int,
    noise: float = 0.5,
    scale: float = 0.2,
    n_sessions: int = 8,
    label_noise: float = 0.0,
) -> list[Sample]:
    """Seeded corpus with ``counts[c]`` utterances of class c.

    Sessions and speakers cycle through ``n_sessions`` values so the
    corpus supports group-disjoint folds. ``label_noise`` is the
    probability of replacing an utterance's label with a uniformly
    random class (features keep the true class). ``scale`` sets the
    overall feature magnitude; the quadratic frame attention turns it
    into the starting logit range, so keep it well below 1.
    """
    n_classes = len(counts)
    rng = np.random.default_rng(seed)
    means = toy_class_means(n_classes, dim, rng)
    samples = []
    idx = 0
    for c, count in enumerate(counts):
        for _ in range(count):
            feats = scale * (means[c] + noise * rng.normal(size=(t, dim)))
            label = c
            if label_noise > 0 and rng.uniform() < label_noise:
                label = int(rng.integers(n_classes))
            sess = f"s{idx % n_sessions:02d}"
            samples.append(
                Sample(
                    id=f"utt{idx:04d}",
                    features=feats,
                    label=SoftLabel.one_hot(label, n_classes),
                    speaker=sess,
                    session=sess,
                )
            )
            idx += 1
    # Interleave classes so folds and batches both see every class.
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]


def toy_waveform(
    n: int,
    sample_rate: int,
    rng: np.random.Generator,
    freq: float = 440.0,
    amplitude: float = 0.3,
    noise: float = 0.02,
) -> np.ndarray:
    """Sine tone plus noise, safely inside [-1, 1]."""
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    return amplitude * np.sin(2 * np.pi * freq * t + phase) + noise * rng.normal(size=n)
