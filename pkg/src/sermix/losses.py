"""Loss terms and their analytic gradients.

Four terms drive training: KL divergence against a (possibly soft) target
distribution, focal loss, center loss in the projected space, and a
supervised contrastive loss over frame embeddings after context
broadcasting. The weighted combination removes any term whose weight is
exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatch, DomainError, InvalidClass

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    """Loss hyperparameters and the term weights.

    ``lambdas`` weights (kl, focal, center, supcon) in that order.
    """

    gamma: float = 2.0
    tau: float = 0.07
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 0.1, 0.1)
    proj_dim: int = 64
    cb_enabled: bool = True
    normalize_embeddings: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be four nonnegative reals")
        if not any(v > 0 for v in self.lambdas):
            raise ValueError("at least one lambda must be positive")
        if self.proj_dim < 1:
            raise ValueError("proj_dim must be >= 1")


@dataclass
class LossReport:
    """Per-term values, their weighted total, and gradients w.r.t. inputs."""

    kl: float = 0.0
    focal: float = 0.0
    center: float = 0.0
    supcon: float = 0.0
    total: float = 0.0
    input_grads: dict = field(default_factory=dict)


def _checked_probs(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    if y.shape != y_hat.shape:
        raise DomainError(f"label shape {y.shape} vs prediction shape {y_hat.shape}")
    if np.any((y_hat <= 0.0) & (y > 0.0)):
        raise DomainError("prediction is <= 0 where the target puts mass")
    return np.maximum(y_hat, PROB_FLOOR)


def kl_div(y: np.ndarray, y_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """sum_i y_i log(y_i / y_hat_i), with 0 log 0 taken as 0.

    Returns the value and its gradient w.r.t. ``y_hat``. Predictions are
    clipped below at 1e-12, so a vanishing prediction under a positive
    target yields a large finite value rather than an overflow.
    """
    p = _checked_probs(y, y_hat)
    active = y > 0.0
    value = float(np.sum(y[active] * (np.log(y[active]) - np.log(p[active]))))
    grad = np.zeros_like(p)
    clipped = y_hat < PROB_FLOOR
    grad[active & ~clipped] = -y[active & ~clipped] / p[active & ~clipped]
    return value, grad


def focal_loss(y: np.ndarray, y_hat: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """-sum_i (1 - y_hat_i)^gamma log(y_hat_i) y_i, and its y_hat gradient.

    gamma = 0 recovers cross-entropy exactly.
    """
    p = _checked_probs(y, y_hat)
    one_minus = 1.0 - p
    value = float(-np.sum(np.power(one_minus, gamma) * np.log(p) * y))
    if gamma == 0.0:
        grad = -y / p
    else:
        grad = y * (
            gamma * np.power(one_minus, gamma - 1.0) * np.log(p)
            - np.power(one_minus, gamma) / p
        )
    grad = np.where(y_hat < PROB_FLOOR, 0.0, grad)
    return value, grad


def center_loss(
    f_low: np.ndarray, labels: np.ndarray, centers: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared distance of each projected feature to its class center.

    Returns the value and the gradient w.r.t. ``f_low``; centers are not
    trained by gradient (see :func:`update_centers`).
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= centers.shape[0]:
        raise InvalidClass(f"labels must lie in [0, {centers.shape[0]})")
    batch = f_low.shape[0]
    diff = f_low - centers[labels]
    value = float(np.sum(diff * diff)) / batch
    return value, (2.0 / batch) * diff


def update_centers(
    centers: np.ndarray,
    f_low: np.ndarray,
    labels: np.ndarray,
    center_lr: float,
) -> np.ndarray:
    """Move each class center toward the mean of its batch members.

    c_k <- c_k + lr * mean(f - c_k) over members of class k; classes
    absent from the batch are untouched. Returns a new array.
    """
    labels = np.asarray(labels, dtype=np.intp)
    out = centers.copy()
    for k in np.unique(labels):
        members = f_low[labels == k]
        out[k] += center_lr * (members.mean(axis=0) - centers[k])
    return out


def context_broadcast(x: np.ndarray) -> np.ndarray:
    """Average each frame with the sequence mean: 0.5 * (x + mean over frames)."""
    return 0.5 * (x + x.mean(axis=0, keepdims=True))


def context_broadcast_vjp(dy: np.ndarray) -> np.ndarray:
    """Backward of context_broadcast; the map is symmetric, so it is itself."""
    return 0.5 * (dy + dy.mean(axis=0, keepdims=True))


def supcon_loss(
    frames,
    labels,
    tau: float,
    normalize: bool = True,
) -> tuple[float, list[np.ndarray]]:
    """Supervised contrastive loss over all frames of a batch.

    ``frames`` is a sequence of (T_b, d) arrays (or one (B, T, d) array);
    every frame of an utterance acts as an anchor carrying the utterance's
    class. For each anchor the positives are all other same-class anchors
    and the denominator runs over every other anchor; the grand total is
    divided by the full anchor count, anchors without positives
    contributing zero. Returns the value and per-utterance gradients
    w.r.t. the raw (pre-normalization) embeddings.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 3:
        frames = list(frames)
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    labels = np.asarray(labels, dtype=np.intp)
    counts = [f.shape[0] for f in frames]
    n = int(sum(counts))
    if n < 2:
        raise DegenerateBatch(f"supcon needs at least 2 anchors, got {n}")

    emb = np.concatenate(frames, axis=0)
    anchor_labels = np.repeat(labels, counts)
    if normalize:
        norms = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), PROB_FLOOR)
        z = emb / norms
    else:
        z = emb

    sims = (z @ z.T) / tau
    off_diag = ~np.eye(n, dtype=bool)
    row_max = np.max(sims, axis=1, where=off_diag, initial=-np.inf, keepdims=True)
    exp_sims = np.exp(sims - row_max) * off_diag
    denom = exp_sims.sum(axis=1, keepdims=True)
    log_prob = sims - row_max - np.log(denom)

    pos = (anchor_labels[:, None] == anchor_labels[None, :]) & off_diag
    pos_counts = pos.sum(axis=1)
    has_pos = pos_counts > 0
    per_anchor = np.zeros(n)
    per_anchor[has_pos] = -(
        (pos * log_prob).sum(axis=1)[has_pos] / pos_counts[has_pos]
    )
    value = float(per_anchor.sum()) / n

    # d(total)/d(sims): softmax of the denominator minus the positive mask,
    # only on rows that have positives.
    softmax_rows = exp_sims / denom
    g = np.zeros((n, n))
    g[has_pos] = softmax_rows[has_pos] - pos[has_pos] / pos_counts[has_pos, None]
    dz = (g + g.T) @ z / (tau * n)
    if normalize:
        demb = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / norms
    else:
        demb = dz

    grads: list[np.ndarray] = []
    offset = 0
    for c in counts:
        grads.append(demb[offset : offset + c])
        offset += c
    return value, grads


def combined_loss(
    parts: dict[str, tuple[float, dict[str, np.ndarray]]],
    lambdas: tuple[float, float, float, float],
) -> LossReport:
    """Weighted sum of the computed terms.

    ``parts`` maps term names ("kl", "focal", "center", "supcon") to
    (value, gradient-dict) pairs; a missing term counts as exactly zero,
    so setting a weight to zero and omitting the term removes it without
    residue. Gradients sharing an input key are lambda-weighted and
    summed.
    """
    order = ("kl", "focal", "center", "supcon")
    values = {}
    input_grads: dict[str, np.ndarray] = {}
    total = 0.0
    for name, lam in zip(order, lambdas):
        if name not in parts:
            values[name] = 0.0
            continue
        value, grads = parts[name]
        values[name] = float(value)
        total += lam * value
        for key, grad in grads.items():
            scaled = lam * np.asarray(grad)
            if key in input_grads:
                input_grads[key] = input_grads[key] + scaled
            else:
                input_grads[key] = scaled
    return LossReport(
        kl=values["kl"],
        focal=values["focal"],
        center=values["center"],
        supcon=values["supcon"],
        total=total,
        input_grads=input_grads,
    )
