"""Training loop: Adam updates, geometric LR decay, evaluation metrics.

Mixup happens upstream on waveforms; the trainer consumes ready-made
feature sequences with (possibly soft) labels. Model weights follow Adam;
class centers follow the classwise-mean rule at their own learning rate.
Both rates decay to 7/8 of their previous value each epoch until the
20th epoch, then stay constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset
from .losses import (
    LossConfig,
    LossReport,
    center_loss,
    combined_loss,
    focal_loss,
    kl_div,
    supcon_loss,
    update_centers,
)
from .kernels import softmax_rows_vjp
from .mixup import MixConfig, SoftLabel
from .model import ModelConfig, ModelParams, backward_pass, forward_pass, zero_grads


@dataclass
class Sample:
    """One utterance ready for training: features plus label and metadata."""

    id: str
    features: np.ndarray          # (T, D)
    label: SoftLabel
    speaker: str = ""
    session: str = ""

    @property
    def hard_label(self) -> int:
        return self.label.hard()


@dataclass
class TrainConfig:
    """Optimization schedule and ablation switches."""

    model_lr: float = 1e-4
    center_lr: float = 5e-3
    decay: float = 7.0 / 8.0
    decay_until_epoch: int = 20
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    aggregation: str = "flam"
    mixup: str = "eam"

    def __post_init__(self):
        if self.model_lr <= 0 or self.center_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 < self.decay <= 1):
            raise ValueError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.mixup not in ("eam", "lam", "none"):
            raise ValueError("mixup must be eam, lam, or none")
        if self.loss.lambdas[3] > 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when the contrastive loss is active")


def lr_at_epoch(lr0: float, epoch: int, decay: float = 7.0 / 8.0, decay_until: int = 20) -> float:
    """lr0 * decay^min(epoch - 1, decay_until); epochs are 1-based."""
    if epoch < 1:
        raise ValueError("epoch is 1-based")
    return lr0 * decay ** min(epoch - 1, decay_until)


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def train_batch(
    batch: list[Sample],
    params: ModelParams,
    mcfg: ModelConfig,
    lcfg: LossConfig,
    adam: AdamState,
    lr_model: float,
    lr_center: float,
) -> LossReport:
    """One optimization step on a batch; returns the batch loss report."""
    lam_kl, lam_focal, lam_center, lam_supcon = lcfg.lambdas
    n = len(batch)
    use_frames = lam_supcon > 0
    fwds = [forward_pass(s.features, params, mcfg, with_frames=use_frames) for s in batch]
    hard = np.array([s.hard_label for s in batch], dtype=np.intp)

    parts: dict[str, tuple[float, dict]] = {}
    dprobs = [np.zeros_like(fw.probs) for fw in fwds]
    if lam_kl > 0:
        vals = []
        for s, fw, dp in zip(batch, fwds, dprobs):
            v, g = kl_div(s.label.probs, fw.probs)
            vals.append(v)
            dp += lam_kl * g / n
        parts["kl"] = (float(np.mean(vals)), {})
    if lam_focal > 0:
        vals = []
        for s, fw, dp in zip(batch, fwds, dprobs):
            v, g = focal_loss(s.label.probs, fw.probs, lcfg.gamma)
            vals.append(v)
            dp += lam_focal * g / n
        parts["focal"] = (float(np.mean(vals)), {})

    f_low = np.stack([fw.f_low for fw in fwds])
    df_lows = [None] * n
    if lam_center > 0:
        v, g = center_loss(f_low, hard, params.centers)
        parts["center"] = (v, {})
        df_lows = [lam_center * g[b] for b in range(n)]

    dframes = [None] * n
    total_anchors = sum(fw.frames.shape[0] for fw in fwds) if use_frames else 0
    if use_frames and total_anchors >= 2:
        v, g = supcon_loss([fw.frames for fw in fwds], hard, lcfg.tau, lcfg.normalize_embeddings)
        parts["supcon"] = (v, {})
        dframes = [lam_supcon * gb for gb in g]

    grads = zero_grads(params)
    for b, fw in enumerate(fwds):
        dlogits = softmax_rows_vjp(fw.probs, dprobs[b])
        backward_pass(params, mcfg, fw, dlogits, df_lows[b], dframes[b], grads)

    adam_step(params.trainable(), grads, adam, lr_model)
    if lam_center > 0:
        params.centers = update_centers(params.centers, f_low, hard, lr_center)
    return combined_loss(parts, lcfg.lambdas)


def train_epoch(
    dataset: list[Sample],
    params: ModelParams,
    mcfg: ModelConfig,
    cfg: TrainConfig,
    adam: AdamState,
    epoch: int,
    rng: np.random.Generator,
) -> LossReport:
    """Shuffle, step over mini-batches, and return batch-averaged losses."""
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    lr_model = lr_at_epoch(cfg.model_lr, epoch, cfg.decay, cfg.decay_until_epoch)
    lr_center = lr_at_epoch(cfg.center_lr, epoch, cfg.decay, cfg.decay_until_epoch)
    order = rng.permutation(len(dataset))
    reports = []
    for lo in range(0, len(order), cfg.batch_size):
        batch = [dataset[i] for i in order[lo : lo + cfg.batch_size]]
        reports.append(
            train_batch(batch, params, mcfg, cfg.loss, adam, lr_model, lr_center)
        )
    return LossReport(
        kl=float(np.mean([r.kl for r in reports])),
        focal=float(np.mean([r.focal for r in reports])),
        center=float(np.mean([r.center for r in reports])),
        supcon=float(np.mean([r.supcon for r in reports])),
        total=float(np.mean([r.total for r in reports])),
    )


@dataclass
class EvalResult:
    """Accuracy metrics and the raw per-utterance decisions behind them."""

    wa: float
    ua: float
    confusion: np.ndarray                 # (C, C), rows = true class
    predictions: list[tuple[str, int, int]]  # (id, true, predicted)


def evaluate(dataset: list[Sample], params: ModelParams, mcfg: ModelConfig) -> EvalResult:
    """Weighted accuracy, unweighted (per-class mean recall) accuracy,
    confusion matrix, and per-utterance predictions.

    Classes absent from the dataset are excluded from the recall mean.
    """
    if not dataset:
        raise EmptyDataset("cannot evaluate an empty dataset")
    c = mcfg.n_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    predictions = []
    for s in dataset:
        fw = forward_pass(s.features, params, mcfg)
        pred = int(np.argmax(fw.logits))
        true = s.hard_label
        confusion[true, pred] += 1
        predictions.append((s.id, true, pred))
    per_class_total = confusion.sum(axis=1)
    present = per_class_total > 0
    recalls = np.diag(confusion)[present] / per_class_total[present]
    wa = float(np.trace(confusion) / confusion.sum())
    ua = float(np.mean(recalls))
    return EvalResult(wa=wa, ua=ua, confusion=confusion, predictions=predictions)


def train_run(
    train_set: list[Sample],
    eval_set: list[Sample],
    params: ModelParams,
    mcfg: ModelConfig,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> list[dict]:
    """Full training run; returns one log record per epoch.

    Each record holds the epoch number, the model learning rate, the four
    loss terms with their weighted total, and held-out WA/UA. Shuffling
    uses ``rng`` when given, else a fresh generator from ``cfg.seed``.
    """
    if cfg.loss.lambdas[3] > 0 and cfg.batch_size < 2:
        raise ValueError("batch_size must be >= 2 when the contrastive loss is active")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    adam = AdamState.init(params.trainable())
    records = []
    for epoch in range(1, cfg.epochs + 1):
        report = train_epoch(train_set, params, mcfg, cfg, adam, epoch, rng)
        metrics = evaluate(eval_set, params, mcfg) if eval_set else None
        records.append(
            {
                "epoch": epoch,
                "lr": lr_at_epoch(cfg.model_lr, epoch, cfg.decay, cfg.decay_until_epoch),
                "kl": report.kl,
                "focal": report.focal,
                "center": report.center,
                "supcon": report.supcon,
                "total": report.total,
                "wa": metrics.wa if metrics else None,
                "ua": metrics.ua if metrics else None,
            }
        )
    return records
