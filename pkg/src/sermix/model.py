"""Model assembly: parameters, end-to-end forward/backward, checkpoints.

The classifier path runs residual self-attention over the frame sequence,
aggregates to a single vector, and maps it to class logits; a projection
head produces the low-dimensional feature used by the center loss, and a
separate (optionally shared) frame projection feeds the contrastive loss
after context broadcasting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, ShapeMismatch, TruncatedFile, VersionMismatch
from .kernels import (
    MsaCache,
    MsaParams,
    PoolCache,
    PoolParams,
    attention_pool_backward,
    attention_pool_forward,
    glorot_uniform,
    linear_backward,
    linear_forward,
    max_pool,
    max_pool_backward,
    mean_pool,
    mean_pool_backward,
    msa_backward,
    msa_forward,
    softmax_rows,
)
from .losses import context_broadcast, context_broadcast_vjp

AGGREGATIONS = ("flam", "maxpool", "meanpool")

CHECKPOINT_MAGIC = b"EAMC"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Structural configuration: dimensions, aggregation, and flags."""

    dim: int
    n_classes: int
    n_heads: int = 16
    proj_dim: int = 64
    aggregation: str = "flam"
    cb_enabled: bool = True
    share_projection: bool = False
    pool_softmax: bool = False

    def __post_init__(self):
        if self.dim < 1 or self.n_classes < 2 or self.proj_dim < 1:
            raise ValueError("dim, proj_dim must be >= 1 and n_classes >= 2")
        if self.dim % self.n_heads != 0:
            raise ShapeMismatch(f"dim {self.dim} not divisible by {self.n_heads} heads")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class ModelParams:
    """All weights. Centers are excluded from gradient training."""

    msa: MsaParams
    pool: PoolParams
    proj_w: np.ndarray
    proj_b: np.ndarray
    frame_proj_w: np.ndarray
    frame_proj_b: np.ndarray
    clf_w: np.ndarray
    clf_b: np.ndarray
    centers: np.ndarray

    def trainable(self) -> dict[str, np.ndarray]:
        """Name -> array view of every gradient-trained tensor, in a fixed order."""
        return {
            "msa.w_q": self.msa.w_q,
            "msa.w_k": self.msa.w_k,
            "msa.w_v": self.msa.w_v,
            "msa.w_o": self.msa.w_o,
            "pool.weight": self.pool.weight,
            "pool.bias": self.pool.bias,
            "proj_w": self.proj_w,
            "proj_b": self.proj_b,
            "frame_proj_w": self.frame_proj_w,
            "frame_proj_b": self.frame_proj_b,
            "clf_w": self.clf_w,
            "clf_b": self.clf_b,
        }

    def all_tensors(self) -> dict[str, np.ndarray]:
        out = self.trainable()
        out["centers"] = self.centers
        return out

    def set_trainable(self, values: dict[str, np.ndarray]) -> None:
        self.msa.w_q = values["msa.w_q"]
        self.msa.w_k = values["msa.w_k"]
        self.msa.w_v = values["msa.w_v"]
        self.msa.w_o = values["msa.w_o"]
        self.pool.weight = values["pool.weight"]
        self.pool.bias = values["pool.bias"]
        self.proj_w = values["proj_w"]
        self.proj_b = values["proj_b"]
        self.frame_proj_w = values["frame_proj_w"]
        self.frame_proj_b = values["frame_proj_b"]
        self.clf_w = values["clf_w"]
        self.clf_b = values["clf_b"]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases, zero class centers."""
    d, p, c = cfg.dim, cfg.proj_dim, cfg.n_classes
    return ModelParams(
        msa=MsaParams.init(rng, d, cfg.n_heads),
        pool=PoolParams.init(rng, d),
        proj_w=glorot_uniform(rng, (d, p), d, p),
        proj_b=np.zeros(p),
        frame_proj_w=glorot_uniform(rng, (d, p), d, p),
        frame_proj_b=np.zeros(p),
        clf_w=glorot_uniform(rng, (d, c), d, c),
        clf_b=np.zeros(c),
        centers=np.zeros((c, p)),
    )


@dataclass
class Forward:
    """Forward activations plus the caches the backward pass needs."""

    enhanced: np.ndarray           # (T, D) after residual attention
    msa_cache: MsaCache
    f: np.ndarray                  # (D,) aggregated utterance vector
    pool_cache: PoolCache | None
    logits: np.ndarray             # (C,)
    probs: np.ndarray              # (C,)
    f_low: np.ndarray              # (p,)
    frames: np.ndarray | None      # (T, p) contrastive embeddings, or None


def forward_pass(
    x: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    with_frames: bool = False,
) -> Forward:
    """Run the full model on one (T, D) feature sequence.

    ``with_frames`` additionally computes the per-frame contrastive
    embeddings (projection of every enhanced frame, context-broadcast
    when enabled); evaluation skips them.
    """
    if x.ndim != 2 or x.shape[1] != cfg.dim:
        raise ShapeMismatch(f"expected (T, {cfg.dim}) features, got {x.shape}")
    enhanced, msa_cache = msa_forward(x, params.msa)

    pool_cache = None
    if cfg.aggregation == "flam":
        f, pool_cache = attention_pool_forward(enhanced, params.pool, cfg.pool_softmax)
    elif cfg.aggregation == "maxpool":
        f = max_pool(enhanced)
    else:
        f = mean_pool(enhanced)

    logits = linear_forward(f, params.clf_w, params.clf_b)
    probs = softmax_rows(logits)
    f_low = linear_forward(f, params.proj_w, params.proj_b)

    frames = None
    if with_frames:
        fw, fb = _frame_projection(params, cfg)
        frames = linear_forward(enhanced, fw, fb)
        if cfg.cb_enabled:
            frames = context_broadcast(frames)
    return Forward(
        enhanced=enhanced,
        msa_cache=msa_cache,
        f=f,
        pool_cache=pool_cache,
        logits=logits,
        probs=probs,
        f_low=f_low,
        frames=frames,
    )


def _frame_projection(params: ModelParams, cfg: ModelConfig):
    if cfg.share_projection:
        return params.proj_w, params.proj_b
    return params.frame_proj_w, params.frame_proj_b


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(v) for name, v in params.trainable().items()}


def backward_pass(
    params: ModelParams,
    cfg: ModelConfig,
    fwd: Forward,
    dlogits: np.ndarray,
    df_low: np.ndarray | None = None,
    dframes: np.ndarray | None = None,
    grads: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Accumulate gradients for one sequence into ``grads``.

    Upstream gradients arrive per output: class logits, the projected
    utterance feature, and (optionally) the contrastive frame embeddings.
    Returns the gradient w.r.t. the input features and the grads dict.
    """
    if grads is None:
        grads = zero_grads(params)

    df, dclf_w, dclf_b = linear_backward(fwd.f, params.clf_w, dlogits)
    grads["clf_w"] += dclf_w
    grads["clf_b"] += dclf_b

    if df_low is not None:
        dfp, dproj_w, dproj_b = linear_backward(fwd.f, params.proj_w, df_low)
        df = df + dfp
        grads["proj_w"] += dproj_w
        grads["proj_b"] += dproj_b

    if cfg.aggregation == "flam":
        denh, dpw, dpb = attention_pool_backward(params.pool, fwd.pool_cache, df)
        grads["pool.weight"] += dpw
        grads["pool.bias"] += dpb
    elif cfg.aggregation == "maxpool":
        denh = max_pool_backward(fwd.enhanced, df)
    else:
        denh = mean_pool_backward(fwd.enhanced, df)

    if dframes is not None:
        d = context_broadcast_vjp(dframes) if cfg.cb_enabled else dframes
        fw, _fb = _frame_projection(params, cfg)
        dfr, dfw, dfb = linear_backward(fwd.enhanced, fw, d)
        denh = denh + dfr
        if cfg.share_projection:
            grads["proj_w"] += dfw
            grads["proj_b"] += dfb
        else:
            grads["frame_proj_w"] += dfw
            grads["frame_proj_b"] += dfb

    dx, msa_grads = msa_backward(params.msa, fwd.msa_cache, denh)
    grads["msa.w_q"] += msa_grads.w_q
    grads["msa.w_k"] += msa_grads.w_k
    grads["msa.w_v"] += msa_grads.w_v
    grads["msa.w_o"] += msa_grads.w_o
    return dx, grads


# --- checkpoint format: "EAMC", version, dimension header, f32 tensors ---

_AGG_CODES = {name: i for i, name in enumerate(AGGREGATIONS)}
_FLAG_CB = 1
_FLAG_SHARE = 2
_FLAG_POOL_SOFTMAX = 4


def save_checkpoint(path: str | Path, params: ModelParams, cfg: ModelConfig) -> None:
    """Write params as little-endian float32 tensors behind a sized header."""
    flags = (
        (_FLAG_CB if cfg.cb_enabled else 0)
        | (_FLAG_SHARE if cfg.share_projection else 0)
        | (_FLAG_POOL_SOFTMAX if cfg.pool_softmax else 0)
    )
    header = CHECKPOINT_MAGIC + struct.pack(
        "<7I",
        CHECKPOINT_VERSION,
        cfg.dim,
        cfg.n_heads,
        cfg.proj_dim,
        cfg.n_classes,
        _AGG_CODES[cfg.aggregation],
        flags,
    )
    with open(path, "wb") as f:
        f.write(header)
        for tensor in params.all_tensors().values():
            f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagic(f"{path}: expected {CHECKPOINT_MAGIC!r}, found {magic!r}")
        head = f.read(28)
        if len(head) < 28:
            raise TruncatedFile(f"{path}: incomplete header")
        version, dim, n_heads, proj_dim, n_classes, agg_code, flags = struct.unpack("<7I", head)
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
        if agg_code >= len(AGGREGATIONS):
            raise VersionMismatch(f"{path}: unknown aggregation code {agg_code}")
        cfg = ModelConfig(
            dim=dim,
            n_classes=n_classes,
            n_heads=n_heads,
            proj_dim=proj_dim,
            aggregation=AGGREGATIONS[agg_code],
            cb_enabled=bool(flags & _FLAG_CB),
            share_projection=bool(flags & _FLAG_SHARE),
            pool_softmax=bool(flags & _FLAG_POOL_SOFTMAX),
        )

        head_dim = dim // n_heads
        shapes = {
            "msa.w_q": (n_heads, dim, head_dim),
            "msa.w_k": (n_heads, dim, head_dim),
            "msa.w_v": (n_heads, dim, head_dim),
            "msa.w_o": (dim, dim),
            "pool.weight": (dim,),
            "pool.bias": (1,),
            "proj_w": (dim, proj_dim),
            "proj_b": (proj_dim,),
            "frame_proj_w": (dim, proj_dim),
            "frame_proj_b": (proj_dim,),
            "clf_w": (dim, n_classes),
            "clf_b": (n_classes,),
            "centers": (n_classes, proj_dim),
        }
        tensors = {}
        for name, shape in shapes.items():
            count = int(np.prod(shape))
            raw = f.read(count * 4)
            if len(raw) < count * 4:
                raise TruncatedFile(f"{path}: tensor {name!r} is incomplete")
            tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    params = ModelParams(
        msa=MsaParams(
            w_q=tensors["msa.w_q"],
            w_k=tensors["msa.w_k"],
            w_v=tensors["msa.w_v"],
            w_o=tensors["msa.w_o"],
        ),
        pool=PoolParams(weight=tensors["pool.weight"], bias=tensors["pool.bias"]),
        proj_w=tensors["proj_w"],
        proj_b=tensors["proj_b"],
        frame_proj_w=tensors["frame_proj_w"],
        frame_proj_b=tensors["frame_proj_b"],
        clf_w=tensors["clf_w"],
        clf_b=tensors["clf_b"],
        centers=tensors["centers"],
    )
    return params, cfg
