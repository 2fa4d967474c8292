"""Energy-adaptive mixup augmentation, frame-level attention, and the
multi-loss objective around them, all as explicit float64 numerics."""

from .audio import Segment, Waveform, extract_segment, load_wav, save_wav, segment_energy
from .mixup import (
    MixConfig,
    MixParams,
    MixResult,
    SoftLabel,
    energy_adaptive_mix,
    length_adaptive_mix,
    make_soft_label,
    mix_signals,
    sample_mix_params,
    snr_scale,
)
from .losses import (
    LossConfig,
    LossReport,
    center_loss,
    combined_loss,
    context_broadcast,
    focal_loss,
    kl_div,
    supcon_loss,
    update_centers,
)
from .model import ModelConfig, ModelParams, forward_pass, init_params, load_checkpoint, save_checkpoint
from .train import Sample, TrainConfig, evaluate, lr_at_epoch, train_run
from .data import FoldPlan, ManifestEntry, make_folds, read_features, read_manifest, write_features

__version__ = "0.1.0"

__all__ = [
    "Segment",
    "Waveform",
    "extract_segment",
    "load_wav",
    "save_wav",
    "segment_energy",
    "MixConfig",
    "MixParams",
    "MixResult",
    "SoftLabel",
    "energy_adaptive_mix",
    "length_adaptive_mix",
    "make_soft_label",
    "mix_signals",
    "sample_mix_params",
    "snr_scale",
    "LossConfig",
    "LossReport",
    "center_loss",
    "combined_loss",
    "context_broadcast",
    "focal_loss",
    "kl_div",
    "supcon_loss",
    "update_centers",
    "ModelConfig",
    "ModelParams",
    "forward_pass",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "Sample",
    "TrainConfig",
    "evaluate",
    "lr_at_epoch",
    "train_run",
    "FoldPlan",
    "ManifestEntry",
    "make_folds",
    "read_features",
    "read_manifest",
    "write_features",
]
