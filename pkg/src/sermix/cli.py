"""Command-line entry point.

One binary, five subcommands: augment, train, evaluate, gradcheck,
dump-embeddings. Flags can be preloaded from a TOML or JSON config file;
explicit flags win over the file, the file wins over built-in defaults,
and unknown config keys are rejected before any work happens.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import checks
from .audio import load_wav, save_wav
from .data import (
    ManifestEntry,
    dump_embeddings,
    make_folds,
    read_features,
    read_manifest,
)
from .errors import SermixError, ShapeMismatch, SilentSegment
from .losses import LossConfig
from .mixup import MixConfig, SoftLabel, energy_adaptive_mix, length_adaptive_mix
from .model import ModelConfig, forward_pass, init_params, load_checkpoint, save_checkpoint
from .train import Sample, TrainConfig, evaluate, train_run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class Opt:
    """One flag: name, default, and everything argparse needs."""

    flag: str
    default: object = None
    required: bool = False
    type: object = str
    choices: tuple | None = None
    is_flag: bool = False
    help: str = ""

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


_COMMON = [
    Opt("--seed", 0, type=int, help="seed for the subcommand's random generator"),
    Opt("--threads", 1, type=int, help="worker threads; 1 gives bit-reproducible output"),
    Opt("--config", "", help="TOML or JSON file preloading any flag of this subcommand"),
]

_MIX_OPTS = [
    Opt("--snr-min", 0.0, type=float, help="lower bound of the sampled SNR in dB"),
    Opt("--snr-max", 10.0, type=float, help="upper bound of the sampled SNR in dB"),
    Opt("--mix-frac-min", 0.1, type=float, help="minimum mixed-segment fraction of the base clip"),
    Opt("--mix-frac-max", 0.5, type=float, help="maximum mixed-segment fraction of the base clip"),
]

_FOLD_OPTS = [
    Opt("--folds", 5, type=int, help="number of cross-validation folds"),
    Opt("--group-key", "session", choices=("session", "speaker"), help="grouping field kept fold-disjoint"),
    Opt("--fold-seed", 0, type=int, help="seed for fold construction, independent of --seed"),
]

OPTIONS: dict[str, list[Opt]] = {
    "augment": [
        Opt("--manifest", required=True, help="JSON-lines manifest with audio_path entries"),
        Opt("--out-dir", required=True, help="directory receiving mixed WAVs and sidecar JSON"),
        *_MIX_OPTS,
        Opt("--mixup", "eam", choices=("eam", "lam"), help="energy-adaptive or length-only mixing"),
        Opt("--pairs", 100, type=int, help="number of mixed pairs to draw"),
        Opt("--classes", "", help="comma-separated class list; inferred from the manifest when empty"),
        *_COMMON,
    ],
    "train": [
        Opt("--manifest", required=True, help="JSON-lines manifest with feature_path entries"),
        Opt("--out", required=True, help="checkpoint output path"),
        Opt("--log", "", help="JSON-lines training log path; <out>.log.jsonl when empty"),
        Opt("--classes", required=True, help="comma-separated class list, order fixes class indices"),
        Opt("--fold", 0, type=int, help="held-out fold evaluated during training"),
        *_FOLD_OPTS,
        Opt("--epochs", 30, type=int, help="training epochs"),
        Opt("--batch-size", 16, type=int, help="sequences per optimization step"),
        Opt("--model-lr", 1e-4, type=float, help="initial Adam learning rate for the model"),
        Opt("--center-lr", 5e-3, type=float, help="initial learning rate for class centers"),
        Opt("--decay", 0.875, type=float, help="per-epoch learning-rate decay factor"),
        Opt("--decay-until", 20, type=int, help="epoch after which the rate stays constant"),
        Opt("--aggregation", "flam", choices=("flam", "maxpool", "meanpool"), help="frame aggregation"),
        Opt("--heads", 16, type=int, help="attention heads; must divide the feature dimension"),
        Opt("--proj-dim", 64, type=int, help="projection dimension for centers and contrastive frames"),
        Opt("--gamma", 2.0, type=float, help="focal focusing exponent; 0 recovers cross-entropy"),
        Opt("--tau", 0.07, type=float, help="contrastive temperature"),
        Opt("--lambda1", 1.0, type=float, help="weight of the KL term"),
        Opt("--lambda2", 1.0, type=float, help="weight of the focal term"),
        Opt("--lambda3", 0.1, type=float, help="weight of the center term"),
        Opt("--lambda4", 0.1, type=float, help="weight of the contrastive term"),
        Opt("--no-cb", False, is_flag=True, help="disable context broadcast on contrastive frames"),
        Opt("--share-projection", False, is_flag=True, help="use one projection for centers and frames"),
        Opt("--pool-softmax", False, is_flag=True, help="normalize frame-attention weights with softmax"),
        Opt("--no-normalize", False, is_flag=True, help="skip L2 normalization in the contrastive loss"),
        Opt("--mixup", "eam", choices=("eam", "lam", "none"), help="augmentation recorded with the run"),
        *_MIX_OPTS,
        *_COMMON,
    ],
    "evaluate": [
        Opt("--checkpoint", required=True, help="checkpoint written by train"),
        Opt("--manifest", required=True, help="JSON-lines manifest with feature_path entries"),
        Opt("--classes", required=True, help="comma-separated class list matching the training run"),
        Opt("--fold", -1, type=int, help="fold to evaluate on; -1 evaluates the whole manifest"),
        *_FOLD_OPTS,
        *_COMMON,
    ],
    "gradcheck": [
        Opt("--sizes", "6,32,16", help="T,D,H sizes for the checked kernels"),
        Opt("--batch", 3, type=int, help="sequences in the composite-model check"),
        Opt("--step", 1e-5, type=float, help="finite-difference step"),
        Opt("--tol", 1e-4, type=float, help="maximum allowed relative gradient error"),
        *_COMMON,
    ],
    "dump-embeddings": [
        Opt("--checkpoint", required=True, help="checkpoint written by train"),
        Opt("--manifest", required=True, help="JSON-lines manifest with feature_path entries"),
        Opt("--out", required=True, help="CSV output path"),
        Opt("--classes", "", help="comma-separated class list for label validation; optional"),
        Opt("--fold", -1, type=int, help="fold labeled 'test' in the split column; -1 labels all rows 'all'"),
        *_FOLD_OPTS,
        *_COMMON,
    ],
}

_DESCRIPTIONS = {
    "augment": "mix seeded pairs of clips and write WAVs with soft-label sidecars",
    "train": "train a model on all folds but one and write checkpoint plus log",
    "evaluate": "print WA/UA and the confusion matrix of a checkpoint as JSON",
    "gradcheck": "compare analytic gradients of every kernel against finite differences",
    "dump-embeddings": "write projected utterance embeddings as CSV",
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="sermix", description="energy-adaptive mixup toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=_DESCRIPTIONS[name], description=_DESCRIPTIONS[name])
        for o in opts:
            text = f"{o.help} (default: {o.default})" if not o.required else f"{o.help} (required)"
            if o.is_flag:
                p.add_argument(o.flag, action="store_true", default=argparse.SUPPRESS, help=text)
            else:
                p.add_argument(
                    o.flag,
                    default=argparse.SUPPRESS,
                    type=o.type,
                    choices=o.choices,
                    help=text,
                )
    return parser


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    data = p.read_bytes()
    if p.suffix.lower() == ".json":
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: invalid JSON ({exc.msg})") from exc
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            obj = tomllib.loads(data.decode("utf-8"))
        except Exception as exc:
            raise UsageError(f"config {path}: invalid TOML ({exc})") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config {path}: top level must be a table/object")
    return obj


def _coerce(opt: Opt, value):
    if opt.is_flag:
        if not isinstance(value, bool):
            raise UsageError(f"config key {opt.dest!r} must be a boolean")
        return value
    if isinstance(opt.default, float) or (opt.required and opt.type is float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise UsageError(f"config key {opt.dest!r} must be a number")
        return float(value)
    if opt.type is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise UsageError(f"config key {opt.dest!r} must be an integer")
        return value
    if not isinstance(value, str):
        raise UsageError(f"config key {opt.dest!r} must be a string")
    if opt.choices and value not in opt.choices:
        raise UsageError(f"config key {opt.dest!r} must be one of {opt.choices}")
    return value


def parse_args(argv: list[str]) -> SimpleNamespace:
    """Parse argv into a fully merged namespace.

    Precedence: built-in defaults, then the --config file, then flags
    given explicitly on the command line.
    """
    parsed = vars(_build_parser().parse_args(argv))
    sub = parsed.pop("subcommand")
    opts = {o.dest: o for o in OPTIONS[sub]}

    merged = {o.dest: o.default for o in OPTIONS[sub]}
    config_path = parsed.get("config", "")
    if config_path:
        for key, value in sorted(_load_config_file(config_path).items()):
            dest = key.replace("-", "_")
            if dest not in opts or dest == "config":
                raise UsageError(f"config {config_path}: unknown key {key!r}")
            merged[dest] = _coerce(opts[dest], value)
    merged.update(parsed)

    for o in OPTIONS[sub]:
        if o.required and not merged.get(o.dest):
            raise UsageError(f"sermix {sub}: missing required flag {o.flag}")
    merged["subcommand"] = sub
    return SimpleNamespace(**merged)


def _parse_classes(raw: str) -> list[str]:
    out = [c.strip() for c in raw.split(",") if c.strip()]
    if len(set(out)) != len(out):
        raise UsageError(f"duplicate class names in {raw!r}")
    return out


def _class_index(classes: list[str]) -> dict[str, int]:
    return {c: i for i, c in enumerate(classes)}


def _load_samples(entries: list[ManifestEntry], classes: list[str]) -> list[Sample]:
    index = _class_index(classes)
    samples = []
    dim = None
    for e in entries:
        if not e.feature_path:
            raise SermixError(f"entry {e.id!r} has no feature_path")
        feats = read_features(e.feature_path)
        if dim is None:
            dim = feats.shape[1]
        elif feats.shape[1] != dim:
            raise ShapeMismatch(
                f"entry {e.id!r} has feature dim {feats.shape[1]}, expected {dim}"
            )
        samples.append(
            Sample(
                id=e.id,
                features=feats,
                label=SoftLabel.one_hot(index[e.label], len(classes)),
                speaker=e.speaker,
                session=e.session,
            )
        )
    return samples


# --- augment ---

def cmd_augment(ns: SimpleNamespace) -> int:
    classes = _parse_classes(ns.classes)
    entries = read_manifest(ns.manifest, classes or None)
    if not classes:
        classes = sorted({e.label for e in entries})
    index = _class_index(classes)
    for e in entries:
        if not e.audio_path:
            raise SermixError(f"entry {e.id!r} has no audio_path")
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = MixConfig(
        snr_db_min=ns.snr_min,
        snr_db_max=ns.snr_max,
        mix_frac_min=ns.mix_frac_min,
        mix_frac_max=ns.mix_frac_max,
        rng_seed=ns.seed,
    )
    mixer = energy_adaptive_mix if ns.mixup == "eam" else length_adaptive_mix

    # Pairs stay within one session/speaker group, so any group-disjoint
    # fold plan keeps each mix inside a single fold.
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(entries):
        groups.setdefault(e.group("session"), []).append(i)

    rng = np.random.default_rng(ns.seed)
    plan = []
    for k in range(ns.pairs):
        if not entries:
            raise SermixError("manifest is empty, cannot sample pairs")
        i = int(rng.integers(len(entries)))
        peers = [g for g in groups[entries[i].group("session")] if g != i]
        j = peers[int(rng.integers(len(peers)))] if peers else i
        pair_seed = int(rng.integers(2**63))
        plan.append((k, i, j, pair_seed))

    def mix_pair(item):
        k, i, j, pair_seed = item
        e_i, e_j = entries[i], entries[j]
        w_i = load_wav(e_i.audio_path)
        w_j = load_wav(e_j.audio_path)
        prng = np.random.default_rng(pair_seed)
        try:
            result = mixer(w_i, index[e_i.label], w_j, index[e_j.label], len(classes), cfg, prng)
        except SilentSegment as exc:
            return k, e_i.id, e_j.id, None, str(exc)
        return k, e_i.id, e_j.id, result, None

    if ns.threads > 1:
        with ThreadPoolExecutor(max_workers=ns.threads) as pool:
            outcomes = list(pool.map(mix_pair, plan))
    else:
        outcomes = [mix_pair(item) for item in plan]

    written = 0
    skips = []
    for k, id_i, id_j, result, reason in outcomes:
        if result is None:
            skips.append({"pair": k, "base": id_i, "incoming": id_j, "reason": reason})
            continue
        stem = out_dir / f"mix{k:05d}"
        save_wav(result.mixed, f"{stem}.wav", encoding="float32")
        sidecar = {
            "label": [float(v) for v in result.label.probs],
            "l_mix": result.params.l_mix,
            "start_i": result.params.start_i,
            "start_j": result.params.start_j,
            "snr_db": result.params.snr_db,
            "scale": result.params.scale,
            "classes": classes,
        }
        with open(f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written += 1
    print(json.dumps({"pairs": ns.pairs, "written": written, "skipped": len(skips), "skips": skips}))
    return EXIT_OK


# --- train ---

def _split_by_fold(entries, ns):
    plan = make_folds(entries, ns.folds, ns.group_key, ns.fold_seed)
    return plan, plan.split(entries, ns.fold)


def cmd_train(ns: SimpleNamespace) -> int:
    classes = _parse_classes(ns.classes)
    if len(classes) < 2:
        raise UsageError("need at least 2 classes")
    entries = read_manifest(ns.manifest, classes)
    plan, (train_e, test_e) = _split_by_fold(entries, ns)
    train_set = _load_samples(train_e, classes)
    test_set = _load_samples(test_e, classes)
    if not train_set:
        raise SermixError(f"fold {ns.fold} leaves no training data")
    dim = train_set[0].features.shape[1]
    if test_set and test_set[0].features.shape[1] != dim:
        raise ShapeMismatch("train and eval feature dimensions differ")

    lcfg = LossConfig(
        gamma=ns.gamma,
        tau=ns.tau,
        lambdas=(ns.lambda1, ns.lambda2, ns.lambda3, ns.lambda4),
        proj_dim=ns.proj_dim,
        cb_enabled=not ns.no_cb,
        normalize_embeddings=not ns.no_normalize,
    )
    mcfg = ModelConfig(
        dim=dim,
        n_classes=len(classes),
        n_heads=ns.heads,
        proj_dim=ns.proj_dim,
        aggregation=ns.aggregation,
        cb_enabled=not ns.no_cb,
        share_projection=ns.share_projection,
        pool_softmax=ns.pool_softmax,
    )
    tcfg = TrainConfig(
        model_lr=ns.model_lr,
        center_lr=ns.center_lr,
        decay=ns.decay,
        decay_until_epoch=ns.decay_until,
        batch_size=ns.batch_size,
        epochs=ns.epochs,
        seed=ns.seed,
        loss=lcfg,
        mix=MixConfig(ns.snr_min, ns.snr_max, ns.mix_frac_min, ns.mix_frac_max, ns.seed),
        aggregation=ns.aggregation,
        mixup=ns.mixup,
    )

    rng = np.random.default_rng(ns.seed)
    params = init_params(mcfg, rng)
    records = train_run(train_set, test_set, params, mcfg, tcfg, rng)

    save_checkpoint(ns.out, params, mcfg)
    log_path = ns.log or f"{ns.out}.log.jsonl"
    header = {
        "event": "config",
        "classes": classes,
        "dim": dim,
        "fold": ns.fold,
        "folds": ns.folds,
        "group_key": ns.group_key,
        "aggregation": ns.aggregation,
        "mixup": ns.mixup,
        "lambdas": list(lcfg.lambdas),
        "gamma": lcfg.gamma,
        "tau": lcfg.tau,
        "proj_dim": ns.proj_dim,
        "heads": ns.heads,
        "batch_size": ns.batch_size,
        "epochs": ns.epochs,
        "model_lr": ns.model_lr,
        "center_lr": ns.center_lr,
        "seed": ns.seed,
        "n_train": len(train_set),
        "n_eval": len(test_set),
    }
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps({"event": "epoch", **rec}, sort_keys=True) + "\n")

    final = evaluate(test_set, params, mcfg) if test_set else None
    print(
        json.dumps(
            {
                "checkpoint": str(ns.out),
                "log": str(log_path),
                "epochs": len(records),
                "wa": final.wa if final else None,
                "ua": final.ua if final else None,
            }
        )
    )
    return EXIT_OK


# --- evaluate ---

def cmd_evaluate(ns: SimpleNamespace) -> int:
    classes = _parse_classes(ns.classes)
    params, mcfg = load_checkpoint(ns.checkpoint)
    if mcfg.n_classes != len(classes):
        raise ShapeMismatch(
            f"checkpoint has {mcfg.n_classes} classes, --classes lists {len(classes)}"
        )
    entries = read_manifest(ns.manifest, classes)
    if ns.fold >= 0:
        plan = make_folds(entries, ns.folds, ns.group_key, ns.fold_seed)
        entries = [e for e in entries if plan.fold_of(e) == ns.fold]
        if not entries:
            raise SermixError(f"fold {ns.fold} holds no entries")
    dataset = _load_samples(entries, classes)
    if dataset and dataset[0].features.shape[1] != mcfg.dim:
        raise ShapeMismatch(
            f"features have dim {dataset[0].features.shape[1]}, checkpoint expects {mcfg.dim}"
        )
    result = evaluate(dataset, params, mcfg)
    print(
        json.dumps(
            {
                "wa": result.wa,
                "ua": result.ua,
                "n": len(dataset),
                "classes": classes,
                "confusion": result.confusion.tolist(),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


# --- gradcheck ---

def cmd_gradcheck(ns: SimpleNamespace) -> int:
    try:
        t, d, heads = (int(v) for v in ns.sizes.split(","))
    except ValueError as exc:
        raise UsageError(f"--sizes must be T,D,H integers, got {ns.sizes!r}") from exc
    if t < 1 or d < 1 or heads < 1 or d % heads:
        raise UsageError(f"invalid sizes T={t} D={d} H={heads}; H must divide D")
    reports = checks.run_all(
        t=t, d=d, heads=heads, b=ns.batch, seed=ns.seed, h=ns.step, tol=ns.tol, threads=ns.threads
    )
    ok = all(rep.ok for rep in reports.values())
    print(
        json.dumps(
            {
                "sizes": {"T": t, "D": d, "H": heads, "B": ns.batch},
                "h": ns.step,
                "tol": ns.tol,
                "kernels": {
                    name: {
                        "max_rel_error": float(rep.max_rel_error),
                        "worst_param": rep.worst_param,
                        "ok": bool(rep.ok),
                    }
                    for name, rep in reports.items()
                },
                "ok": bool(ok),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK if ok else EXIT_NUMERIC


# --- dump-embeddings ---

def cmd_dump_embeddings(ns: SimpleNamespace) -> int:
    params, mcfg = load_checkpoint(ns.checkpoint)
    classes = _parse_classes(ns.classes)
    entries = read_manifest(ns.manifest, classes or None)
    splits = {}
    if ns.fold >= 0:
        plan = make_folds(entries, ns.folds, ns.group_key, ns.fold_seed)
        splits = {e.id: ("test" if plan.fold_of(e) == ns.fold else "train") for e in entries}
    rows = []
    dim = None
    for e in entries:
        if not e.feature_path:
            raise SermixError(f"entry {e.id!r} has no feature_path")
        feats = read_features(e.feature_path)
        if dim is None:
            dim = feats.shape[1]
            if dim != mcfg.dim:
                raise ShapeMismatch(f"features have dim {dim}, checkpoint expects {mcfg.dim}")
        fwd = forward_pass(feats, params, mcfg)
        rows.append((e.id, e.label, splits.get(e.id, "all"), fwd.f_low))
    if not rows:
        raise SermixError("manifest holds no entries")
    dump_embeddings(ns.out, rows)
    print(json.dumps({"out": str(ns.out), "rows": len(rows), "dim": int(len(rows[0][3]))}))
    return EXIT_OK


_DISPATCH = {
    "augment": cmd_augment,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "dump-embeddings": cmd_dump_embeddings,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        ns = parse_args(argv)
        return _DISPATCH[ns.subcommand](ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SermixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
