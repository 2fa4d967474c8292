"""Dataset plumbing: manifests, the binary feature format, fold planning,
and embedding export.

Features travel as little-endian binary: magic "EAMF", u32 version (1),
u32 T, u32 D, then T*D float32 values row-major. Manifests are JSON
lines, one utterance per line.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ParseError,
    TooFewGroups,
    TruncatedFile,
    UnknownLabel,
    VersionMismatch,
)

FEATURE_MAGIC = b"EAMF"
FEATURE_VERSION = 1


@dataclass
class ManifestEntry:
    """One utterance: at least one of audio_path / feature_path is set."""

    id: str
    label: str
    audio_path: str = ""
    feature_path: str = ""
    speaker: str = ""
    session: str = ""

    def __post_init__(self):
        if not self.id:
            raise ParseError("manifest entry without an id")
        if not self.audio_path and not self.feature_path:
            raise ParseError(f"entry {self.id!r} has neither audio_path nor feature_path")

    def group(self, group_key: str = "session") -> str:
        """Grouping value for fold construction; falls back to the id so
        entries without metadata still land somewhere."""
        if group_key not in ("session", "speaker"):
            raise ValueError("group_key must be 'session' or 'speaker'")
        return getattr(self, group_key) or self.id


def read_manifest(path: str | Path, classes: list[str] | None = None) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest.

    With ``classes`` given, labels outside the list raise UnknownLabel;
    malformed lines raise ParseError naming the line number.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected an object")
            try:
                entry = ManifestEntry(
                    id=str(obj["id"]),
                    label=str(obj["label"]),
                    audio_path=str(obj.get("audio_path", "") or ""),
                    feature_path=str(obj.get("feature_path", "") or ""),
                    speaker=str(obj.get("speaker", "") or ""),
                    session=str(obj.get("session", "") or ""),
                )
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if classes is not None and entry.label not in classes:
                raise UnknownLabel(f"{path}:{lineno}: label {entry.label!r} not in {classes}")
            entries.append(entry)
    return entries


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write a (T, D) float array in the binary feature format."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"features must be a nonempty (T, D) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    t, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, t, d))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_features(path: str | Path) -> np.ndarray:
    """Read a feature file back as float64 (T, D)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: not a feature file")
    if len(blob) < 16:
        raise TruncatedFile(f"{path}: header cut short")
    version, t, d = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {FEATURE_VERSION}")
    expected = 16 + 4 * t * d
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=t * d, offset=16)
    return data.astype(np.float64).reshape(t, d)


@dataclass
class FoldPlan:
    """Assignment of every utterance id to exactly one fold."""

    n_folds: int
    assignment: dict[str, int] = field(default_factory=dict)  # id -> fold index
    group_key: str = "session"

    def fold_of(self, entry: ManifestEntry) -> int:
        return self.assignment[entry.id]

    def split(
        self, entries: list[ManifestEntry], held_out: int
    ) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
        """(train, test) where the test side is the held-out fold."""
        train = [e for e in entries if self.fold_of(e) != held_out]
        test = [e for e in entries if self.fold_of(e) == held_out]
        return train, test


def make_folds(
    entries: list[ManifestEntry],
    n_folds: int,
    group_key: str = "session",
    seed: int = 0,
) -> FoldPlan:
    """Group-disjoint folds balanced by utterance count.

    All utterances sharing a group value land in the same fold, so no
    session (or speaker) ever spans folds. Groups are shuffled with the
    seed, then assigned largest-first to the currently smallest fold.
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    seen: set[str] = set()
    sizes: dict[str, int] = {}
    for e in entries:
        if e.id in seen:
            raise ParseError(f"duplicate utterance id {e.id!r}")
        seen.add(e.id)
        g = e.group(group_key)
        sizes[g] = sizes.get(g, 0) + 1
    if len(sizes) < n_folds:
        raise TooFewGroups(f"{len(sizes)} groups cannot fill {n_folds} folds")

    rng = np.random.default_rng(seed)
    keys = sorted(sizes)
    rng.shuffle(keys)
    # Stable sort keeps the shuffled order among equal-sized groups.
    keys.sort(key=lambda k: -sizes[k])

    loads = [0] * n_folds
    group_fold: dict[str, int] = {}
    for k in keys:
        fold = min(range(n_folds), key=lambda i: loads[i])
        group_fold[k] = fold
        loads[fold] += sizes[k]
    assignment = {e.id: group_fold[e.group(group_key)] for e in entries}
    return FoldPlan(n_folds=n_folds, assignment=assignment, group_key=group_key)


def dump_embeddings(
    path: str | Path,
    rows: list[tuple[str, str, str, np.ndarray]],
) -> None:
    """Write (id, label, split, embedding) rows as CSV.

    Floats use repr-style shortest formatting so the file round-trips.
    """
    if not rows:
        raise ValueError("no rows to dump")
    p = len(rows[0][3])
    header = ["id", "label", "split"] + [f"e{i}" for i in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for id_, label, split, emb in rows:
            if len(emb) != p:
                raise ValueError(f"row {id_!r} has dim {len(emb)}, expected {p}")
            writer.writerow([id_, label, split] + [f"{v:.9g}" for v in emb])
