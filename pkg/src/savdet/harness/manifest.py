"""Dataset manifest: CSV listing videos, splits, labels, and artifact paths."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from ..errors import ManifestError
from . import formats

COLUMNS = ("video_id", "split", "label", "manipulation", "frames_dir",
           "landmarks", "audio_features", "visual_features")
SPLITS = ("train", "eval")
LABELS = ("real", "fake")


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    split: str
    label: str
    manipulation: str
    frames_dir: Path | None
    landmarks: Path | None
    audio_features: Path | None
    visual_features: Path | None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[VideoRecord, ...]
    root: Path

    def split(self, name: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == name]


def ingest(manifest_path) -> DatasetManifest:
    """Load and validate a manifest CSV; every violation is reported at once.

    Invariants: unique video ids, train split only real-labeled records,
    referenced paths exist, FSEQ files carry the right magic.
    """
    path = Path(manifest_path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent

    errors: list[str] = []
    records: list[VideoRecord] = []
    seen_ids: set[str] = set()

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
            raise ManifestError(
                f"{path}: header must be {','.join(COLUMNS)}, got {reader.fieldnames}")
        for ln, row in enumerate(reader, start=2):
            vid = row["video_id"].strip()
            if not vid:
                errors.append(f"line {ln}: empty video_id")
                continue
            if vid in seen_ids:
                errors.append(f"line {ln}: duplicate video_id {vid!r}")
            seen_ids.add(vid)
            split, label = row["split"].strip(), row["label"].strip()
            if split not in SPLITS:
                errors.append(f"line {ln} ({vid}): bad split {split!r}")
            if label not in LABELS:
                errors.append(f"line {ln} ({vid}): bad label {label!r}")
            if split == "train" and label == "fake":
                errors.append(f"line {ln} ({vid}): train split must contain only "
                              f"real-labeled records")

            paths = {}
            for col in ("frames_dir", "landmarks", "audio_features",
                        "visual_features"):
                raw = row[col].strip()
                if not raw:
                    paths[col] = None
                    continue
                p = Path(raw)
                if not p.is_absolute():
                    p = root / p
                if not p.exists():
                    errors.append(f"line {ln} ({vid}): missing {col} path {p}")
                    paths[col] = None
                    continue
                paths[col] = p

            for col in ("audio_features", "visual_features"):
                p = paths[col]
                if p is not None:
                    try:
                        formats.read_fseq(p)
                    except ManifestError as exc:
                        errors.append(f"line {ln} ({vid}): {exc}")

            records.append(VideoRecord(video_id=vid, split=split, label=label,
                                       manipulation=row["manipulation"].strip(),
                                       **paths))

    if errors:
        raise ManifestError("manifest validation failed:\n  " + "\n  ".join(errors))
    return DatasetManifest(records=tuple(records), root=root)


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in COLUMNS})
