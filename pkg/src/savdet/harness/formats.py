"""On-disk formats: FSEQ feature files, SAVB checkpoints, landmark text files,
numbered PNG frame directories, score CSVs. Byte layouts are documented in
docs/formats.md.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..avsync import AlignmentScorer, FeatureSequence, ScorerSpec, init_scorer
from ..errors import ManifestError, ShapeError
from ..masks import LandmarkSet, RegionTag
from ..visual_branch import BranchModel, EncoderSpec

FSEQ_MAGIC = b"FSEQ"
SAVB_MAGIC = b"SAVB"
_MODALITY_CODE = {"audio": 0, "visual": 1}
_MODALITY_NAME = {v: k for k, v in _MODALITY_CODE.items()}
_REGION_CODE = {RegionTag.FACE: 0, RegionTag.LIP: 1, RegionTag.LOWER_FACE: 2}
_REGION_NAME = {v: k for k, v in _REGION_CODE.items()}
_KIND_VISUAL = 0
_KIND_SCORER = 1


# ---------------------------------------------------------------------------
# FSEQ

def write_fseq(path, seq: FeatureSequence) -> None:
    t, d = seq.values.shape
    with open(path, "wb") as fh:
        fh.write(FSEQ_MAGIC)
        fh.write(struct.pack("<HBIIf", 1, _MODALITY_CODE[seq.modality], t, d,
                             seq.frame_rate))
        fh.write(seq.values.astype("<f4").tobytes())


def read_fseq(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != FSEQ_MAGIC:
        raise ManifestError(f"{path}: bad FSEQ magic at byte offset 0 "
                            f"(got {raw[:4]!r})")
    version, modality, t, d, rate = struct.unpack_from("<HBIIf", raw, 4)
    if version != 1:
        raise ManifestError(f"{path}: unsupported FSEQ version {version}")
    if modality not in _MODALITY_NAME:
        raise ManifestError(f"{path}: unknown modality code {modality}")
    need = 4 + struct.calcsize("<HBIIf") + 4 * t * d
    if len(raw) < need:
        raise ManifestError(f"{path}: truncated payload ({len(raw)} < {need} bytes)")
    vals = np.frombuffer(raw, dtype="<f4", count=t * d,
                         offset=4 + struct.calcsize("<HBIIf"))
    return FeatureSequence(_MODALITY_NAME[modality],
                           vals.reshape(t, d).astype(np.float64), float(rate))


# ---------------------------------------------------------------------------
# SAVB checkpoints

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _unpack_str(raw: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", raw, off)
    off += 2
    return raw[off:off + n].decode("utf-8"), off + n


def _pack_tensors(params: dict[str, np.ndarray]) -> bytes:
    names = sorted(params)
    out = [struct.pack("<I", len(names))]
    for name in names:
        arr = params[name]
        out.append(_pack_str(name))
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for name in names:
        out.append(params[name].astype("<f4").tobytes())
    return b"".join(out)


def _unpack_tensors(raw: bytes, off: int) -> dict[str, np.ndarray]:
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    directory = []
    for _ in range(count):
        name, off = _unpack_str(raw, off)
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        directory.append((name, shape))
    params = {}
    for name, shape in directory:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off
                                     ).reshape(shape).astype(np.float64)
        off += 4 * n
    return params


def write_branch_checkpoint(path, model: BranchModel) -> None:
    spec = model.spec
    channels = spec.conv_channels if spec.kind == "tiny_conv" else ()
    head = SAVB_MAGIC + struct.pack("<HBB", 1, _KIND_VISUAL,
                                    _REGION_CODE[model.region])
    head += _pack_str(spec.kind)
    head += struct.pack("<IIq", spec.input_size, spec.feature_dim, spec.seed)
    head += struct.pack("<B", len(channels)) + struct.pack(f"<{len(channels)}I",
                                                           *channels)
    Path(path).write_bytes(head + _pack_tensors(model.params))


def read_branch_checkpoint(path) -> BranchModel:
    raw = Path(path).read_bytes()
    if raw[:4] != SAVB_MAGIC:
        raise ManifestError(f"{path}: bad SAVB magic at byte offset 0")
    version, kind_code, region_code = struct.unpack_from("<HBB", raw, 4)
    if version != 1 or kind_code != _KIND_VISUAL:
        raise ManifestError(f"{path}: not a visual-branch checkpoint")
    off = 8
    kind, off = _unpack_str(raw, off)
    input_size, feature_dim, seed = struct.unpack_from("<IIq", raw, off)
    off += struct.calcsize("<IIq")
    (n_ch,) = struct.unpack_from("<B", raw, off)
    off += 1
    channels = struct.unpack_from(f"<{n_ch}I", raw, off) if n_ch else None
    off += 4 * n_ch
    spec = EncoderSpec(kind=kind, input_size=input_size, feature_dim=feature_dim,
                       channels=tuple(channels) if channels else None, seed=seed)
    params = _unpack_tensors(raw, off)
    return BranchModel(region=_REGION_NAME[region_code], spec=spec, params=params)


def write_scorer_checkpoint(path, model: AlignmentScorer) -> None:
    spec = model.spec
    head = SAVB_MAGIC + struct.pack("<HBB", 1, _KIND_SCORER, 0)
    head += struct.pack("<IIIq", spec.audio_dim, spec.visual_dim, spec.hidden,
                        spec.seed)
    Path(path).write_bytes(head + _pack_tensors(model.params))


def read_scorer_checkpoint(path) -> AlignmentScorer:
    raw = Path(path).read_bytes()
    if raw[:4] != SAVB_MAGIC:
        raise ManifestError(f"{path}: bad SAVB magic at byte offset 0")
    version, kind_code, _ = struct.unpack_from("<HBB", raw, 4)
    if version != 1 or kind_code != _KIND_SCORER:
        raise ManifestError(f"{path}: not an alignment-scorer checkpoint")
    off = 8
    audio_dim, visual_dim, hidden, seed = struct.unpack_from("<IIIq", raw, off)
    off += struct.calcsize("<IIIq")
    spec = ScorerSpec(audio_dim=audio_dim, visual_dim=visual_dim, hidden=hidden,
                      seed=seed)
    model = init_scorer(spec)
    model.params = _unpack_tensors(raw, off)
    return model


# ---------------------------------------------------------------------------
# landmarks: one text record per frame, frame_index then 136 numbers

def write_landmarks(path, landmark_sets: list[LandmarkSet]) -> None:
    with open(path, "w") as fh:
        for idx, lms in enumerate(landmark_sets):
            flat = " ".join(format(v, ".6f") for v in lms.points.reshape(-1))
            fh.write(f"{idx} {flat}\n")


def read_landmarks(path, image_width: int, image_height: int) -> list[LandmarkSet]:
    out = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 137:
            raise ManifestError(f"{path}: expected frame_index + 136 numbers, "
                                f"got {len(parts)} fields")
        pts = np.asarray([float(v) for v in parts[1:]]).reshape(68, 2)
        out.append(LandmarkSet(pts, image_width, image_height))
    return out


# ---------------------------------------------------------------------------
# frames: numbered PNGs in a directory

def write_frames(dir_path, frames: list[np.ndarray]) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        arr = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
        PILImage.fromarray(arr).save(d / f"{i:05d}.png")


def read_frames(dir_path) -> list[np.ndarray]:
    d = Path(dir_path)
    files = sorted(d.glob("*.png"))
    if not files:
        raise ManifestError(f"{d}: no PNG frames found")
    out = []
    for f in files:
        arr = np.asarray(PILImage.open(f), dtype=np.float64) / 255.0
        out.append(arr)
    return out


# ---------------------------------------------------------------------------
# score CSVs (config hash stamped as a leading comment line)

def write_scores_csv(path, rows: list[tuple[str, str, float]],
                     config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        fh.write("video_id,branch,raw_score\n")
        for vid, branch, score in rows:
            fh.write(f"{vid},{branch},{format(score, '.12g')}\n")


def read_scores_csv(path) -> tuple[list[tuple[str, str, float]], str]:
    lines = Path(path).read_text().splitlines()
    config_hash = ""
    if lines and lines[0].startswith("# config_hash:"):
        config_hash = lines[0].split(":", 1)[1].strip()
        lines = lines[1:]
    if not lines or lines[0] != "video_id,branch,raw_score":
        raise ManifestError(f"{path}: missing score CSV header")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        vid, branch, score = line.split(",")
        rows.append((vid, branch, float(score)))
    return rows, config_hash


def write_fused_csv(path, rows, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        fh.write("video_id,p_final,label\n")
        for pred in rows:
            fh.write(f"{pred.video_id},{format(pred.p_final, '.12g')},{pred.label}\n")
