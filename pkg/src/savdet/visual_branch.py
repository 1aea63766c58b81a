"""Region-specific real-vs-pseudo-fake classifiers.

All branches share one encoder architecture and differ only in which region
mask was used to build their training pairs. Networks are small enough that
every analytic gradient can be verified by central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from . import nn
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .masks import LandmarkSet, RegionTag
from .pseudo_forgery import PairConfig, make_pair, validate_image

LOGIT_CLIP = 30.0
PROB_CLIP = 1e-7
PATCH_GRID = 4  # patch_stats cells per side

ENCODER_KINDS = ("tiny_conv", "patch_stats")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "tiny_conv"
    input_size: int = 128
    feature_dim: int = 128
    channels: tuple[int, ...] | None = None  # tiny_conv block widths
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.feature_dim < 8:
            raise ConfigError("feature_dim must be >= 8")
        if self.input_size < PATCH_GRID or self.input_size % PATCH_GRID:
            raise ConfigError(f"input_size must be a multiple of {PATCH_GRID}")

    @property
    def conv_channels(self) -> tuple[int, ...]:
        if self.channels is not None:
            if len(self.channels) != 4:
                raise ConfigError("tiny_conv needs exactly 4 channel widths")
            return self.channels
        d = self.feature_dim
        return (max(4, d // 8), max(4, d // 4), max(4, d // 2), d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 500
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.steps < 0:
            raise ConfigError("learning_rate/batch_size must be positive, steps >= 0")


@dataclass
class BranchModel:
    region: RegionTag
    spec: EncoderSpec
    params: dict[str, np.ndarray] = field(repr=False)
    meta: dict = field(default_factory=dict)

    def copy(self) -> "BranchModel":
        return BranchModel(self.region, self.spec,
                           {k: v.copy() for k, v in self.params.items()},
                           dict(self.meta))


def init_params(spec: EncoderSpec, image_channels: int = 3) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    if spec.kind == "tiny_conv":
        c_in = image_channels
        for i, c_out in enumerate(spec.conv_channels):
            fan_in = c_in * 9
            params[f"conv{i}_w"] = nn.he_init(rng, (c_out, c_in, 3, 3), fan_in)
            params[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        feat_dim = spec.conv_channels[-1]
    else:  # patch_stats
        g = PATCH_GRID * PATCH_GRID * 2 * image_channels
        params["proj_w"] = nn.he_init(rng, (spec.feature_dim, g), g)
        params["proj_b"] = np.zeros(spec.feature_dim)
        feat_dim = spec.feature_dim
    params["cls_w"] = nn.he_init(rng, (1, feat_dim), feat_dim)
    params["cls_b"] = np.zeros(1)
    return params


def new_model(region: RegionTag, spec: EncoderSpec,
              image_channels: int = 3) -> BranchModel:
    return BranchModel(region=region, spec=spec,
                       params=init_params(spec, image_channels))


# ---------------------------------------------------------------------------
# forward / backward

def _patch_stats_features(x: np.ndarray) -> np.ndarray:
    """x (N, C, S, S) -> (N, grid*grid*2*C): per-cell mean and std."""
    n, c, s, _ = x.shape
    cell = s // PATCH_GRID
    cells = x.reshape(n, c, PATCH_GRID, cell, PATCH_GRID, cell)
    mean = cells.mean(axis=(3, 5))
    std = cells.std(axis=(3, 5))
    return np.concatenate([mean.reshape(n, -1), std.reshape(n, -1)], axis=1)


def _encode_batch(x: np.ndarray, model: BranchModel):
    """x (N, C, S, S) -> features (N, D) plus cache for backward."""
    p = model.params
    caches = []
    if model.spec.kind == "tiny_conv":
        h = x
        for i in range(4):
            out, cache = nn.conv2d_forward(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
            caches.append((cache, out))
            h = nn.relu_forward(out)
        feat = h.mean(axis=(2, 3))
        caches.append(h.shape)
    else:
        base = _patch_stats_features(x)
        feat = nn.linear_forward(base, p["proj_w"], p["proj_b"])
        caches.append(base)
    if not np.all(np.isfinite(feat)):
        raise NumericalError("non-finite encoder output")
    return feat, caches


def _encoder_backward(dfeat: np.ndarray, caches, model: BranchModel,
                      grads: dict[str, np.ndarray]):
    p = model.params
    if model.spec.kind == "tiny_conv":
        h_shape = caches[-1]
        n, c, oh, ow = h_shape
        dh = np.broadcast_to(dfeat[:, :, None, None] / (oh * ow), h_shape).copy()
        for i in range(3, -1, -1):
            cache, pre = caches[i]
            dpre = nn.relu_backward(pre, dh)
            dh, dw, db = nn.conv2d_backward(cache, p[f"conv{i}_w"], dpre)
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
    else:
        base = caches[0]
        _, dw, db = nn.linear_backward(base, p["proj_w"], dfeat)
        grads["proj_w"] = dw
        grads["proj_b"] = db


def forward_batch(model: BranchModel, x: np.ndarray):
    """Images (N, C, S, S) -> probabilities (N,) with full cache."""
    feat, caches = _encode_batch(x, model)
    logit = nn.linear_forward(feat, model.params["cls_w"], model.params["cls_b"])[:, 0]
    clipped = np.clip(logit, -LOGIT_CLIP, LOGIT_CLIP)
    probs = nn.sigmoid(clipped)
    return probs, (feat, caches, logit)


def backward_batch(model: BranchModel, cache, probs: np.ndarray,
                   labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of mean BCE over the batch w.r.t. all parameters."""
    feat, caches, logit = cache
    n = probs.shape[0]
    p = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    dlogit = (p - labels) / n
    # clipping regions carry zero gradient
    dlogit = dlogit * (np.abs(logit) < LOGIT_CLIP)
    dlogit = dlogit * ((probs > PROB_CLIP) & (probs < 1.0 - PROB_CLIP))
    grads: dict[str, np.ndarray] = {}
    dfeat, dw, db = nn.linear_backward(feat, model.params["cls_w"], dlogit[:, None])
    grads["cls_w"] = dw
    grads["cls_b"] = db
    _encoder_backward(dfeat, caches, model, grads)
    return grads


# ---------------------------------------------------------------------------
# public single-sample API

def _to_nchw(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return np.transpose(img, (2, 0, 1))[None]


def prepare_input(image: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    """Resize an HxWxC image in [0,1] to the encoder's square input size."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 3 and img.shape[2] == 1
    if squeeze:
        img = img[..., 0]
    if img.shape[:2] != (spec.input_size, spec.input_size):
        img = cv2.resize(img.astype(np.float32),
                         (spec.input_size, spec.input_size),
                         interpolation=cv2.INTER_LINEAR).astype(np.float64)
    img = np.clip(img, 0.0, 1.0)
    if squeeze:
        img = img[..., None]
    return img


def crop_face(image: np.ndarray, landmarks: LandmarkSet,
              margin: float = 0.1) -> np.ndarray:
    """Crop to the bounding box of all 68 landmarks, expanded by `margin`."""
    img = np.asarray(image, dtype=np.float64)
    pts = landmarks.points
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    mx = (x1 - x0) * margin
    my = (y1 - y0) * margin
    xa = max(0, int(np.floor(x0 - mx)))
    ya = max(0, int(np.floor(y0 - my)))
    xb = min(img.shape[1], int(np.ceil(x1 + mx)) + 1)
    yb = min(img.shape[0], int(np.ceil(y1 + my)) + 1)
    return img[ya:yb, xa:xb]


def encode(image: np.ndarray, model: BranchModel) -> np.ndarray:
    """Single image (already sized to spec.input_size) -> feature vector."""
    feat, _ = _encode_batch(_to_nchw(image), model)
    return feat[0]


def classify(feature: np.ndarray, model: BranchModel) -> float:
    """P(pseudo-fake) via sigmoid of the clipped affine score."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.params["cls_w"].shape[1],):
        raise ShapeError(f"feature length {f.shape} does not match classifier")
    logit = float(model.params["cls_w"][0] @ f + model.params["cls_b"][0])
    logit = float(np.clip(logit, -LOGIT_CLIP, LOGIT_CLIP))
    return float(nn.sigmoid(np.array(logit)))


def score_image(image: np.ndarray, model: BranchModel) -> float:
    return classify(encode(prepare_input(image, model.spec), model), model)


def bce_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probabilities {p.shape} vs labels {y.shape}")
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def frame_sample_indices(total: int, max_frames: int = 8) -> list[int]:
    """Uniform frame sampling: k = min(max_frames, T), indices floor(i*T/k)."""
    if total < 1:
        raise DataError("no frames to sample")
    k = min(max_frames, total)
    return [i * total // k for i in range(k)]


def score_video(frames, model: BranchModel,
                landmarks: list[LandmarkSet] | None = None,
                max_frames: int = 8) -> float:
    """Mean P(fake) over up to `max_frames` uniformly sampled frames."""
    frames = list(frames)
    idx = frame_sample_indices(len(frames), max_frames)
    probs = []
    for i in idx:
        img = frames[i]
        if landmarks is not None:
            img = crop_face(img, landmarks[i])
        probs.append(score_image(img, model))
    return float(np.mean(probs))


# ---------------------------------------------------------------------------
# training

def train_branch(stream, region: RegionTag, encoder_spec: EncoderSpec,
                 train_config: TrainConfig,
                 pair_config: PairConfig | None = None) -> BranchModel:
    """Train one region branch on (frame, landmarks) pairs from real data only.

    Each step samples frames, builds blend pairs on the fly, and takes one SGD
    step on mean BCE with labels real_view -> 0, fake_view -> 1. Deterministic
    in (data order, config, seed).
    """
    pair_config = pair_config or PairConfig()
    data = list(stream)
    if not data:
        raise DataError("empty training stream")
    first_img = validate_image(data[0][0])
    channels = 1 if first_img.ndim == 2 or first_img.shape[2] == 1 else 3

    model = new_model(region, encoder_spec, channels)
    model.meta.update({"region": region.value, "steps": train_config.steps,
                       "seed": train_config.seed})
    if train_config.steps == 0:
        return model

    opt = nn.SGD(train_config.learning_rate, train_config.momentum)
    rng = np.random.default_rng(train_config.seed)
    final_loss = None
    for step in range(train_config.steps):
        idx = rng.integers(0, len(data), size=train_config.batch_size)
        xs, ys = [], []
        for j, di in enumerate(idx):
            frame, lms = data[di]
            pair_seed = int(np.random.SeedSequence(
                [train_config.seed & 0xFFFFFFFFFFFFFFFF, step, j]).generate_state(1)[0])
            try:
                pair = make_pair(frame, lms, region, pair_seed, pair_config)
            except Exception:
                continue
            if pair.degenerate_pair:
                continue
            for view, label in ((pair.real_view, 0.0), (pair.fake_view, 1.0)):
                cropped = crop_face(view, lms)
                xs.append(_to_nchw(prepare_input(cropped, encoder_spec))[0])
                ys.append(label)
        if not xs:
            continue
        x = np.stack(xs)
        y = np.asarray(ys)
        probs, cache = forward_batch(model, x)
        final_loss = bce_loss(probs, y)
        grads = backward_batch(model, cache, probs, y)
        opt.step(model.params, grads)

    if final_loss is None:
        raise DataError("no valid (non-degenerate) training pairs were produced")
    model.meta["final_loss"] = final_loss
    return model


# ---------------------------------------------------------------------------
# gradient verification

def _loss_and_grads(model: BranchModel, x: np.ndarray, labels: np.ndarray):
    probs, cache = forward_batch(model, x)
    loss = bce_loss(probs, labels)
    grads = backward_batch(model, cache, probs, labels)
    return loss, grads


def _activation_pattern(model: BranchModel, x: np.ndarray) -> bytes:
    """Sign pattern of every rectifier / clip in the forward pass."""
    bits = []
    p = model.params
    if model.spec.kind == "tiny_conv":
        h = x
        for i in range(4):
            out, _ = nn.conv2d_forward(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
            bits.append((out > 0.0).tobytes())
            h = nn.relu_forward(out)
        feat = h.mean(axis=(2, 3))
    else:
        feat = nn.linear_forward(_patch_stats_features(x), p["proj_w"], p["proj_b"])
    logit = nn.linear_forward(feat, p["cls_w"], p["cls_b"])[:, 0]
    bits.append((np.abs(logit) < LOGIT_CLIP).tobytes())
    probs = nn.sigmoid(np.clip(logit, -LOGIT_CLIP, LOGIT_CLIP))
    bits.append(((probs > PROB_CLIP) & (probs < 1.0 - PROB_CLIP)).tobytes())
    return b"".join(bits)


def gradcheck(model: BranchModel, batch_x: np.ndarray, labels: np.ndarray,
              step: float = 1e-4) -> float:
    """Max relative error between analytic and central-FD gradients of the
    full bce(classify(encode(.))) composite, over all parameters."""
    _, grads = _loss_and_grads(model, batch_x, labels)

    def loss_fn():
        probs, _ = forward_batch(model, batch_x)
        return bce_loss(probs, labels)

    def pattern_fn():
        return _activation_pattern(model, batch_x)

    return nn.fd_gradcheck(model.params, grads, loss_fn, step, pattern_fn)
