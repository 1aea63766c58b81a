"""Audio-visual alignment scoring with a temporal-neighborhood contrastive loss.

A small MLP scores (audio frame, visual frame) pairs. Training maximizes the
softmax probability of the true pairing against visual frames inside a window
of radius w around each audio step. At inference the mean per-frame negative
log posterior is the misalignment score: high means out of sync, i.e. fake.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, ShapeError

MODALITIES = ("audio", "visual")
N_LAYERS = 4


@dataclass(frozen=True)
class FeatureSequence:
    """T x D frame-rate-aligned feature matrix for one modality of one video."""

    modality: str
    values: np.ndarray = field(repr=False)
    frame_rate: float = 25.0

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ShapeError("feature sequence must be a T x D matrix with T >= 1")
        if not np.all(np.isfinite(vals)):
            raise ShapeError("feature values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScorerSpec:
    """Four fully connected layers, layer norm before each activation,
    rectified-linear activations, scalar output."""

    audio_dim: int
    visual_dim: int
    hidden: int = 256
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.audio_dim + self.visual_dim


@dataclass
class AlignmentScorer:
    spec: ScorerSpec
    params: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "AlignmentScorer":
        return AlignmentScorer(self.spec, {k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class SyncConfig:
    window_radius: int = 15
    learning_rate: float = 1e-2
    clips_per_step: int = 8
    steps: int = 200
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.window_radius < 1:
            raise ConfigError("window_radius must be >= 1")
        if self.learning_rate <= 0 or self.clips_per_step <= 0 or self.steps < 0:
            raise ConfigError("invalid training configuration")


@dataclass(frozen=True)
class SyncScore:
    per_frame_nll: np.ndarray = field(repr=False)
    aggregate: float = 0.0


def init_scorer(spec: ScorerSpec) -> AlignmentScorer:
    rng = np.random.default_rng(spec.seed)
    dims = [spec.input_dim, spec.hidden, spec.hidden, spec.hidden, 1]
    params: dict[str, np.ndarray] = {}
    for i in range(N_LAYERS):
        params[f"fc{i}_w"] = nn.he_init(rng, (dims[i + 1], dims[i]), dims[i])
        params[f"fc{i}_b"] = np.zeros(dims[i + 1])
        if i < N_LAYERS - 1:
            params[f"ln{i}_g"] = np.ones(dims[i + 1])
            params[f"ln{i}_b"] = np.zeros(dims[i + 1])
    return AlignmentScorer(spec, params)


# ---------------------------------------------------------------------------
# scorer forward / backward

def scorer_forward(x: np.ndarray, model: AlignmentScorer):
    """x (N, D_a + D_v) -> scores (N,) plus cache."""
    p = model.params
    h = x
    caches = []
    for i in range(N_LAYERS - 1):
        z = nn.linear_forward(h, p[f"fc{i}_w"], p[f"fc{i}_b"])
        ln_out, ln_cache = nn.layernorm_forward(z, p[f"ln{i}_g"], p[f"ln{i}_b"])
        a = nn.relu_forward(ln_out)
        caches.append((h, ln_cache, ln_out))
        h = a
    out = nn.linear_forward(h, p["fc3_w"], p["fc3_b"])[:, 0]
    caches.append(h)
    return out, caches


def scorer_backward(caches, model: AlignmentScorer, dscores: np.ndarray):
    p = model.params
    grads: dict[str, np.ndarray] = {}
    h_last = caches[-1]
    dh, grads["fc3_w"], grads["fc3_b"] = nn.linear_backward(
        h_last, p["fc3_w"], dscores[:, None])
    for i in range(N_LAYERS - 2, -1, -1):
        h_in, ln_cache, ln_out = caches[i]
        dln = nn.relu_backward(ln_out, dh)
        dz, dg, db = nn.layernorm_backward(ln_cache, p[f"ln{i}_g"], dln)
        grads[f"ln{i}_g"] = dg
        grads[f"ln{i}_b"] = db
        dh, dw, dbl = nn.linear_backward(h_in, p[f"fc{i}_w"], dz)
        grads[f"fc{i}_w"] = dw
        grads[f"fc{i}_b"] = dbl
    return grads


def score_pair(a_i: np.ndarray, v_j: np.ndarray, model: AlignmentScorer) -> float:
    a = np.asarray(a_i, dtype=np.float64).reshape(-1)
    v = np.asarray(v_j, dtype=np.float64).reshape(-1)
    if a.size + v.size != model.spec.input_dim:
        raise ShapeError("feature lengths do not match scorer input")
    out, _ = scorer_forward(np.concatenate([a, v])[None, :], model)
    return float(out[0])


# ---------------------------------------------------------------------------
# windowed score table

def _check_paired(audio: FeatureSequence, visual: FeatureSequence):
    if audio.num_frames != visual.num_frames:
        raise ShapeError("audio and visual sequences must have equal length")


def score_table(audio: FeatureSequence, visual: FeatureSequence,
                model: AlignmentScorer, w: int):
    """All s(a_i, v_j) with |i - j| <= w, as (T, 2w+1) with -inf padding.

    Column o corresponds to offset j - i = o - w. Also returns the forward
    cache and the index map needed for backpropagation.
    """
    _check_paired(audio, visual)
    t = audio.num_frames
    offsets = np.arange(-w, w + 1)
    ii, oo = np.meshgrid(np.arange(t), offsets, indexing="ij")
    jj = ii + oo
    valid = (jj >= 0) & (jj < t)
    iv, jv = ii[valid], jj[valid]
    x = np.concatenate([audio.values[iv], visual.values[jv]], axis=1)
    scores, cache = scorer_forward(x, model)
    table = np.full((t, 2 * w + 1), -np.inf)
    table[valid] = scores
    return table, valid, cache


def _posteriors(table: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the valid (finite) entries."""
    m = table.max(axis=1, keepdims=True)
    e = np.exp(table - m)
    e[~np.isfinite(table)] = 0.0
    return e / e.sum(axis=1, keepdims=True)


def neighborhood_sizes(t: int, w: int) -> np.ndarray:
    idx = np.arange(t)
    return np.minimum(idx + w, t - 1) - np.maximum(idx - w, 0) + 1


def alignment_posterior(audio: FeatureSequence, visual: FeatureSequence,
                        i: int, model: AlignmentScorer, w: int) -> float:
    """p(v_i | a_i): softmax of s(a_i, v_i) over the truncated window (0-based i)."""
    _check_paired(audio, visual)
    if not 0 <= i < audio.num_frames:
        raise ShapeError(f"frame index {i} out of range")
    table, _, _ = score_table(audio, visual, model, w)
    return float(_posteriors(table)[i, w])


def per_frame_nll(audio: FeatureSequence, visual: FeatureSequence,
                  model: AlignmentScorer, w: int) -> np.ndarray:
    table, _, _ = score_table(audio, visual, model, w)
    finite = np.where(np.isfinite(table), table, -np.inf)
    m = finite.max(axis=1)
    lse = m + np.log(np.exp(finite - m[:, None]).sum(axis=1))
    return lse - table[:, w]


def infonce_loss(audio: FeatureSequence, visual: FeatureSequence,
                 model: AlignmentScorer, w: int) -> float:
    """Mean over frames of -log p(v_i | a_i), truncated windows at boundaries."""
    return float(per_frame_nll(audio, visual, model, w).mean())


def infonce_grads(audio: FeatureSequence, visual: FeatureSequence,
                  model: AlignmentScorer, w: int):
    """(loss, parameter gradients) for one clip."""
    table, valid, cache = score_table(audio, visual, model, w)
    t = audio.num_frames
    post = _posteriors(table)
    nll = -np.log(post[:, w])
    dtable = post.copy()
    dtable[:, w] -= 1.0
    dtable /= t
    grads = scorer_backward(cache, model, dtable[valid])
    return float(nll.mean()), grads


def misalignment_score(audio: FeatureSequence, visual: FeatureSequence,
                       model: AlignmentScorer, w: int) -> SyncScore:
    """Per-frame NLL and its mean; higher aggregate means more likely fake."""
    nll = per_frame_nll(audio, visual, model, w)
    return SyncScore(per_frame_nll=nll, aggregate=float(nll.mean()))


# ---------------------------------------------------------------------------
# training

def train_avsync(corpus, config: SyncConfig, spec: ScorerSpec) -> AlignmentScorer:
    """SGD on the contrastive loss over a corpus of aligned (audio, visual) pairs."""
    clips = [(a, v) for a, v in corpus]
    clips = [(a, v) for a, v in clips if a.num_frames >= 2]
    if not clips:
        raise DataError("no paired sequences with T >= 2")
    for a, v in clips:
        _check_paired(a, v)

    model = init_scorer(spec)
    if config.steps == 0:
        return model

    opt = nn.SGD(config.learning_rate, config.momentum)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.steps):
        idx = rng.integers(0, len(clips), size=config.clips_per_step)
        total: dict[str, np.ndarray] = {}
        for di in idx:
            a, v = clips[di]
            _, grads = infonce_grads(a, v, model, config.window_radius)
            for k, g in grads.items():
                total[k] = total.get(k, 0.0) + g
        for k in total:
            total[k] = total[k] / len(idx)
        opt.step(model.params, total)
    return model


# ---------------------------------------------------------------------------
# gradient verification

def _relu_pattern(audio, visual, model, w) -> bytes:
    """Sign pattern of every rectified unit over all windowed pairs."""
    t = audio.num_frames
    offsets = np.arange(-w, w + 1)
    ii, oo = np.meshgrid(np.arange(t), offsets, indexing="ij")
    jj = ii + oo
    valid = (jj >= 0) & (jj < t)
    x = np.concatenate([audio.values[ii[valid]], visual.values[jj[valid]]], axis=1)

    p = model.params
    bits = []
    h = x
    for i in range(N_LAYERS - 1):
        z = nn.linear_forward(h, p[f"fc{i}_w"], p[f"fc{i}_b"])
        ln_out, _ = nn.layernorm_forward(z, p[f"ln{i}_g"], p[f"ln{i}_b"])
        bits.append((ln_out > 0.0).tobytes())
        h = nn.relu_forward(ln_out)
    return b"".join(bits)


def gradcheck_infonce(audio: FeatureSequence, visual: FeatureSequence,
                      model: AlignmentScorer, w: int, step: float = 1e-4) -> float:
    """Analytic contrastive-loss gradient vs central finite differences."""
    _, grads = infonce_grads(audio, visual, model, w)

    def loss_fn():
        return infonce_loss(audio, visual, model, w)

    def pattern_fn():
        return _relu_pattern(audio, visual, model, w)

    return nn.fd_gradcheck(model.params, grads, loss_fn, step, pattern_fn)
