"""Synthetic faces and correlated audio-visual feature clips.

Desk-scale stand-ins for real data: a parametric cartoon face whose 68
landmarks are exact by construction, and latent-driven feature sequences whose
alignment (or deliberate misalignment) is known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import ConfigError
from ..masks import LandmarkSet
from ..avsync import FeatureSequence

SKIN = np.array([0.85, 0.67, 0.55])
LIP_COLOR = np.array([0.62, 0.25, 0.25])
MOUTH_DARK = np.array([0.25, 0.08, 0.08])
EYE_WHITE = np.array([0.95, 0.95, 0.95])
IRIS = np.array([0.25, 0.2, 0.15])
BROW = np.array([0.2, 0.15, 0.1])
NOSE_LINE = np.array([0.6, 0.45, 0.38])
BACKGROUND = 0.78


@dataclass(frozen=True)
class SynthFaceSpec:
    canvas: int = 128
    center_frac: tuple[float, float] = (0.5, 0.53)   # face center, canvas fractions
    axes_frac: tuple[float, float] = (0.33, 0.42)    # face half-axes
    eye_scale: float = 1.0
    nose_scale: float = 1.0
    mouth_scale: float = 1.0
    mouth_openness: float = 0.3
    noise_level: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.canvas < 48:
            raise ConfigError("canvas must be >= 48 px")
        if not (0.0 <= self.mouth_openness <= 1.0):
            raise ConfigError("mouth_openness must be in [0, 1]")
        geo = _geometry(self)
        pts = _landmark_points(geo)
        if pts.min() < 1.0 or pts[:, 0].max() >= self.canvas - 1 or pts[:, 1].max() >= self.canvas - 1:
            raise ConfigError("face geometry exceeds the canvas")


def random_face_spec(seed: int, canvas: int = 128) -> SynthFaceSpec:
    """A mildly jittered spec, deterministic in seed."""
    rng = np.random.default_rng(seed)
    return SynthFaceSpec(
        canvas=canvas,
        center_frac=(0.5 + rng.uniform(-0.02, 0.02), 0.53 + rng.uniform(-0.02, 0.02)),
        axes_frac=(0.33 * rng.uniform(0.92, 1.05), 0.42 * rng.uniform(0.92, 1.02)),
        eye_scale=rng.uniform(0.9, 1.1),
        nose_scale=rng.uniform(0.9, 1.1),
        mouth_scale=rng.uniform(0.9, 1.1),
        mouth_openness=rng.uniform(0.0, 0.8),
        noise_level=rng.uniform(0.01, 0.05),
        seed=seed,
    )


def _geometry(spec: SynthFaceSpec) -> dict:
    s = spec.canvas
    cx, cy = spec.center_frac[0] * s, spec.center_frac[1] * s
    rx, ry = spec.axes_frac[0] * s, spec.axes_frac[1] * s
    eye_y = cy - ry * 0.30
    eye_dx = rx * 0.45
    eye_w = rx * 0.22 * spec.eye_scale
    eye_h = ry * 0.09 * spec.eye_scale
    brow_y = eye_y - ry * 0.22
    brow_w = rx * 0.30 * spec.eye_scale
    nose_top_y = eye_y + ry * 0.05
    nose_base_y = cy + ry * 0.12 * spec.nose_scale
    nose_w = rx * 0.18 * spec.nose_scale
    mouth_y = cy + ry * 0.48
    mouth_a = rx * 0.38 * spec.mouth_scale
    mouth_b = ry * 0.11 * spec.mouth_scale
    return dict(cx=cx, cy=cy, rx=rx, ry=ry, eye_y=eye_y, eye_dx=eye_dx,
                eye_w=eye_w, eye_h=eye_h, brow_y=brow_y, brow_w=brow_w,
                nose_top_y=nose_top_y, nose_base_y=nose_base_y, nose_w=nose_w,
                mouth_y=mouth_y, mouth_a=mouth_a, mouth_b=mouth_b,
                openness=spec.mouth_openness)


def _ellipse_pts(cx, cy, a, b, angles_deg):
    ang = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    return np.stack([cx + a * np.cos(ang), cy - b * np.sin(ang)], axis=1)


def _landmark_points(geo: dict) -> np.ndarray:
    pts = np.zeros((68, 2))
    cx, cy, rx, ry = geo["cx"], geo["cy"], geo["rx"], geo["ry"]

    # jawline 0-16 along the lower half of the face ellipse, left to right
    alphas = np.pi * (1.0 - np.arange(17) / 16.0)  # pi .. 0
    pts[0:17, 0] = cx + rx * np.cos(alphas)
    pts[0:17, 1] = cy + ry * np.sin(alphas)

    # eyebrows 17-21 (left), 22-26 (right): shallow arcs
    for base, sign in ((17, -1.0), (22, 1.0)):
        bx = cx + sign * geo["eye_dx"]
        xs = bx + np.linspace(-geo["brow_w"] / 2, geo["brow_w"] / 2, 5)
        lift = geo["eye_h"] * 0.8 * (1.0 - np.linspace(-1, 1, 5) ** 2)
        pts[base:base + 5, 0] = xs
        pts[base:base + 5, 1] = geo["brow_y"] - lift

    # nose bridge 27-30 and base line 31-35 (33 = base center)
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(geo["nose_top_y"], geo["nose_base_y"], 4)
    pts[31:36, 0] = cx + np.linspace(-geo["nose_w"] / 2, geo["nose_w"] / 2, 5)
    pts[31:36, 1] = geo["nose_base_y"]

    # eyes 36-41 (left), 42-47 (right)
    eye_angles = [180.0, 130.0, 50.0, 0.0, 310.0, 230.0]
    for base, sign in ((36, -1.0), (42, 1.0)):
        ex = cx + sign * geo["eye_dx"]
        pts[base:base + 6] = _ellipse_pts(ex, geo["eye_y"], geo["eye_w"] / 2,
                                          geo["eye_h"], eye_angles)

    # outer lip 48-59, inner lip 60-67
    outer_angles = [180, 150, 120, 90, 60, 30, 0, 330, 300, 270, 240, 210]
    pts[48:60] = _ellipse_pts(geo["cx"], geo["mouth_y"], geo["mouth_a"],
                              geo["mouth_b"], outer_angles)
    inner_angles = [180, 135, 90, 45, 0, 315, 270, 225]
    pts[60:68] = _ellipse_pts(geo["cx"], geo["mouth_y"], geo["mouth_a"] * 0.72,
                              geo["mouth_b"] * geo["openness"], inner_angles)
    return pts


def _feature_masks(spec: SynthFaceSpec) -> dict[str, np.ndarray]:
    """Binary masks of each drawn feature, used both for rendering and for the
    landmark consistency self-check."""
    s = spec.canvas
    geo = _geometry(spec)
    masks = {}

    def canvas_mask():
        return np.zeros((s, s), dtype=np.uint8)

    def ellipse(m, cx, cy, a, b, thickness):
        cv2.ellipse(m, (int(round(cx)), int(round(cy))),
                    (max(1, int(round(a))), max(1, int(round(b)))),
                    0, 0, 360, 1, thickness)

    face = canvas_mask()
    ellipse(face, geo["cx"], geo["cy"], geo["rx"], geo["ry"], -1)
    masks["face_fill"] = face.astype(bool)
    edge = canvas_mask()
    ellipse(edge, geo["cx"], geo["cy"], geo["rx"], geo["ry"], 3)
    masks["face_edge"] = edge.astype(bool)

    brows = canvas_mask()
    for base in (17, 22):
        pts = _landmark_points(geo)[base:base + 5]
        cv2.polylines(brows, [np.round(pts).astype(np.int32)], False, 1, 2)
    masks["brows"] = brows.astype(bool)

    eyes = canvas_mask()
    for sign in (-1.0, 1.0):
        ellipse(eyes, geo["cx"] + sign * geo["eye_dx"], geo["eye_y"],
                geo["eye_w"] / 2, geo["eye_h"], -1)
        ellipse(eyes, geo["cx"] + sign * geo["eye_dx"], geo["eye_y"],
                geo["eye_w"] / 2, geo["eye_h"], 2)
    masks["eyes"] = eyes.astype(bool)

    nose = canvas_mask()
    lm = _landmark_points(geo)
    cv2.polylines(nose, [np.round(lm[27:31]).astype(np.int32)], False, 1, 2)
    cv2.polylines(nose, [np.round(lm[31:36]).astype(np.int32)], False, 1, 2)
    masks["nose"] = nose.astype(bool)

    lips = canvas_mask()
    ellipse(lips, geo["cx"], geo["mouth_y"], geo["mouth_a"], geo["mouth_b"], -1)
    ellipse(lips, geo["cx"], geo["mouth_y"], geo["mouth_a"], geo["mouth_b"], 2)
    masks["lips"] = lips.astype(bool)

    inner = canvas_mask()
    b_in = max(geo["mouth_b"] * geo["openness"], 1.0)
    ellipse(inner, geo["cx"], geo["mouth_y"], geo["mouth_a"] * 0.72, b_in, -1)
    masks["mouth_inner"] = inner.astype(bool)
    return masks


def synth_face(spec: SynthFaceSpec) -> tuple[np.ndarray, LandmarkSet]:
    """Render a cartoon face and its exactly-consistent 68 landmarks."""
    s = spec.canvas
    geo = _geometry(spec)
    masks = _feature_masks(spec)
    rng = np.random.default_rng(spec.seed)

    img = np.full((s, s, 3), BACKGROUND)
    img += rng.normal(0.0, spec.noise_level * 0.5, size=(s, s, 3))
    img[masks["face_fill"]] = SKIN
    img[masks["face_fill"]] += rng.normal(
        0.0, spec.noise_level, size=(int(masks["face_fill"].sum()), 3))
    img[masks["brows"]] = BROW
    img[masks["eyes"]] = EYE_WHITE
    for sign in (-1.0, 1.0):  # iris
        iris = np.zeros((s, s), dtype=np.uint8)
        cv2.circle(iris, (int(round(geo["cx"] + sign * geo["eye_dx"])),
                          int(round(geo["eye_y"]))),
                   max(1, int(round(geo["eye_h"] * 0.8))), 1, -1)
        img[iris.astype(bool)] = IRIS
    img[masks["nose"]] = NOSE_LINE
    img[masks["lips"]] = LIP_COLOR
    if spec.mouth_openness > 0.05:
        img[masks["mouth_inner"]] = MOUTH_DARK
    img = np.clip(img, 0.0, 1.0)

    pts = _landmark_points(geo)
    landmarks = LandmarkSet(points=pts, image_width=s, image_height=s)
    return img, landmarks


def landmark_consistency_check(spec: SynthFaceSpec, landmarks: LandmarkSet,
                               tolerance: float = 1.0) -> bool:
    """Every landmark lies within `tolerance` px of its drawn feature."""
    masks = _feature_masks(spec)
    feature_of = {
        **{i: "face_edge" for i in range(0, 17)},
        **{i: "brows" for i in range(17, 27)},
        **{i: "nose" for i in range(27, 36)},
        **{i: "eyes" for i in range(36, 48)},
        **{i: "lips" for i in range(48, 68)},
    }
    for i, (x, y) in enumerate(landmarks.points):
        mask = masks[feature_of[i]]
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            return False
        d = np.min(np.hypot(xs + 0.5 - x, ys + 0.5 - y))
        if d > tolerance:
            return False
    return True


# ---------------------------------------------------------------------------
# audio-visual clips

@dataclass(frozen=True)
class SynthAVSpec:
    T: int = 64
    D_a: int = 16
    D_v: int = 16
    latent_dim: int = 3
    smooth_window: int = 5
    noise_sigma: float = 0.1
    visual_shift: int = 0       # frames; nonzero makes the clip a fake surrogate
    mismatched: bool = False    # visual from an unrelated latent
    seed: int = 0               # per-clip latent and noise
    mixing_seed: int = 0        # corpus-wide latent -> feature mixing

    def __post_init__(self):
        if self.T < 2 or self.D_a < 1 or self.D_v < 1 or self.latent_dim < 1:
            raise ConfigError("invalid sequence dimensions")
        if self.smooth_window < 1 or self.noise_sigma < 0:
            raise ConfigError("invalid smoothing/noise settings")


def _latent(rng: np.random.Generator, t: int, k: int, smooth: int) -> np.ndarray:
    """Each component: sum of 3 random-phase sinusoids, then a moving average."""
    steps = np.arange(t)
    lat = np.zeros((t, k))
    for c in range(k):
        for _ in range(3):
            freq = rng.uniform(0.02, 0.2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            lat[:, c] += amp * np.sin(2.0 * np.pi * freq * steps + phase)
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        pad = smooth // 2
        padded = np.pad(lat, ((pad, smooth - 1 - pad), (0, 0)), mode="edge")
        lat = np.stack([np.convolve(padded[:, c], kernel, mode="valid")
                        for c in range(k)], axis=1)
    return lat


def synth_av(spec: SynthAVSpec,
             frame_rate: float = 25.0) -> tuple[FeatureSequence, FeatureSequence, str]:
    """(audio, visual, label): label is real only for an aligned, matched pair."""
    rng = np.random.default_rng(spec.seed)
    lat = _latent(rng, spec.T, spec.latent_dim, spec.smooth_window)
    mix_rng = np.random.default_rng(spec.mixing_seed)
    mix_a = mix_rng.standard_normal((spec.latent_dim, spec.D_a))
    mix_v = mix_rng.standard_normal((spec.latent_dim, spec.D_v))

    audio = lat @ mix_a + spec.noise_sigma * rng.standard_normal((spec.T, spec.D_a))
    if spec.mismatched:
        other = _latent(rng, spec.T, spec.latent_dim, spec.smooth_window)
        visual = other @ mix_v
    else:
        visual = lat @ mix_v
    visual = visual + spec.noise_sigma * rng.standard_normal((spec.T, spec.D_v))
    if spec.visual_shift:
        visual = np.roll(visual, spec.visual_shift, axis=0)

    label = "real" if (spec.visual_shift == 0 and not spec.mismatched) else "fake"
    return (FeatureSequence("audio", audio, frame_rate),
            FeatureSequence("visual", visual, frame_rate),
            label)
