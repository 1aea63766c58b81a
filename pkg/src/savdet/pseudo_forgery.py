"""On-the-fly (real-view, pseudo-fake-view) pair generation via soft-mask self-blending.

A pair is built from a single base frame: two stochastically augmented views of
that frame are blended inside a deformed region mask. The target-augmented view
is labeled real, the blend is labeled fake. No pixels from any other frame or
identity enter the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .errors import ConfigError, ShapeError
from .masks import LandmarkSet, MaskDeformParams, RegionTag, SoftMask, build_mask

QUANT_LEVEL = 1.0 / 255.0


def validate_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        pass
    else:
        raise ShapeError(f"image must be HxW or HxWx{{1,3}}, got {img.shape}")
    if img.shape[0] < 32 or img.shape[1] < 32:
        raise ShapeError("images entering the blending pipeline must be >= 32x32")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ShapeError("pixel values must be finite and in [0, 1]")
    return img


@dataclass(frozen=True)
class AugmentationParams:
    """One concrete draw of photometric + geometric perturbations."""

    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    hue_shift: float = 0.0            # degrees
    saturation_factor: float = 1.0
    resize_cycle_factor: float = 1.0  # downscale-then-upscale
    sharpen_amount: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)  # (dx, dy) px
    scale_factor: float = 1.0

    def is_identity(self) -> bool:
        return (self.brightness_delta == 0.0 and self.contrast_factor == 1.0
                and self.hue_shift == 0.0 and self.saturation_factor == 1.0
                and self.resize_cycle_factor == 1.0 and self.sharpen_amount == 0.0
                and self.translate == (0.0, 0.0) and self.scale_factor == 1.0)


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for AugmentationParams, all as (lo, hi)."""

    brightness_delta: tuple[float, float] = (-0.1, 0.1)
    contrast_factor: tuple[float, float] = (0.8, 1.2)
    hue_shift: tuple[float, float] = (-10.0, 10.0)
    saturation_factor: tuple[float, float] = (0.8, 1.2)
    resize_cycle_factor: tuple[float, float] = (0.5, 1.0)
    sharpen_amount: tuple[float, float] = (0.0, 0.5)
    translate_frac: tuple[float, float] = (-0.03, 0.03)  # of W and H
    scale_factor: tuple[float, float] = (0.97, 1.03)

    def __post_init__(self):
        for name in ("brightness_delta", "contrast_factor", "hue_shift",
                     "saturation_factor", "resize_cycle_factor", "sharpen_amount",
                     "translate_frac", "scale_factor"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(brightness_delta=(0.0, 0.0), contrast_factor=(1.0, 1.0),
                   hue_shift=(0.0, 0.0), saturation_factor=(1.0, 1.0),
                   resize_cycle_factor=(1.0, 1.0), sharpen_amount=(0.0, 0.0),
                   translate_frac=(0.0, 0.0), scale_factor=(1.0, 1.0))


@dataclass(frozen=True)
class PairConfig:
    """Full configuration for pair generation."""

    augment: AugmentConfig = field(default_factory=AugmentConfig)
    deform: MaskDeformParams = field(default_factory=MaskDeformParams)
    blur_sigma_range: tuple[float, float] = (1.0, 4.0)
    amplitude_scales: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        lo, hi = self.blur_sigma_range
        if lo > hi or lo < 0:
            raise ConfigError("invalid blur_sigma_range")
        if not self.amplitude_scales:
            raise ConfigError("amplitude_scales must be nonempty")


@dataclass(frozen=True)
class BlendPair:
    region: RegionTag
    base_id: str
    real_view: np.ndarray = field(repr=False)
    fake_view: np.ndarray = field(repr=False)
    mask: SoftMask = field(repr=False)
    seed: int = 0
    degenerate_pair: bool = False


def sample_aug_params(seed: int, config: AugmentConfig,
                      width: int = 0, height: int = 0
                      ) -> tuple[AugmentationParams, AugmentationParams]:
    """Draw independent source/target parameter sets, deterministic in seed.

    Geometric perturbation (scale/translate) is applied to the source view only;
    the target view stays geometrically faithful so it remains a plausible real
    frame.
    """
    rng = np.random.default_rng(seed)

    def draw(geometric: bool) -> AugmentationParams:
        u = lambda lo_hi: float(rng.uniform(*lo_hi)) if lo_hi[0] < lo_hi[1] else float(lo_hi[0])
        params = AugmentationParams(
            brightness_delta=u(config.brightness_delta),
            contrast_factor=u(config.contrast_factor),
            hue_shift=u(config.hue_shift),
            saturation_factor=u(config.saturation_factor),
            resize_cycle_factor=u(config.resize_cycle_factor),
            sharpen_amount=u(config.sharpen_amount),
        )
        tx = u(config.translate_frac) * width
        ty = u(config.translate_frac) * height
        sf = u(config.scale_factor)
        if geometric:
            params = replace(params, translate=(tx, ty), scale_factor=sf)
        return params

    source = draw(geometric=True)
    target = draw(geometric=False)
    return source, target


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    return cv2.cvtColor(img.astype(np.float32), cv2.COLOR_RGB2HSV).astype(np.float64)


def _hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    return cv2.cvtColor(img.astype(np.float32), cv2.COLOR_HSV2RGB).astype(np.float64)


def apply_augmentation(image: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Photometric ops in fixed order, then geometric; identity params are a no-op.

    Order: brightness -> contrast -> hue/saturation -> resize-cycle -> sharpen,
    then scale about the image center and translate (replicated border). Output
    is clamped to [0, 1].
    """
    img = validate_image(image)
    squeeze_back = img.ndim == 3 and img.shape[2] == 1
    if squeeze_back:
        img = img[..., 0]
    h, w = img.shape[:2]
    out = img.copy()

    if params.brightness_delta != 0.0:
        out = out + params.brightness_delta
    if params.contrast_factor != 1.0:
        mean = out.mean()
        out = mean + params.contrast_factor * (out - mean)
    if (params.hue_shift != 0.0 or params.saturation_factor != 1.0) and out.ndim == 3 and out.shape[2] == 3:
        hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + params.hue_shift, 360.0)
        hsv[..., 1] = np.clip(hsv[..., 1] * params.saturation_factor, 0.0, 1.0)
        out = _hsv_to_rgb(hsv)
    if params.resize_cycle_factor != 1.0:
        f = params.resize_cycle_factor
        small = cv2.resize(out.astype(np.float32), (max(1, round(w * f)), max(1, round(h * f))),
                           interpolation=cv2.INTER_LINEAR)
        out = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR).astype(np.float64)
    if params.sharpen_amount != 0.0:
        blurred = cv2.GaussianBlur(out.astype(np.float32), (0, 0), 1.0).astype(np.float64)
        out = out + params.sharpen_amount * (out - blurred)

    if params.scale_factor != 1.0 or params.translate != (0.0, 0.0):
        s = params.scale_factor
        dx, dy = params.translate
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        m = np.array([[s, 0.0, cx - s * cx + dx],
                      [0.0, s, cy - s * cy + dy]], dtype=np.float64)
        out = cv2.warpAffine(out.astype(np.float32), m, (w, h),
                             flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REPLICATE).astype(np.float64)

    out = np.clip(out, 0.0, 1.0)
    if squeeze_back:
        out = out[..., None]
    return out


def blend(source: np.ndarray, target: np.ndarray, mask: SoftMask) -> np.ndarray:
    """out = source * M + target * (1 - M), per channel."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape:
        raise ShapeError(f"source {src.shape} vs target {tgt.shape}")
    if src.shape[:2] != mask.values.shape:
        raise ShapeError(f"mask {mask.values.shape} vs image {src.shape[:2]}")
    m = mask.values if src.ndim == 2 else mask.values[..., None]
    return src * m + tgt * (1.0 - m)


def make_pair(base: np.ndarray, landmarks: LandmarkSet, region: RegionTag,
              seed: int, config: PairConfig, base_id: str = "") -> BlendPair:
    """sample params -> augment views -> build/deform mask -> blend.

    Deterministic in all arguments. Degenerate pairs (fake == real to within one
    quantization level everywhere) are flagged so callers can drop them.
    """
    img = validate_image(base)
    h, w = img.shape[:2]
    if (h, w) != (landmarks.image_height, landmarks.image_width):
        raise ShapeError("landmarks do not match base image dimensions")

    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0x5A])
    aug_seed, mask_seed, draw_seed = (int(s) for s in ss.generate_state(3))

    src_params, tgt_params = sample_aug_params(aug_seed, config.augment, w, h)
    source_view = apply_augmentation(img, src_params)
    target_view = apply_augmentation(img, tgt_params)

    rng = np.random.default_rng(draw_seed)
    lo, hi = config.blur_sigma_range
    blur_sigma = float(rng.uniform(lo, hi)) if lo < hi else float(lo)
    amp = float(rng.choice(np.asarray(config.amplitude_scales)))
    deform = replace(config.deform, blur_sigma=blur_sigma, amplitude_scale=amp,
                     seed=mask_seed)
    mask = build_mask(landmarks, region, deform)

    fake_view = blend(source_view, target_view, mask)
    degenerate = bool(np.max(np.abs(fake_view - target_view)) <= QUANT_LEVEL)
    return BlendPair(region=region, base_id=base_id, real_view=target_view,
                     fake_view=fake_view, mask=mask, seed=seed,
                     degenerate_pair=degenerate)
