"""Region polygons and deformed soft blending masks from 68-point facial landmarks.

Landmark index convention (fixed): jawline 0-16, eyebrows 17-26, nose 27-35
(nose base = 33), eyes 36-47, outer lip 48-59, inner lip 60-67.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from shapely.geometry import MultiPoint, Polygon, box

from .errors import DegenerateGeometry, ShapeError

# landmark index ranges
JAW = slice(0, 17)
NOSE_BASE = 33
OUTER_LIP = slice(48, 60)
ALL_LIP = slice(48, 68)

LIP_DILATION_FRACTION = 0.15  # of mouth width, outward buffer for the lip region


class RegionTag(enum.Enum):
    FACE = "face"
    LIP = "lip"
    LOWER_FACE = "lower_face"


@dataclass(frozen=True)
class LandmarkSet:
    """68 ordered (x, y) facial points in pixel units, x rightward, y downward."""

    points: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 2):
            raise ShapeError(f"expected 68 landmark points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ShapeError("landmark coordinates must be finite")
        if (pts[:, 0].min() < 0 or pts[:, 0].max() >= self.image_width
                or pts[:, 1].min() < 0 or pts[:, 1].max() >= self.image_height):
            raise ShapeError("landmarks outside image bounds")
        object.__setattr__(self, "points", pts)

    @property
    def mouth_width(self) -> float:
        return float(np.linalg.norm(self.points[54] - self.points[48]))


@dataclass(frozen=True)
class MaskDeformParams:
    """Randomness knobs for mask deformation; all zero = identity."""

    elastic_amplitude: float = 4.0   # px, max displacement
    elastic_scale: float = 16.0      # px, smoothness of the displacement field
    blur_sigma: float = 2.0          # px
    amplitude_scale: float = 1.0     # in (0, 1]
    seed: int = 0

    def __post_init__(self):
        if self.elastic_amplitude < 0 or self.elastic_scale < 0 or self.blur_sigma < 0:
            raise ValueError("deformation magnitudes must be >= 0")
        if not (0.0 < self.amplitude_scale <= 1.0):
            raise ValueError("amplitude_scale must be in (0, 1]")


@dataclass(frozen=True)
class SoftMask:
    """Per-pixel blend weights in [0, 1] for one facial region."""

    region: RegionTag
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeError("mask values must be a 2-D grid")
        if vals.min() < 0.0 or vals.max() > 1.0 or not np.all(np.isfinite(vals)):
            raise ShapeError("mask values must be finite and within [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def support(self) -> np.ndarray:
        return self.values > 0.0


def _largest_polygon(geom) -> Polygon:
    if geom.is_empty:
        raise DegenerateGeometry("region polygon collapsed after clipping")
    if isinstance(geom, Polygon):
        return geom
    polys = [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]
    if not polys:
        raise DegenerateGeometry("region polygon collapsed after clipping")
    return max(polys, key=lambda g: g.area)


def _exterior_vertices(poly: Polygon) -> np.ndarray:
    coords = np.asarray(poly.exterior.coords, dtype=np.float64)
    return coords[:-1]  # shapely repeats the first vertex


def region_polygon(landmarks: LandmarkSet, region: RegionTag) -> np.ndarray:
    """Build the region's simple polygon, clipped to the image bounds.

    FACE: convex hull of all 68 points. LIP: convex hull of the 20 lip points
    dilated outward by 15% of the mouth width. LOWER_FACE: jawline points 3-13
    closed by a horizontal top edge at the nose-base y coordinate.
    """
    pts = landmarks.points
    bounds = box(0.0, 0.0, float(landmarks.image_width), float(landmarks.image_height))

    if region is RegionTag.FACE:
        hull = MultiPoint(pts).convex_hull
        if not isinstance(hull, Polygon) or hull.area <= 0.0:
            raise DegenerateGeometry("face hull is degenerate (collinear landmarks)")
        poly = hull
    elif region is RegionTag.LIP:
        hull = MultiPoint(pts[ALL_LIP]).convex_hull
        if not isinstance(hull, Polygon) or hull.area <= 0.0:
            raise DegenerateGeometry("lip hull is degenerate")
        margin = LIP_DILATION_FRACTION * landmarks.mouth_width
        if margin <= 0.0:
            raise DegenerateGeometry("zero mouth width")
        poly = hull.buffer(margin, quad_segs=4)
    elif region is RegionTag.LOWER_FACE:
        jaw = pts[3:14]
        y_top = float(pts[NOSE_BASE, 1])
        ring = list(map(tuple, jaw)) + [(float(jaw[-1, 0]), y_top), (float(jaw[0, 0]), y_top)]
        raw = Polygon(ring)
        if not raw.is_valid:
            raw = raw.buffer(0.0)
        half_plane = box(-1e9, y_top, 1e9, 1e9)
        poly = _largest_polygon(raw.intersection(half_plane))
        if poly.area <= 0.0:
            raise DegenerateGeometry("lower-face polygon has zero area")
    else:  # pragma: no cover
        raise ValueError(f"unknown region {region}")

    clipped = _largest_polygon(poly.intersection(bounds))
    if clipped.area <= 0.0:
        raise DegenerateGeometry("region polygon has zero area inside the image")
    return _exterior_vertices(clipped)


def rasterize(polygon: np.ndarray, height: int, width: int) -> np.ndarray:
    """Binary mask: pixel = 1 iff its center is inside the polygon (even-odd rule)."""
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise DegenerateGeometry("polygon needs at least 3 vertices")
    xc = np.arange(width, dtype=np.float64) + 0.5
    yc = np.arange(height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xc, yc)

    inside = np.zeros((height, width), dtype=bool)
    n = poly.shape[0]
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        if y1 == y2:
            continue
        straddles = (y1 <= gy) != (y2 <= gy)
        x_at = x1 + (gy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (gx < x_at)

    if not inside.any():
        raise DegenerateGeometry("polygon covers no pixel centers")
    return inside.astype(np.float64)


def deform_mask(binary_mask: np.ndarray, params: MaskDeformParams,
                region: RegionTag = RegionTag.FACE) -> SoftMask:
    """Elastic-warp, blur, and rescale a binary mask into a soft mask.

    Deterministic in (mask, params): identical inputs give bit-identical output.
    """
    mask = np.asarray(binary_mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeError("binary mask must be 2-D")
    if not mask.any():
        raise DegenerateGeometry("binary mask has empty support")

    h, w = mask.shape
    out = mask
    rng = np.random.default_rng(params.seed)

    if params.elastic_amplitude > 0.0:
        dx = rng.standard_normal((h, w))
        dy = rng.standard_normal((h, w))
        if params.elastic_scale > 0.0:
            dx = ndimage.gaussian_filter(dx, params.elastic_scale)
            dy = ndimage.gaussian_filter(dy, params.elastic_scale)
        peak = max(np.abs(dx).max(), np.abs(dy).max())
        if peak > 0.0:
            dx *= params.elastic_amplitude / peak
            dy *= params.elastic_amplitude / peak
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        out = ndimage.map_coordinates(out, [yy + dy, xx + dx], order=1,
                                      mode="constant", cval=0.0)

    if params.blur_sigma > 0.0:
        out = ndimage.gaussian_filter(out, params.blur_sigma, mode="constant", cval=0.0)

    out = np.clip(out, 0.0, 1.0) * params.amplitude_scale
    if not (out > 0.0).any():
        raise DegenerateGeometry("mask support vanished after deformation")
    return SoftMask(region=region, values=out)


def build_mask(landmarks: LandmarkSet, region: RegionTag,
               params: MaskDeformParams) -> SoftMask:
    """Polygon -> rasterize -> deform, for a single region."""
    poly = region_polygon(landmarks, region)
    binary = rasterize(poly, landmarks.image_height, landmarks.image_width)
    return deform_mask(binary, params, region)


def build_nested_masks(landmarks: LandmarkSet,
                       params: MaskDeformParams) -> dict[RegionTag, SoftMask]:
    """Build all three region masks with supports clipped to nest:

    support(LIP) <= support(LOWER_FACE) <= support(FACE).

    Per-region deformation seeds are derived deterministically from params.seed.
    """
    masks = {}
    for idx, region in enumerate((RegionTag.FACE, RegionTag.LOWER_FACE, RegionTag.LIP)):
        sub_seed = int(np.random.SeedSequence([params.seed & 0xFFFFFFFFFFFFFFFF, idx])
                       .generate_state(1)[0])
        region_params = MaskDeformParams(
            elastic_amplitude=params.elastic_amplitude,
            elastic_scale=params.elastic_scale,
            blur_sigma=params.blur_sigma,
            amplitude_scale=params.amplitude_scale,
            seed=sub_seed,
        )
        masks[region] = build_mask(landmarks, region, region_params)

    face = masks[RegionTag.FACE].values
    lower = np.where(face > 0.0, masks[RegionTag.LOWER_FACE].values, 0.0)
    if not (lower > 0).any():
        raise DegenerateGeometry("lower-face support vanished after nesting clip")
    lip = np.where(lower > 0.0, masks[RegionTag.LIP].values, 0.0)
    if not (lip > 0).any():
        raise DegenerateGeometry("lip support vanished after nesting clip")
    masks[RegionTag.LOWER_FACE] = SoftMask(RegionTag.LOWER_FACE, lower)
    masks[RegionTag.LIP] = SoftMask(RegionTag.LIP, lip)
    return masks
