"""Deformation parameters, the five deformation families, and the deformation map.

The map acts on parametric surface coordinates rather than on raw points, so
every template location (in particular each keypoint) has an exactly known
deformed position.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import GenerationError, InputError
from .template import BODY_EPS, BagTemplate

FAMILIES = ("VC", "HC", "DC", "TF", "IF")
WARP_BOUND = 0.15  # max warp displacement, in units of body height
WARP_POINTS = 3
WARP_LENGTH = 0.5  # gaussian width in body-normalised coordinates

# Parameters not listed for a family are drawn from NEUTRAL.
NEUTRAL = {
    "orientation_angle": (-0.1, 0.1),
    "compression": (0.0, 0.2),
    "twist_angle": (0.0, 0.1),
    "incline_shear": (-0.05, 0.05),
    "flatten": (0.0, 0.1),
}
_COMPRESSED = {"compression": (0.8, 1.0), "flatten": (0.0, 0.1)}
FAMILY_RANGES = {
    "VC": {**NEUTRAL, **_COMPRESSED, "orientation_angle": (-0.1, 0.1)},
    "HC": {**NEUTRAL, **_COMPRESSED, "orientation_angle": (np.pi / 2 - 0.1, np.pi / 2 + 0.1)},
    "DC": {**NEUTRAL, **_COMPRESSED, "orientation_angle": (np.pi / 6, np.pi / 3)},
    "TF": {**NEUTRAL, "twist_angle": (np.pi / 3, 2 * np.pi / 3), "flatten": (0.7, 1.0)},
    "IF": {**NEUTRAL, "incline_shear": (0.4, 0.8), "flatten": (0.7, 1.0)},
}
SCALARS = tuple(NEUTRAL)
WARP_AMPLITUDE = 0.06  # sum of |amplitude| drawn by sample_family, well under WARP_BOUND


@dataclass(frozen=True)
class DeformationParams:
    orientation_angle: float = 0.0
    compression: float = 0.0
    twist_angle: float = 0.0
    incline_shear: float = 0.0
    flatten: float = 0.0
    warp_centers: tuple = ()  # body-normalised control points, each (x, y, z)
    warp_amplitudes: tuple = ()  # displacement vectors in units of body height
    family_label: str | None = None

    def __post_init__(self):
        if len(self.warp_centers) != len(self.warp_amplitudes):
            raise InputError("warp field needs one amplitude per control point")
        if self.family_label is not None and self.family_label not in FAMILIES:
            raise InputError(f"unknown family label {self.family_label!r}")

    @classmethod
    def identity(cls) -> "DeformationParams":
        return cls()

    @property
    def warp_bound(self) -> float:
        """Upper bound of the warp displacement magnitude, in body heights."""
        if not self.warp_amplitudes:
            return 0.0
        return float(np.linalg.norm(np.asarray(self.warp_amplitudes, dtype=float), axis=1).sum())

    def scalars(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in SCALARS], dtype=float)

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in SCALARS}
        d["warp_centers"] = [list(map(float, c)) for c in self.warp_centers]
        d["warp_amplitudes"] = [list(map(float, a)) for a in self.warp_amplitudes]
        d["family_label"] = self.family_label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationParams":
        return cls(
            **{k: float(d[k]) for k in SCALARS},
            warp_centers=tuple(tuple(c) for c in d.get("warp_centers", ())),
            warp_amplitudes=tuple(tuple(a) for a in d.get("warp_amplitudes", ())),
            family_label=d.get("family_label"),
        )


def _check_family(family):
    if family not in FAMILY_RANGES:
        raise InputError(f"unknown deformation family {family!r}; expected one of {FAMILIES}")


def sample_family(family: str, seed: int) -> DeformationParams:
    """Draw deformation parameters uniformly from the ranges of ``family``."""
    _check_family(family)
    rng = np.random.default_rng([seed, FAMILIES.index(family), 0xDF])
    ranges = FAMILY_RANGES[family]
    vals = {k: float(rng.uniform(*ranges[k])) for k in SCALARS}
    centers = rng.uniform([-0.5, -0.5, 0.2], [0.5, 0.5, 1.2], size=(WARP_POINTS, 3))
    amps = rng.normal(size=(WARP_POINTS, 3))
    amps *= rng.uniform(0.0, WARP_AMPLITUDE) / np.linalg.norm(amps, axis=1).sum()
    return DeformationParams(
        **vals,
        warp_centers=tuple(map(tuple, centers)),
        warp_amplitudes=tuple(map(tuple, amps)),
        family_label=family,
    )


def drift_params(start: DeformationParams, seed: int, fraction: float = 0.2) -> DeformationParams:
    """Move each ranged parameter toward a random edge of its family range.

    The step is at most ``fraction`` of the distance from the start value to
    that edge, so the result stays inside the family.
    """
    _check_family(start.family_label)
    rng = np.random.default_rng([seed, 0xD1])
    ranges = FAMILY_RANGES[start.family_label]
    out = {}
    for k in SCALARS:
        lo, hi = ranges[k]
        x = getattr(start, k)
        edge = hi if rng.random() < 0.5 else lo
        out[k] = float(x + rng.uniform(0.0, fraction) * (edge - x))
    return replace(start, **out)


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def interpolate(p0: DeformationParams, p1: DeformationParams, w: float) -> DeformationParams:
    """Linear blend of two parameter sets (warp fields blended point by point)."""
    if p0 == p1:
        return p0
    vals = {k: (1 - w) * getattr(p0, k) + w * getattr(p1, k) for k in SCALARS}
    if len(p0.warp_centers) == len(p1.warp_centers):
        c = (1 - w) * np.asarray(p0.warp_centers, float).reshape(-1, 3) + w * np.asarray(p1.warp_centers, float).reshape(-1, 3)
        a = (1 - w) * np.asarray(p0.warp_amplitudes, float).reshape(-1, 3) + w * np.asarray(p1.warp_amplitudes, float).reshape(-1, 3)
    else:
        # fade one field out while fading the other in
        c = np.concatenate([np.asarray(p0.warp_centers, float).reshape(-1, 3), np.asarray(p1.warp_centers, float).reshape(-1, 3)])
        a = np.concatenate([(1 - w) * np.asarray(p0.warp_amplitudes, float).reshape(-1, 3), w * np.asarray(p1.warp_amplitudes, float).reshape(-1, 3)])
    label = p0.family_label if w < 0.5 else p1.family_label
    return DeformationParams(**vals, warp_centers=tuple(map(tuple, c)), warp_amplitudes=tuple(map(tuple, a)), family_label=label)


# ---------------------------------------------------------------------------
# the map


def global_map(template: BagTemplate, params: DeformationParams, points: np.ndarray) -> np.ndarray:
    """Body-wide part of the deformation: slumping with flatten, then the smooth warp."""
    dims = np.asarray(template.body_dims, dtype=float)
    p = np.array(points, dtype=float, copy=True)
    p[..., 2] *= 1.0 - 0.25 * params.flatten
    if params.warp_amplitudes:
        centers = np.asarray(params.warp_centers, dtype=float)
        amps = np.asarray(params.warp_amplitudes, dtype=float) * dims[2]
        rel = p[..., None, :] / dims - centers  # (..., k, 3)
        weight = np.exp(-np.sum(rel**2, axis=-1) / (2 * WARP_LENGTH**2))
        p = p + weight @ amps
    return p


def _rotate(v, n, angle):
    c, s = np.cos(angle), np.sin(angle)
    return v * c - n * s, v * s + n * c


def handle_points(template: BagTemplate, params: DeformationParams, handle: int, t, psi=None, radius=None):
    """Deformed positions of handle surface points.

    ``t`` is the arc-length fraction along the handle centreline and ``psi``
    the angle around the tube; with ``psi=None`` the centreline itself is
    returned. ``t`` and ``psi`` broadcast against each other.
    """
    t = np.asarray(t, dtype=float)
    R, h0 = template.handle_arc_radius, template.handle_rise
    beta = np.arctan2(h0, template.half_chord)
    theta = np.pi + beta - t * template.arc_sweep
    u = R * np.cos(theta)
    v = h0 + R * np.sin(theta)
    n = np.zeros_like(u)
    if psi is not None:
        r = template.handle_tube_radius if radius is None else radius
        psi = np.asarray(psi, dtype=float)
        u = u + r * np.cos(psi) * np.cos(theta)
        v = v + r * np.cos(psi) * np.sin(theta)
        n = n + r * np.sin(psi)
        u, v, n = np.broadcast_arrays(u, v, n)

    # in-plane shape changes keep the attach points (v = 0) fixed
    rise = smoothstep(np.clip(v, 0.0, None) / template.handle_height)
    u = u * (1.0 - 0.8 * params.compression * rise) * (1.0 + 0.5 * params.flatten * rise)
    v = v * (1.0 + 0.15 * params.compression) * (1.0 - 0.7 * params.flatten)
    # rotation about the chord: orientation tilts outward, twist winds inward along the arc
    v, n = _rotate(v, n, params.orientation_angle - params.twist_angle * t)
    u = u + params.incline_shear * v

    origin, eu, ev, en = template.handle_frame(handle)
    world = origin + u[..., None] * eu + v[..., None] * ev + n[..., None] * en
    return global_map(template, params, world)


def body_points(template: BagTemplate, params: DeformationParams, az, el) -> np.ndarray:
    """Deformed body shell at azimuth ``az`` in [0, 2pi) and elevation ``el`` in [-pi/2, 0]."""
    w, d, h = template.body_dims
    e1, e2 = BODY_EPS
    az, el = np.broadcast_arrays(np.asarray(az, float), np.asarray(el, float))
    ce, se = _spow(np.cos(el), e2), _spow(np.sin(el), e2)
    x = (w / 2) * ce * _spow(np.cos(az), e1)
    y = (d / 2) * ce * _spow(np.sin(az), e1)
    z = h * (1.0 + se)
    return global_map(template, params, np.stack([x, y, z], axis=-1))


def _spow(x, e):
    return np.sign(x) * np.abs(x) ** e


def keypoint_positions(template: BagTemplate, params: DeformationParams) -> np.ndarray:
    """Exact deformed coordinates of the 10 keypoints, ordered by keypoint id."""
    handles, fr = template.keypoint_params()
    out = np.empty((len(fr), 3))
    for hnd in (0, 1):
        sel = handles == hnd
        out[sel] = handle_points(template, params, hnd, fr[sel])
    return out


def check_params(template: BagTemplate, params: DeformationParams) -> None:
    """Raise GenerationError for deformations that would collapse the surface."""
    if not all(np.isfinite(params.scalars())):
        raise GenerationError("non-finite deformation parameter")
    if not (0.0 <= params.compression <= 1.0 and 0.0 <= params.flatten <= 1.0):
        raise GenerationError("compression and flatten must lie in [0, 1]")
    if params.warp_bound > WARP_BOUND + 1e-12:
        raise GenerationError(f"warp displacement bound {params.warp_bound:.3f} exceeds {WARP_BOUND} body heights")
    ts = np.linspace(0.0, 1.0, 41)
    front = handle_points(template, params, 0, ts)
    back = handle_points(template, params, 1, ts)
    gap = np.min(np.linalg.norm(front[:, None] - back[None], axis=-1))
    if gap < 2.0 * template.handle_tube_radius:
        raise GenerationError(f"handles interpenetrate (centreline gap {gap:.4f})")
    # compressed legs of one handle must not pass through each other
    for line in (front, back):
        left, right = line[:15], line[26:][::-1]
        leg_gap = np.min(np.linalg.norm(left[:, None] - right[None], axis=-1))
        if leg_gap < 2.0 * template.handle_tube_radius:
            raise GenerationError(f"handle legs collapse onto each other (gap {leg_gap:.4f})")
