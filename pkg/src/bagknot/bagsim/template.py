"""Parametric bag templates: a superellipsoid body open at the top plus two arc handles."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from ..errors import ConfigError

N_KEYPOINTS = 10
KEYPOINT_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)

# body superellipsoid exponents (horizontal squareness, vertical squareness)
BODY_EPS = (0.5, 0.4)


@dataclass(frozen=True)
class TemplateRanges:
    width: tuple = (0.8, 1.3)
    depth: tuple = (0.5, 0.75)
    height: tuple = (0.7, 1.1)
    attach_frac: tuple = (0.3, 0.6)  # |x| of each attach point as a fraction of width / 2
    arc_ratio: tuple = (1.1, 1.4)  # arc radius / half chord
    tube_radius: tuple = (0.015, 0.025)

    def validate(self):
        for name, (lo, hi) in asdict(self).items():
            if not lo < hi:
                raise ConfigError(f"template range {name}: min {lo} must be < max {hi}")
            if lo <= 0:
                raise ConfigError(f"template range {name}: values must be positive")
        if self.arc_ratio[0] <= 1.0:
            raise ConfigError("arc_ratio must exceed 1 (arc radius larger than half chord)")


@dataclass(frozen=True)
class BagTemplate:
    body_dims: tuple  # (width, depth, height)
    handle_arc_radius: float
    handle_tube_radius: float
    attach_offsets: tuple  # (x_left, x_right) on the rim, shared by front and back handles
    template_id: int
    keypoint_fractions: tuple = field(default=KEYPOINT_FRACTIONS)

    def __post_init__(self):
        if min(self.body_dims) <= 0 or self.handle_arc_radius <= 0 or self.handle_tube_radius <= 0:
            raise ConfigError("template dimensions must be strictly positive")
        x1, x2 = self.attach_offsets
        if not x1 < x2:
            raise ConfigError("attach offsets must be ordered left < right")
        if self.handle_arc_radius <= self.half_chord:
            raise ConfigError("handle arc radius must exceed the half chord")

    @cached_property
    def half_chord(self) -> float:
        # chord lengths differ slightly from x2 - x1 because the rim curves; use the true chord
        a, b = self.handle_anchors(0)
        return 0.5 * float(np.linalg.norm(b - a))

    @cached_property
    def handle_rise(self) -> float:
        """Height of the arc centre above the chord."""
        return float(np.sqrt(self.handle_arc_radius**2 - self.half_chord**2))

    @cached_property
    def handle_height(self) -> float:
        return self.handle_rise + self.handle_arc_radius

    @cached_property
    def arc_sweep(self) -> float:
        return np.pi + 2.0 * np.arctan2(self.handle_rise, self.half_chord)

    def rim_y(self, x) -> np.ndarray:
        w, d, _ = self.body_dims
        e1 = BODY_EPS[0]
        q = np.clip(np.abs(np.asarray(x, dtype=float) / (w / 2)), 0.0, 1.0)
        return (d / 2) * (1.0 - q ** (2.0 / e1)) ** (e1 / 2.0)

    def handle_anchors(self, handle: int):
        """World coordinates of the two attach points of ``handle`` (0 = front, 1 = back)."""
        h = self.body_dims[2]
        sign = 1.0 if handle == 0 else -1.0
        x1, x2 = self.attach_offsets
        a = np.array([x1, sign * float(self.rim_y(x1)), h])
        b = np.array([x2, sign * float(self.rim_y(x2)), h])
        return a, b

    def handle_frame(self, handle: int):
        """Origin and orthonormal (chord, up, outward) axes of the handle plane."""
        return self._frames[handle]

    @cached_property
    def _frames(self):
        return tuple(self._frame(h) for h in (0, 1))

    def _frame(self, handle):
        a, b = self.handle_anchors(handle)
        eu = (b - a) / np.linalg.norm(b - a)
        ev = np.array([0.0, 0.0, 1.0])
        en = np.cross(eu, ev)
        outward = 1.0 if handle == 0 else -1.0
        if en[1] * outward < 0:
            en = -en
        return 0.5 * (a + b), eu, ev, en

    @property
    def keypoint_ids(self) -> np.ndarray:
        return np.arange(N_KEYPOINTS)

    def keypoint_params(self):
        """(handle index, arc-length fraction) for every keypoint id."""
        fr = np.asarray(self.keypoint_fractions, dtype=float)
        handles = np.repeat([0, 1], len(fr))
        return handles, np.concatenate([fr, fr])

    def to_dict(self) -> dict:
        return {
            "body_dims": list(self.body_dims),
            "handle_arc_radius": self.handle_arc_radius,
            "handle_tube_radius": self.handle_tube_radius,
            "attach_offsets": list(self.attach_offsets),
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BagTemplate":
        return cls(
            body_dims=tuple(d["body_dims"]),
            handle_arc_radius=float(d["handle_arc_radius"]),
            handle_tube_radius=float(d["handle_tube_radius"]),
            attach_offsets=tuple(d["attach_offsets"]),
            template_id=int(d["template_id"]),
        )


def synthesize_template(ranges: TemplateRanges | None = None, seed: int = 0) -> BagTemplate:
    """Draw a bag template from ``ranges``; the same seed always yields the same bag."""
    ranges = ranges or TemplateRanges()
    ranges.validate()
    rng = np.random.default_rng([seed, 0x7E])
    u = lambda r: float(rng.uniform(*r))  # noqa: E731
    w, d, h = u(ranges.width), u(ranges.depth), u(ranges.height)
    q1, q2 = u(ranges.attach_frac), u(ranges.attach_frac)
    x1, x2 = -q1 * w / 2, q2 * w / 2
    ratio = u(ranges.arc_ratio)
    tube = u(ranges.tube_radius)
    # the arc radius is set from the true rim chord, so build once without it
    probe = BagTemplate((w, d, h), 1e9, tube, (x1, x2), int(seed))
    return BagTemplate((w, d, h), ratio * probe.half_chord, tube, (x1, x2), int(seed))
