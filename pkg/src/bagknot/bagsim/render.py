"""Point-cloud frames and frame sequences from a deformed template."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..errors import GenerationError, InputError
from .deform import (
    DeformationParams,
    body_points,
    check_params,
    handle_points,
    interpolate,
    keypoint_positions,
    smoothstep,
)
from .template import N_KEYPOINTS, BagTemplate

# parametric mesh resolution
BODY_AZ, BODY_EL = 48, 12
TUBE_T, TUBE_PSI = 40, 8
MIN_AREA_RATIO = 0.25


@dataclass(eq=False)
class Frame:
    cloud: np.ndarray  # (n_pc, 3)
    keypoints: np.ndarray  # (n, 3), row i belongs to keypoint_ids[i]
    keypoint_ids: np.ndarray
    deformation: DeformationParams
    seed: int
    template_id: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def n_pc(self) -> int:
        return len(self.cloud)


def _grid_faces(n_rows, n_cols, wrap_cols):
    """Triangle indices for a (n_rows+1) x (n_cols [+1]) vertex grid."""
    cols = n_cols if wrap_cols else n_cols + 1
    faces = []
    for i in range(n_rows):
        for j in range(n_cols):
            j1 = (j + 1) % cols if wrap_cols else j + 1
            a, b = i * cols + j, i * cols + j1
            c, d = (i + 1) * cols + j, (i + 1) * cols + j1
            faces.append((a, b, d))
            faces.append((a, d, c))
    return np.asarray(faces, dtype=np.int64)


@lru_cache(maxsize=None)
def _mesh_params():
    el = np.linspace(-np.pi / 2, 0.0, BODY_EL + 1)
    az = np.linspace(0.0, 2 * np.pi, BODY_AZ, endpoint=False)
    body_el, body_az = np.meshgrid(el, az, indexing="ij")
    body_faces = _grid_faces(BODY_EL, BODY_AZ, wrap_cols=True)

    t = np.linspace(0.0, 1.0, TUBE_T + 1)
    psi = np.linspace(0.0, 2 * np.pi, TUBE_PSI, endpoint=False)
    tube_t, tube_psi = np.meshgrid(t, psi, indexing="ij")
    tube_faces = _grid_faces(TUBE_T, TUBE_PSI, wrap_cols=True)
    return (body_az.ravel(), body_el.ravel(), body_faces), (tube_t.ravel(), tube_psi.ravel(), tube_faces)


def deformed_mesh(template: BagTemplate, params: DeformationParams):
    """Vertices and triangles of the deformed surface (body, front handle, back handle)."""
    (baz, bel, bfaces), (tt, tpsi, tfaces) = _mesh_params()
    parts = [body_points(template, params, baz, bel)]
    faces = [bfaces]
    offset = len(baz)
    for hnd in (0, 1):
        parts.append(handle_points(template, params, hnd, tt, tpsi))
        faces.append(tfaces + offset)
        offset += len(tt)
    return np.concatenate(parts), np.concatenate(faces)


def triangle_areas(verts, faces):
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_sites(verts, faces, n, rng):
    """Area-uniform surface sites as (triangle index, barycentric r1, r2)."""
    areas = triangle_areas(verts, faces)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    tri = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(faces) - 1)
    return tri, np.sqrt(rng.random(n)), rng.random(n)


def place_sites(verts, faces, sites) -> np.ndarray:
    tri, r1, r2 = sites
    a, b, c = (verts[faces[tri, k]] for k in range(3))
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def sample_surface(verts, faces, n, rng) -> np.ndarray:
    """Area-uniform samples on a triangle mesh."""
    return place_sites(verts, faces, sample_sites(verts, faces, n, rng))


@lru_cache(maxsize=256)
def rest_area(template: BagTemplate) -> float:
    return float(triangle_areas(*deformed_mesh(template, DeformationParams.identity())).sum())


def sequence_params(start: DeformationParams, end: DeformationParams, T_seq: int) -> list:
    """Per-frame parameters along the smooth-step path."""
    if T_seq < 2:
        raise InputError("a sequence needs at least 2 frames")
    out = []
    for i in range(T_seq):
        w = float(smoothstep(i / (T_seq - 1)))
        out.append(start if w == 0.0 else end if w == 1.0 else interpolate(start, end, w))
    return out


def _checked_mesh(template, params):
    check_params(template, params)
    verts, faces = deformed_mesh(template, params)
    if not np.all(np.isfinite(verts)):
        raise GenerationError("non-finite deformed surface")
    area = triangle_areas(verts, faces).sum()
    rest = rest_area(template)
    if area < MIN_AREA_RATIO * rest:
        raise GenerationError(f"surface collapsed to {area / rest:.2f} of its rest area")
    return verts, faces


def _sites_rng(template, seed):
    return np.random.default_rng([seed, template.template_id, 0x5A])


def render_frame(template: BagTemplate, params: DeformationParams, n_pc: int = 4096, seed: int = 0, sites=None) -> Frame:
    """Sample a segmented cloud of the deformed bag and place its keypoints exactly.

    ``sites`` (triangle, barycentric) pins the cloud to given material
    locations instead of drawing fresh area-uniform ones.
    """
    if n_pc < 64:
        raise InputError(f"n_pc must be at least 64, got {n_pc}")
    verts, faces = _checked_mesh(template, params)
    if sites is None:
        sites = sample_sites(verts, faces, n_pc, _sites_rng(template, seed))
    cloud = place_sites(verts, faces, sites)
    return Frame(
        cloud=cloud,
        keypoints=keypoint_positions(template, params),
        keypoint_ids=np.arange(N_KEYPOINTS),
        deformation=params,
        seed=int(seed),
        template_id=template.template_id,
    )


def generate_sequence(
    template: BagTemplate,
    start: DeformationParams,
    end: DeformationParams,
    T_seq: int,
    seed: int,
    n_pc: int = 4096,
) -> list[Frame]:
    """Frames along a smooth-step path from ``start`` to ``end``.

    Surface sites are drawn once, area-uniform on the first frame, and then
    carried along by the deformation, so a given cloud index follows the
    same material location from frame to frame (the simulated counterpart
    of a camera watching the same material).
    """
    if n_pc < 64:
        raise InputError(f"n_pc must be at least 64, got {n_pc}")
    path = sequence_params(start, end, T_seq)
    frames = []
    sites = None
    for i, params in enumerate(path):
        try:
            if sites is None:
                sites = sample_sites(*_checked_mesh(template, params), n_pc, _sites_rng(template, seed))
            frame = render_frame(template, params, n_pc, seed, sites=sites)
        except GenerationError as exc:
            raise GenerationError(f"sequence frame {i}: {exc}") from exc
        frame.meta["frame_index"] = i
        frames.append(frame)
    return frames
