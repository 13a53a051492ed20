"""Hierarchical point-set encoder producing unit-norm per-point features."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .. import arrays
from ..errors import ConfigError, InputError, NumericError
from .pointops import ball_query, canonicalize_cloud, farthest_point_sample, lexicographic_order, three_nn


@dataclass(frozen=True)
class SALevel:
    num_centroids: int
    radius: float
    neighbors: int
    widths: tuple


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 512
    sa_levels: tuple = (
        SALevel(512, 0.2, 32, (64, 64, 128)),
        SALevel(128, 0.4, 64, (128, 128, 256)),
    )
    fp_widths: tuple = ((256, 256), (128, 128, 128))  # coarse-to-fine
    head_widths: tuple = (256,)
    tau: float = 0.07
    m: int = 150
    r_excl: float = 0.05
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.d < 8:
            raise ConfigError("feature dimension d must be >= 8")
        if self.tau <= 0:
            raise ConfigError("temperature tau must be positive")
        if self.m < 1:
            raise ConfigError("need at least one negative per anchor")
        radii = [lvl.radius for lvl in self.sa_levels]
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError("set-abstraction radii must increase strictly")
        if len(self.fp_widths) != len(self.sa_levels):
            raise ConfigError("need one feature-propagation block per set-abstraction level")

    @classmethod
    def desk(cls, **overrides) -> "EncoderConfig":
        """Reduced configuration for CPU runs: d = 64 and quartered widths."""
        base = dict(
            d=64,
            sa_levels=(SALevel(128, 0.2, 16, (16, 16, 32)), SALevel(32, 0.4, 32, (32, 32, 64))),
            fp_widths=((64, 64), (32, 32, 32)),
            head_widths=(64,),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["sa_levels"] = tuple(
            SALevel(int(s["num_centroids"]), float(s["radius"]), int(s["neighbors"]), tuple(s["widths"])) for s in d["sa_levels"]
        )
        d["fp_widths"] = tuple(tuple(w) for w in d["fp_widths"])
        d["head_widths"] = tuple(d["head_widths"])
        return cls(**d)

    def arch_hash(self) -> str:
        keys = ("d", "sa_levels", "fp_widths", "head_widths")
        return arrays.digest({k: v for k, v in self.to_dict().items() if k in keys})


# ---------------------------------------------------------------------------
# per-cloud sampling/grouping structure


@dataclass
class PointGraph:
    """Index structure of one cloud, in canonical point order."""

    xyz: np.ndarray  # (N, 3) canonical coordinates, sorted
    order: np.ndarray  # sorted position -> input index
    transform: object
    centroids: list = field(default_factory=list)  # per level, indices into the previous level
    groups: list = field(default_factory=list)  # per level, (m, K) indices into the previous level
    interp: list = field(default_factory=list)  # per level, (idx, w) from level l onto level l-1

    @property
    def n(self) -> int:
        return len(self.xyz)


def build_graph(cloud, config: EncoderConfig) -> PointGraph:
    """Canonicalise the cloud, sort it lexicographically, and precompute FPS / ball queries."""
    canon, tf = canonicalize_cloud(cloud)
    order = lexicographic_order(canon)
    xyz = canon[order]
    g = PointGraph(xyz=xyz, order=order, transform=tf)
    level_xyz = [xyz]
    prev = xyz
    for lvl in config.sa_levels:
        k = min(lvl.num_centroids, len(prev))
        cidx = farthest_point_sample(prev, k)
        cxyz = prev[cidx]
        g.centroids.append(cidx)
        g.groups.append(ball_query(prev, cxyz, lvl.radius, lvl.neighbors))
        level_xyz.append(cxyz)
        prev = cxyz
    for l in range(1, len(level_xyz)):
        g.interp.append(three_nn(level_xyz[l - 1], level_xyz[l]))
    return g


class PointNorm(nn.Module):
    """Per-cloud channel normalisation over all point axes (batch-independent)."""

    def __init__(self, c: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(c))
        self.bias = nn.Parameter(torch.zeros(c))

    def forward(self, x):
        dims = tuple(range(1, x.dim() - 1))
        mu = x.mean(dim=dims, keepdim=True)
        var = x.var(dim=dims, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


def _mlp(widths_in, widths, norm: bool = True):
    layers = []
    c = widths_in
    for w in widths:
        layers += [nn.Linear(c, w), PointNorm(w), nn.ReLU()] if norm else [nn.Linear(c, w), nn.ReLU()]
        c = w
    return nn.Sequential(*layers), c


def _batch_gather(feats, idx):
    """feats (B, n, C), idx (B, ...) -> (B, ..., C)."""
    B = feats.shape[0]
    flat = idx.reshape(B, -1)
    out = torch.gather(feats, 1, flat.unsqueeze(-1).expand(-1, -1, feats.shape[-1]))
    return out.reshape(*idx.shape, feats.shape[-1])


class PointEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.sa = nn.ModuleList()
        chans = [3]  # level-0 features are the canonical coordinates
        c = 3
        for lvl in config.sa_levels:
            mlp, c = _mlp(c + 3, lvl.widths)
            self.sa.append(mlp)
            chans.append(c)
        self.fp = nn.ModuleList()
        c_up = chans[-1]
        for l, widths in zip(range(len(config.sa_levels), 0, -1), config.fp_widths):
            mlp, c_up = _mlp(c_up + chans[l - 1], widths)
            self.fp.append(mlp)
        head, c = _mlp(c_up, config.head_widths)
        self.head = nn.Sequential(*head, nn.Linear(c, config.d))

    @staticmethod
    def _check(x, name):
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite activations in encoder layer {name}", layer=name)

    def forward(self, graphs: list[PointGraph]) -> torch.Tensor:
        """Unit-norm features (B, N, d) in each graph's sorted point order."""
        dtype = next(self.parameters()).dtype
        n = {g.n for g in graphs}
        if len(n) != 1:
            raise InputError("clouds in one batch must have the same size")
        xyz = torch.as_tensor(np.stack([g.xyz for g in graphs]), dtype=dtype)
        feats = [xyz]
        level_xyz = [xyz]
        for l, (lvl, mlp) in enumerate(zip(self.config.sa_levels, self.sa)):
            cidx = torch.as_tensor(np.stack([g.centroids[l] for g in graphs]))
            gidx = torch.as_tensor(np.stack([g.groups[l] for g in graphs]))
            cxyz = _batch_gather(level_xyz[-1], cidx)
            rel = (_batch_gather(level_xyz[-1], gidx) - cxyz.unsqueeze(2)) / lvl.radius
            grouped = torch.cat([rel, _batch_gather(feats[-1], gidx)], dim=-1)
            f = mlp(grouped).amax(dim=2)
            self._check(f, f"sa{l + 1}")
            feats.append(f)
            level_xyz.append(cxyz)
        up = feats[-1]
        for j, mlp in enumerate(self.fp):
            l = len(self.sa) - j  # propagate level l onto level l-1
            idx = torch.as_tensor(np.stack([g.interp[l - 1][0] for g in graphs]))
            w = torch.as_tensor(np.stack([g.interp[l - 1][1] for g in graphs]), dtype=dtype)
            interp = (_batch_gather(up, idx) * w.unsqueeze(-1)).sum(dim=2)
            up = mlp(torch.cat([interp, feats[l - 1]], dim=-1))
            self._check(up, f"fp{l}")
        out = self.head(up)
        self._check(out, "head")
        norm = out.norm(dim=-1, keepdim=True)
        if (norm == 0).any():
            raise NumericError("zero feature vector before normalisation", layer="head")
        return out / norm


@dataclass(eq=False)
class EncoderWeights:
    config: EncoderConfig
    net: PointEncoder
    loss_curve: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: EncoderConfig, seed: int | None = None) -> "EncoderWeights":
        gen_seed = config.seed if seed is None else seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(gen_seed)
            net = PointEncoder(config)
        return cls(config, net)

    @property
    def hash(self) -> str:
        h = hashlib.sha256(self.config.arch_hash().encode())
        for name, p in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())
        return h.hexdigest()

    def state_arrays(self) -> dict:
        return {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}


def encode_graphs(graphs, weights: EncoderWeights, grad: bool = False) -> torch.Tensor:
    ctx = torch.enable_grad() if grad else torch.no_grad()
    with ctx:
        return weights.net(graphs)


def encode(cloud, weights: EncoderWeights) -> np.ndarray:
    """Per-point unit features (n, d) in the input order of ``cloud``."""
    g = build_graph(cloud, weights.config)
    feats = encode_graphs([g], weights)[0].numpy()
    out = np.empty_like(feats)
    out[g.order] = feats
    return out
