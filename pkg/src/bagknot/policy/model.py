"""Keypoint-conditioned diffusion transformer over action chunks."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .. import arrays
from ..bagsim import N_JOINTS, N_KEYPOINTS
from ..errors import ConfigError, InputError, NumericError

OBS_DIM = 3 * N_KEYPOINTS


@dataclass(frozen=True)
class PolicyConfig:
    D: int = 256
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    H: int = 16
    h_exec: int = 8
    K: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    steps: int = 2000
    kp_noise: float = 0.0  # std of Gaussian jitter on training keypoints (workspace units)
    seed: int = 0

    def __post_init__(self):
        if self.D % self.heads:
            raise ConfigError("D must be divisible by the number of heads")
        if not 1 <= self.h_exec <= self.H:
            raise ConfigError("h_exec must lie in [1, H]")
        if self.layers < 1 or self.K < 1:
            raise ConfigError("need at least one layer and one diffusion step")

    @classmethod
    def desk(cls, **overrides) -> "PolicyConfig":
        """Tiny configuration for CPU tests: D = 16, one layer."""
        base = dict(D=16, layers=1, heads=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "PolicyConfig":
        return cls(**d)

    def arch_hash(self) -> str:
        keys = ("D", "layers", "heads", "mlp_ratio", "H")
        return arrays.digest({k: v for k, v in self.to_dict().items() if k in keys})


def timestep_embedding(k: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = k.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def _modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class DiTBlock(nn.Module):
    """Self-attention over action tokens, cross-attention to the observation, MLP; adaLN-Zero modulated."""

    def __init__(self, D, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.self_attn = nn.MultiheadAttention(D, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.cross_attn = nn.MultiheadAttention(D, heads, batch_first=True)
        self.norm3 = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(D, mlp_ratio * D), nn.GELU(approximate="tanh"), nn.Linear(mlp_ratio * D, D))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(D, 9 * D))

    def forward(self, x, ctx, c):
        m = self.ada(c).chunk(9, dim=-1)
        h = _modulate(self.norm1(x), m[0], m[1])
        x = x + m[2].unsqueeze(1) * self.self_attn(h, h, h, need_weights=False)[0]
        h = _modulate(self.norm2(x), m[3], m[4])
        x = x + m[5].unsqueeze(1) * self.cross_attn(h, ctx, ctx, need_weights=False)[0]
        h = _modulate(self.norm3(x), m[6], m[7])
        return x + m[8].unsqueeze(1) * self.mlp(h)


class DiffusionPolicy(nn.Module):
    def __init__(self, config: PolicyConfig):
        super().__init__()
        D = config.D
        self.config = config
        self.mlp_x = nn.Sequential(nn.Linear(OBS_DIM, D), nn.SiLU(), nn.Linear(D, D))
        self.mlp_s = nn.Sequential(nn.Linear(N_JOINTS, D), nn.SiLU(), nn.Linear(D, D))
        self.type_emb = nn.Parameter(torch.randn(2, D) * 0.02)
        self.act_in = nn.Linear(N_JOINTS, D)
        self.pos_emb = nn.Parameter(torch.randn(config.H, D) * 0.02)
        self.t_mlp = nn.Sequential(nn.Linear(D, D), nn.SiLU(), nn.Linear(D, D))
        self.blocks = nn.ModuleList([DiTBlock(D, config.heads, config.mlp_ratio) for _ in range(config.layers)])
        self.norm_out = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.ada_out = nn.Sequential(nn.SiLU(), nn.Linear(D, 2 * D))
        self.act_out = nn.Linear(D, N_JOINTS)
        # normalisation statistics, fitted on demonstrations
        for name, n in (("x", OBS_DIM), ("s", N_JOINTS), ("a", N_JOINTS)):
            self.register_buffer(f"{name}_mean", torch.zeros(n))
            self.register_buffer(f"{name}_std", torch.ones(n))
        self.zero_init_()

    def zero_init_(self):
        """adaLN-Zero: every residual branch and the output start at zero."""
        for blk in self.blocks:
            nn.init.zeros_(blk.ada[-1].weight)
            nn.init.zeros_(blk.ada[-1].bias)
        for lin in (self.ada_out[-1], self.act_out):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    @staticmethod
    def _standardize(v, mean, std):
        return (v - mean) / torch.where(std > 0, std, torch.ones_like(std))

    @staticmethod
    def _check(x, name):
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite activations in policy layer {name}", layer=name)

    def embed(self, x, s):
        """z_obs (B, 2, D): row 0 from keypoints, row 1 from joint state."""
        zx = self.mlp_x(self._standardize(x, self.x_mean, self.x_std))
        zs = self.mlp_s(self._standardize(s, self.s_mean, self.s_std))
        return torch.stack([zx, zs], dim=1)

    def forward(self, noised, k, z_obs):
        """Predicted noise (B, H, 26) for standardized noised chunks (B, H, 26)."""
        x = self.act_in(noised) + self.pos_emb
        ctx = z_obs + self.type_emb
        c = self.t_mlp(timestep_embedding(k, self.config.D).to(x.dtype))
        self._check(x, "act_in")
        for i, blk in enumerate(self.blocks):
            x = blk(x, ctx, c)
            self._check(x, f"block{i}")
        shift, scale = self.ada_out(c).chunk(2, dim=-1)
        out = self.act_out(_modulate(self.norm_out(x), shift, scale))
        self._check(out, "act_out")
        return out

    def set_normalization(self, x, s, a, floor: float = 1e-3):
        with torch.no_grad():
            for name, v in (("x", x), ("s", s), ("a", a)):
                v = torch.as_tensor(np.asarray(v), dtype=self.x_mean.dtype)
                getattr(self, f"{name}_mean").copy_(v.mean(0))
                getattr(self, f"{name}_std").copy_(v.std(0, unbiased=False).clamp_min(floor))


@dataclass(eq=False)
class PolicyWeights:
    config: PolicyConfig
    net: DiffusionPolicy
    loss_curve: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: PolicyConfig, seed: int | None = None) -> "PolicyWeights":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed if seed is None else seed)
            net = DiffusionPolicy(config)
        return cls(config, net)

    @classmethod
    def zeros(cls, config: PolicyConfig) -> "PolicyWeights":
        """Every parameter and statistic zero: constant zero actions."""
        w = cls.init(config)
        with torch.no_grad():
            for t in w.net.state_dict().values():
                t.zero_()
        return w

    def randomize_(self, seed: int = 0, scale: float = 0.2) -> "PolicyWeights":
        """Overwrite every parameter with Gaussian noise (tests need non-degenerate weights)."""
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.net.parameters():
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
        return self

    @property
    def hash(self) -> str:
        h = hashlib.sha256(self.config.arch_hash().encode())
        for name, p in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ObservationEmbedding:
    z_obs: np.ndarray  # (2, D)

    @property
    def z_x(self) -> np.ndarray:
        return self.z_obs[0]

    @property
    def z_s(self) -> np.ndarray:
        return self.z_obs[1]


def _obs_tensors(keypoints, state, dtype):
    x = torch.as_tensor(np.asarray(keypoints, dtype=np.float64), dtype=dtype)
    s = torch.as_tensor(np.asarray(state, dtype=np.float64), dtype=dtype)
    if x.shape[-2:] != (N_KEYPOINTS, 3):
        raise InputError(f"expected {N_KEYPOINTS} x 3 keypoints, got {tuple(x.shape)}")
    if s.shape[-1] != N_JOINTS:
        raise InputError(f"expected a {N_JOINTS}-d joint state, got {tuple(s.shape)}")
    return x.reshape(*x.shape[:-2], OBS_DIM), s


@torch.no_grad()
def embed_observation(keypoints, state, weights: PolicyWeights) -> ObservationEmbedding:
    dtype = weights.net.x_mean.dtype
    x, s = _obs_tensors(keypoints, state, dtype)
    z = weights.net.embed(x[None], s[None])[0]
    return ObservationEmbedding(z.numpy().astype(np.float64))


@torch.no_grad()
def predict_noise(noised_chunk, k: int, z_obs, weights: PolicyWeights) -> np.ndarray:
    """Noise estimate for one standardized noised chunk (H x 26) at step k."""
    net = weights.net
    dtype = net.x_mean.dtype
    z = z_obs.z_obs if isinstance(z_obs, ObservationEmbedding) else z_obs
    a = torch.as_tensor(np.asarray(noised_chunk, dtype=np.float64), dtype=dtype)
    if tuple(a.shape) != (weights.config.H, N_JOINTS):
        raise InputError(f"chunk must be {weights.config.H} x {N_JOINTS}, got {tuple(a.shape)}")
    if not 0 <= int(k) < weights.config.K:
        raise InputError(f"step {k} outside [0, {weights.config.K})")
    out = net(a[None], torch.tensor([int(k)]), torch.as_tensor(np.asarray(z), dtype=dtype)[None])
    return out[0].numpy().astype(np.float64)
