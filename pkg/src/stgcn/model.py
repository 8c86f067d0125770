"""ST-GCN units and the 9-layer network assembled from them."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import engine as E
from .engine import ShapeError, Tensor
from .partition import PartitionedAdjacency

FULL_CHANNELS = (64, 64, 64, 128, 128, 128, 256, 256, 256)
FULL_STRIDES = (1, 1, 1, 2, 1, 1, 2, 1, 1)


class Module:
    """Minimal parameter container: explicit registration, deterministic order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_buffer(self, name: str, arr: np.ndarray) -> np.ndarray:
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self._buffers.items():
            yield prefix + name, arr
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if t.requires_grad]

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: t.data for n, t in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, arr in state.items():
            target = own[name].data if name in own else bufs[name]
            if target.shape != arr.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} does not match model {target.shape}")
            target[...] = arr


class TemporalConv(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 1, stride: int = 1):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"temporal kernel must be odd, got {kernel}")
        self.kernel, self.stride = kernel, stride
        self.fan_in = in_channels * kernel
        dt = E.get_default_dtype()
        self.weight = self.add_param("weight", Tensor(np.zeros((out_channels, in_channels, kernel, 1), dt), True))
        self.bias = self.add_param("bias", Tensor(np.zeros(out_channels, dt), True))

    def __call__(self, x: Tensor) -> Tensor:
        return E.add_bias(E.conv2d_temporal(x, self.weight, self.stride), self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        dt = E.get_default_dtype()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", Tensor(np.ones(channels, dt), True))
        self.beta = self.add_param("beta", Tensor(np.zeros(channels, dt), True))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dt))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dt))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return E.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        dt = E.get_default_dtype()
        self.fan_in = in_features
        self.weight = self.add_param("weight", Tensor(np.zeros((in_features, out_features), dt), True))
        self.bias = self.add_param("bias", Tensor(np.zeros(out_features, dt), True))

    def __call__(self, x: Tensor) -> Tensor:
        return E.add_bias(x @ self.weight, self.bias)


@dataclass(frozen=True)
class STGCNUnitConfig:
    in_channels: int
    out_channels: int
    temporal_kernel: int = 9
    temporal_stride: int = 1
    dropout_p: float = 0.5
    residual: bool = True

    def __post_init__(self):
        if self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal kernel must be odd, got {self.temporal_kernel}")
        if self.temporal_stride not in (1, 2):
            raise ValueError(f"temporal stride must be 1 or 2, got {self.temporal_stride}")
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout_p}")


class STGCNUnit(Module):
    """Spatial graph contraction, then Γ×1 temporal convolution, with a residual path."""

    def __init__(self, cfg: STGCNUnitConfig, num_subsets: int, num_joints: int, edge_importance: bool = True):
        super().__init__()
        self.cfg = cfg
        self.K, self.V = num_subsets, num_joints
        self.edge_importance = edge_importance
        C, Co = cfg.in_channels, cfg.out_channels
        self.gcn = self.add_child("gcn", TemporalConv(C, num_subsets * Co, 1))
        self.bn1 = self.add_child("bn1", BatchNorm(Co))
        self.tcn = self.add_child("tcn", TemporalConv(Co, Co, cfg.temporal_kernel, cfg.temporal_stride))
        self.bn2 = self.add_child("bn2", BatchNorm(Co))
        dt = E.get_default_dtype()
        self.mask = self.add_param("mask", Tensor(np.ones((num_subsets, num_joints, num_joints), dt), edge_importance))
        if not cfg.residual:
            self.res_mode = "none"
        elif C == Co and cfg.temporal_stride == 1:
            self.res_mode = "identity"
        else:
            self.res_mode = "project"
            self.res_conv = self.add_child("res_conv", TemporalConv(C, Co, 1, cfg.temporal_stride))
            self.res_bn = self.add_child("res_bn", BatchNorm(Co))

    def effective_adjacency(self, adj: Tensor) -> Tensor:
        return E.mul(adj, self.mask) if self.edge_importance else adj

    def spatial(self, x: Tensor, adj: Tensor) -> Tensor:
        """sum_j (normalized A_j ⊗ M_j) applied over joints to x W_j."""
        N, C, T, V = x.shape
        if C != self.cfg.in_channels:
            raise ShapeError(f"unit expects {self.cfg.in_channels} channels, got {C}")
        if V != self.V or adj.shape != (self.K, V, V):
            raise ShapeError(f"input has {V} joints / adjacency {adj.shape}; unit built for K={self.K}, V={self.V}")
        z = self.gcn(x).reshape(N, self.K, self.cfg.out_channels, T, V)
        return E.graph_contract(z, self.effective_adjacency(adj))

    def __call__(self, x: Tensor, adj: Tensor, training: bool = False, rng=None) -> Tensor:
        y = E.relu(self.bn1(self.spatial(x, adj), training))
        y = self.bn2(self.tcn(y), training)
        y = E.dropout(y, self.cfg.dropout_p, training, rng)
        if self.res_mode == "identity":
            y = y + x
        elif self.res_mode == "project":
            y = y + self.res_bn(self.res_conv(x), training)
        return E.relu(y)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    channels: tuple[int, ...] = FULL_CHANNELS
    strides: tuple[int, ...] = FULL_STRIDES
    temporal_kernel: int = 9
    dropout: float = 0.5
    edge_importance: bool = True
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("channel plan and stride plan must be non-empty and equally long")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"], d["strides"] = list(self.channels), list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


class STGCN(Module):
    def __init__(self, num_classes: int, adjacency: PartitionedAdjacency, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.num_classes = num_classes
        self.K, self.V = adjacency.num_subsets, adjacency.num_joints
        self.adjacency = Tensor(adjacency.normalized)
        self.data_bn = self.add_child("data_bn", BatchNorm(config.in_channels * self.V))
        self.units: list[STGCNUnit] = []
        c_in = config.in_channels
        for idx, (c_out, s) in enumerate(zip(config.channels, config.strides)):
            cfg = STGCNUnitConfig(c_in, c_out, config.temporal_kernel, s, config.dropout,
                                  residual=config.residual and idx > 0)
            self.units.append(self.add_child(f"unit{idx + 1}", STGCNUnit(cfg, self.K, self.V, config.edge_importance)))
            c_in = c_out
        self.fc = self.add_child("fc", Linear(c_in, num_classes))

    @property
    def feature_dim(self) -> int:
        return self.config.channels[-1]

    def masks(self) -> list[np.ndarray]:
        return [u.mask.data for u in self.units]

    def __call__(self, x, training: bool = False, rng=None, trace: list | None = None) -> Tensor:
        """Logits for a batch of (N, C, T, V, M) skeleton sequences."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 5:
            raise ShapeError(f"expected input (N, C, T, V, M), got {x.shape}")
        N, C, T, V, M = x.shape
        if V != self.V:
            raise ShapeError(f"input has {V} joints but the adjacency was built for {self.V}")
        if C != self.config.in_channels or M < 1 or T < 1:
            raise ShapeError(f"bad input shape {x.shape}")
        h = x.permute(0, 4, 1, 3, 2).reshape(N * M, C * V, T)
        h = self.data_bn(h, training)
        h = h.reshape(N * M, C, V, T).permute(0, 1, 3, 2)
        if trace is not None:
            trace.append(("input", h.shape))
        for i, unit in enumerate(self.units):
            h = unit(h, self.adjacency, training, rng)
            if trace is not None:
                trace.append((f"unit{i + 1}", h.shape))
        h = E.global_avg_pool(h)
        if trace is not None:
            trace.append(("pool", h.shape))
        h = h.reshape(N, M, self.feature_dim).mean(axis=1)
        logits = self.fc(h)
        if trace is not None:
            trace.append(("logits", logits.shape))
        return logits


def init_parameters(net: Module, seed: int) -> None:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, unit BN, all-one masks."""
    rng = np.random.default_rng(seed)
    for m in net.modules():
        if isinstance(m, (TemporalConv, Linear)):
            bound = math.sqrt(6.0 / m.fan_in)
            m.weight.data[...] = rng.uniform(-bound, bound, size=m.weight.shape)
            m.bias.data[...] = 0
        elif isinstance(m, BatchNorm):
            m.gamma.data[...] = 1
            m.beta.data[...] = 0
            m.running_mean[...] = 0
            m.running_var[...] = 1
        elif isinstance(m, STGCNUnit):
            m.mask.data[...] = 1
