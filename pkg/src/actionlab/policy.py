"""Gaussian MLP policy and value function with hand-written backprop.

Parameters live in one flat float64 vector (`FlatParams`) whose named
blocks are exposed as reshaped views. The flat vector is the coordinate
system everything else works in: checkpoints snapshot it, landscape
directions perturb it, and gradient analysis compares vectors in it.

The architecture is fixed (tanh MLPs, linear heads, state-independent
log-std), so reverse mode is written out explicitly instead of pulling in
an autodiff framework; tests check it against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from . import rng

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected tanh network shape (linear output head)."""

    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        dims = (self.input_dim, self.output_dim, *self.hidden_layers)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all layer dims must be >= 1, got {dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)


class ParamBlock(NamedTuple):
    name: str
    shape: tuple[int, ...]
    offset: int
    size: int


def build_layout(entries: list[tuple[str, tuple[int, ...]]]) -> tuple[ParamBlock, ...]:
    blocks = []
    offset = 0
    for name, shape in entries:
        size = int(np.prod(shape))
        blocks.append(ParamBlock(name, tuple(shape), offset, size))
        offset += size
    return tuple(blocks)


class FlatParams:
    """Flat float64 parameter vector plus named block layout.

    Block views alias the flat storage, so writing through a view mutates
    the vector and flatten/unflatten is exact by construction.
    """

    __slots__ = ("data", "layout", "_views")

    def __init__(self, data: np.ndarray, layout: tuple[ParamBlock, ...]):
        data = np.asarray(data, dtype=np.float64)
        total = layout[-1].offset + layout[-1].size if layout else 0
        if data.ndim != 1 or data.size != total:
            raise ConfigError(f"flat data has {data.size} entries, layout expects {total}")
        self.data = data
        self.layout = layout
        self._views = {b.name: data[b.offset : b.offset + b.size].reshape(b.shape) for b in layout}

    @classmethod
    def zeros(cls, layout: tuple[ParamBlock, ...]) -> "FlatParams":
        total = layout[-1].offset + layout[-1].size if layout else 0
        return cls(np.zeros(total), layout)

    def view(self, name: str) -> np.ndarray:
        try:
            return self._views[name]
        except KeyError:
            raise ConfigError(f"no parameter block named '{name}'") from None

    def copy(self) -> "FlatParams":
        return FlatParams(self.data.copy(), self.layout)

    def zeros_like(self) -> "FlatParams":
        return FlatParams.zeros(self.layout)

    def to_dict(self) -> dict[str, np.ndarray]:
        return {b.name: self.view(b.name).copy() for b in self.layout}

    @classmethod
    def from_dict(cls, layout: tuple[ParamBlock, ...], arrays: dict[str, np.ndarray]) -> "FlatParams":
        out = cls.zeros(layout)
        for b in layout:
            out.view(b.name)[...] = arrays[b.name]
        return out

    def same_layout(self, other: "FlatParams") -> bool:
        return self.layout == other.layout

    def __len__(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"FlatParams({self.data.size} params, {len(self.layout)} blocks)"


def layout_to_jsonable(layout: tuple[ParamBlock, ...]) -> list[list]:
    return [[b.name, list(b.shape), b.offset, b.size] for b in layout]


def layout_from_jsonable(raw: list[list]) -> tuple[ParamBlock, ...]:
    return tuple(ParamBlock(n, tuple(s), o, z) for n, s, o, z in raw)


def _mlp_entries(prefix: str, spec: MlpSpec) -> list[tuple[str, tuple[int, ...]]]:
    entries = []
    dims = spec.dims
    for i in range(len(dims) - 1):
        entries.append((f"{prefix}.W{i}", (dims[i], dims[i + 1])))
        entries.append((f"{prefix}.b{i}", (dims[i + 1],)))
    return entries


def mlp_forward(params: FlatParams, prefix: str, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Plain forward pass (no cache); x is (n, in) or (in,)."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != spec.input_dim:
        raise ConfigError(f"input has dim {h.shape[1]}, network expects {spec.input_dim}")
    n_layers = len(spec.dims) - 1
    for i in range(n_layers):
        h = h @ params.view(f"{prefix}.W{i}") + params.view(f"{prefix}.b{i}")
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


def mlp_forward_cached(
    params: FlatParams, prefix: str, spec: MlpSpec, x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping the per-layer activations for backprop."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [h]
    n_layers = len(spec.dims) - 1
    for i in range(n_layers):
        h = h @ params.view(f"{prefix}.W{i}") + params.view(f"{prefix}.b{i}")
        if i < n_layers - 1:
            h = np.tanh(h)
            cache.append(h)
    return h, cache


def mlp_backward(
    params: FlatParams,
    prefix: str,
    spec: MlpSpec,
    cache: list[np.ndarray],
    d_out: np.ndarray,
    grad: FlatParams,
) -> np.ndarray:
    """Accumulate d(loss)/d(weights) into grad; returns d(loss)/d(input)."""
    n_layers = len(spec.dims) - 1
    d = np.atleast_2d(d_out)
    for i in reversed(range(n_layers)):
        h_in = cache[i]
        grad.view(f"{prefix}.W{i}")[...] += h_in.T @ d
        grad.view(f"{prefix}.b{i}")[...] += d.sum(axis=0)
        d = d @ params.view(f"{prefix}.W{i}").T
        if i > 0:
            d = d * (1.0 - cache[i] ** 2)
    return d


class PolicyValueModel:
    """Separate policy and value MLPs sharing one flat parameter vector.

    Blocks: policy.W0/b0..W2/b2, policy.log_std, value.W0/b0..W2/b2.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden_layers: tuple[int, ...] = (64, 64)):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.policy_spec = MlpSpec(obs_dim, act_dim, tuple(hidden_layers))
        self.value_spec = MlpSpec(obs_dim, 1, tuple(hidden_layers))
        entries = _mlp_entries("policy", self.policy_spec)
        entries.append(("policy.log_std", (act_dim,)))
        entries.extend(_mlp_entries("value", self.value_spec))
        self.layout = build_layout(entries)

    def init_params(self, seed: int) -> FlatParams:
        """Scaled uniform init: gain sqrt(2) hidden, 0.01 policy head,
        1.0 value head; zero biases; log_std = 0."""
        gen = rng.stream("param-init", seed)
        params = FlatParams.zeros(self.layout)
        for prefix, spec, head_gain in (
            ("policy", self.policy_spec, 0.01),
            ("value", self.value_spec, 1.0),
        ):
            n_layers = len(spec.dims) - 1
            for i in range(n_layers):
                w = params.view(f"{prefix}.W{i}")
                fan_in = w.shape[0]
                gain = head_gain if i == n_layers - 1 else math.sqrt(2.0)
                bound = gain * math.sqrt(3.0 / fan_in)
                w[...] = gen.uniform(-bound, bound, size=w.shape)
        return params

    # -- policy --------------------------------------------------------
    def forward_policy(self, params: FlatParams, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and log-std of the action distribution at obs.

        Pure function of (params, obs); single observations come back as
        1-D vectors, batches as (n, act_dim).
        """
        mean = mlp_forward(params, "policy", self.policy_spec, obs)
        log_std = params.view("policy.log_std")
        if np.asarray(obs).ndim == 1:
            return mean[0], log_std.copy()
        return mean, log_std.copy()

    def forward_value(self, params: FlatParams, obs: np.ndarray) -> np.ndarray:
        v = mlp_forward(params, "value", self.value_spec, obs)[:, 0]
        if np.asarray(obs).ndim == 1:
            return v[0]
        return v

    def policy_forward_cached(self, params, obs):
        return mlp_forward_cached(params, "policy", self.policy_spec, obs)

    def value_forward_cached(self, params, obs):
        out, cache = mlp_forward_cached(params, "value", self.value_spec, obs)
        return out[:, 0], cache

    def policy_backward(self, params, cache, d_mean, grad: FlatParams) -> None:
        mlp_backward(params, "policy", self.policy_spec, cache, d_mean, grad)

    def value_backward(self, params, cache, d_v, grad: FlatParams) -> None:
        mlp_backward(params, "value", self.value_spec, cache, np.asarray(d_v)[:, None], grad)


def log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density, summed over action dims.

    Shapes broadcast: (n, d) mean/actions with (d,) log_std gives (n,);
    1-D inputs give a scalar.
    """
    mean = np.asarray(mean, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (actions - mean) * np.exp(-log_std)
    per_dim = -0.5 * z**2 - log_std - 0.5 * LOG_2PI
    return per_dim.sum(axis=-1)


def entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian (state independent)."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std + 0.5 * (1.0 + LOG_2PI)))


def sample_action(mean: np.ndarray, log_std: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Reparameterized draw a = mean + sigma * z from a named stream.

    The raw (unclipped) sample is returned; callers clip to [-1, 1] when
    applying it to the environment but keep the raw value and its
    log-prob for the importance ratio.
    """
    z = gen.standard_normal(np.shape(mean))
    return np.asarray(mean) + np.exp(np.asarray(log_std)) * z
