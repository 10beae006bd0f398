"""Multilayer perceptron backbone shared by all model families."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from genbench.core import autodiff as ad

ACTIVATIONS = {"silu": ad.silu, "tanh": ad.tanh, "softplus": ad.softplus}

# Angular frequencies of the sinusoidal time features span this range for t in [0, 1].
TIME_FREQ_RANGE = (1.0, 1000.0)


class ShapeError(ValueError):
    """Input or parameter dimensions disagree with the config."""


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    output_dim: int
    hidden_width: int
    depth: int
    activation: str = "silu"
    time_embedding: bool = False
    embedding_dim: int | None = None

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_width", "depth"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"MLPConfig.{name} must be a positive integer, got {value!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_embedding and self.embedding_dim is None:
            object.__setattr__(self, "embedding_dim", self.hidden_width)
        if self.embedding_dim is not None and self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")

    @property
    def network_input_dim(self) -> int:
        return self.input_dim + (self.embedding_dim if self.time_embedding else 0)

    def layer_sizes(self) -> list[tuple[int, int]]:
        widths = [self.network_input_dim] + [self.hidden_width] * self.depth + [self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    def layout(self, prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for i, (fan_in, fan_out) in enumerate(self.layer_sizes()):
            out.append((f"{prefix}W{i}", (fan_in, fan_out)))
            out.append((f"{prefix}b{i}", (fan_out,)))
        return out

    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_sizes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_width": self.hidden_width,
            "depth": self.depth,
            "activation": self.activation,
            "time_embedding": self.time_embedding,
            "embedding_dim": self.embedding_dim,
        }


@dataclass
class ParameterVector:
    """Flat parameter storage with a named, ordered layout."""

    values: np.ndarray
    layout: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.layout = [(str(n), tuple(int(s) for s in shape)) for n, shape in self.layout]
        expected = sum(int(np.prod(s)) for _, s in self.layout)
        if expected != self.values.size:
            raise ShapeError(f"layout describes {expected} scalars but {self.values.size} were given")

    def __len__(self) -> int:
        return self.values.size

    def offsets(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        out, pos = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = (pos, pos + size, shape)
            pos += size
        return out

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views into ``values`` (no copies)."""
        return {name: self.values[lo:hi].reshape(shape) for name, (lo, hi, shape) in self.offsets().items()}

    def leaves(self) -> dict[str, ad.Tensor]:
        return {name: ad.Tensor(v, requires_grad=True) for name, v in self.tensors().items()}

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(grads[name]).ravel() for name, _ in self.layout]) if self.layout else np.zeros(0)

    def with_values(self, values: np.ndarray) -> ParameterVector:
        return ParameterVector(np.array(values, dtype=np.float64), list(self.layout))

    def copy(self) -> ParameterVector:
        return self.with_values(self.values.copy())

    @staticmethod
    def concatenate(parts: list[ParameterVector]) -> ParameterVector:
        values = np.concatenate([p.values for p in parts]) if parts else np.zeros(0)
        return ParameterVector(values, [entry for p in parts for entry in p.layout])


def init_params(config: MLPConfig, rng: np.random.Generator, prefix: str = "", zero_last: bool = False) -> ParameterVector:
    """Uniform fan-in weights, zero biases; optionally a zero output layer."""
    chunks = []
    sizes = config.layer_sizes()
    for i, (fan_in, fan_out) in enumerate(sizes):
        bound = 1.0 / np.sqrt(fan_in)
        if zero_last and i == len(sizes) - 1:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return ParameterVector(np.concatenate(chunks), config.layout(prefix))


def time_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of scalar times ``t`` (shape (n,)) -> (n, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    n_sin = dim // 2
    n_cos = dim - n_sin
    lo, hi = TIME_FREQ_RANGE
    freqs_sin = np.geomspace(lo, hi, n_sin) if n_sin else np.zeros(0)
    freqs_cos = np.geomspace(lo, hi, n_cos)
    return np.concatenate([np.sin(t[:, None] * freqs_sin), np.cos(t[:, None] * freqs_cos)], axis=1)


def mlp_forward(config: MLPConfig, params, x, t=None, prefix: str = ""):
    """Evaluate the network on a batch.

    ``params`` is a :class:`ParameterVector` or a mapping of tensor name to
    array/``Tensor``. ``x`` has shape (n, input_dim) or (input_dim,). With a
    time embedding, ``t`` is a scalar or an (n,) array in [0, 1].
    Returns a numpy array unless any operand is a ``Tensor``.
    """
    tensors = params.tensors() if isinstance(params, ParameterVector) else params
    if isinstance(params, ParameterVector) and len(params) != config.n_params():
        raise ShapeError(f"expected {config.n_params()} parameters, got {len(params)}")
    track = isinstance(x, ad.Tensor) or any(isinstance(v, ad.Tensor) for v in tensors.values())
    xv = ad.value_of(x)
    single = xv.ndim == 1
    if single:
        x = ad.reshape(x, (1, -1)) if isinstance(x, ad.Tensor) else xv[None, :]
    n = (ad.value_of(x)).shape[0]
    if ad.value_of(x).shape[1] != config.input_dim:
        raise ShapeError(f"input has {ad.value_of(x).shape[1]} columns, config expects {config.input_dim}")
    if config.time_embedding:
        if t is None:
            raise ShapeError("time input required by a time-embedded network")
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        x = ad.concat([x, time_features(t_arr, config.embedding_dim)], axis=1)
    elif t is not None:
        raise ShapeError("time input given to a network without time embedding")

    act = ACTIVATIONS[config.activation]
    h = ad.as_tensor(x)
    last = len(config.layer_sizes()) - 1
    for i in range(last + 1):
        h = h @ tensors[f"{prefix}W{i}"] + tensors[f"{prefix}b{i}"]
        if i < last:
            h = act(h)
    if single:
        h = ad.reshape(h, (-1,))
    return h if track else h.value
