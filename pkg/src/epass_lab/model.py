"""Encoder, classifier, projector heads and the EMA teacher.

Parameters live in an ordered ``dict`` of float64 arrays so the optimizer,
the EMA copy and the checkpoint writer can walk them in a fixed order::

    enc.{i}.W, enc.{i}.b        encoder layers (ReLU after each)
    cls.W, cls.b                linear classifier
    proj.{k}.0.W ... proj.{k}.1.b   two-layer projector head k
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import numcore as nc
from .errors import InvalidSpec, ShapeMismatch


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    num_classes: int
    encoder_layers: tuple = (448, 448, 64)
    proj_hidden: int = 64
    proj_dim: int = 16
    num_projectors: int = 1

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(int(w) for w in self.encoder_layers))
        widths = (self.input_dim, self.num_classes, self.proj_hidden, *self.encoder_layers)
        if not self.encoder_layers or any(w < 1 for w in widths):
            raise InvalidSpec("all layer widths must be >= 1")
        if self.num_projectors < 1:
            raise InvalidSpec("need at least one projector")
        if self.proj_dim < 2:
            raise InvalidSpec("projector output dimension must be >= 2")

    @property
    def feature_dim(self):
        return self.encoder_layers[-1]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "encoder_layers": list(self.encoder_layers),
            "proj_hidden": self.proj_hidden,
            "proj_dim": self.proj_dim,
            "num_projectors": self.num_projectors,
        }


def _layer_count(fan_in, fan_out):
    return fan_in * fan_out + fan_out


def projector_param_count(spec):
    return _layer_count(spec.feature_dim, spec.proj_hidden) + _layer_count(spec.proj_hidden, spec.proj_dim)


def param_count(spec):
    """Closed-form parameter count for ``spec``."""
    dims = (spec.input_dim, *spec.encoder_layers)
    enc = sum(_layer_count(a, b) for a, b in zip(dims[:-1], dims[1:]))
    cls = _layer_count(spec.feature_dim, spec.num_classes)
    return enc + cls + spec.num_projectors * projector_param_count(spec)


def projector_overhead(spec):
    """Extra parameters of ``spec`` relative to the same net with one projector.

    Returns ``(extra, fraction_of_total)``.
    """
    extra = (spec.num_projectors - 1) * projector_param_count(spec)
    return extra, extra / param_count(spec)


@dataclass
class ModelState:
    spec: NetworkSpec
    params: dict
    seed: int
    projector_seeds: list = field(default_factory=list)

    def copy(self):
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()},
                          self.seed, list(self.projector_seeds))

    def n_params(self):
        return sum(v.size for v in self.params.values())


def _uniform_layer(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


def init(spec, seed):
    """Draw initial parameters; projector ``k`` uses its own stream ``(seed, 1, k)``."""
    if not isinstance(spec, NetworkSpec):
        raise InvalidSpec("expected a NetworkSpec")
    params = {}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    dims = (spec.input_dim, *spec.encoder_layers)
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"enc.{i}.W"], params[f"enc.{i}.b"] = _uniform_layer(rng, a, b)
    params["cls.W"], params["cls.b"] = _uniform_layer(rng, spec.feature_dim, spec.num_classes)
    proj_seeds = []
    for k in range(spec.num_projectors):
        prng = np.random.default_rng(np.random.SeedSequence([seed, 1, k]))
        proj_seeds.append([seed, 1, k])
        params[f"proj.{k}.0.W"], params[f"proj.{k}.0.b"] = _uniform_layer(prng, spec.feature_dim, spec.proj_hidden)
        params[f"proj.{k}.1.W"], params[f"proj.{k}.1.b"] = _uniform_layer(prng, spec.proj_hidden, spec.proj_dim)
    return ModelState(spec, params, seed, proj_seeds)


# Forward functions take ``params`` as a mapping of arrays or tape nodes.

def encode(params, spec, x):
    h = x
    for i in range(len(spec.encoder_layers)):
        h = nc.relu(nc.linear(h, params[f"enc.{i}.W"], params[f"enc.{i}.b"]))
    return h


def logits(params, feats):
    return nc.linear(feats, params["cls.W"], params["cls.b"])


def project(params, feats, k):
    h = nc.relu(nc.linear(feats, params[f"proj.{k}.0.W"], params[f"proj.{k}.0.b"]))
    return nc.linear(h, params[f"proj.{k}.1.W"], params[f"proj.{k}.1.b"])


def _check_input(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"expected (n, {spec.input_dim}) input, got {x.shape}")
    return x


def classify(state, x):
    """Row-stochastic class probabilities ``softmax(h(f(x)))``."""
    x = _check_input(state.spec, x)
    return nc.softmax_t(logits(state.params, encode(state.params, state.spec, x)), 1.0)


def project_all(state, x):
    """Raw (unnormalized) embeddings from every projector head, in order."""
    x = _check_input(state.spec, x)
    feats = encode(state.params, state.spec, x)
    return [project(state.params, feats, k) for k in range(state.spec.num_projectors)]


@dataclass
class EmaState:
    params: dict
    momentum: float = 0.999

    @classmethod
    def from_model(cls, state, momentum=0.999):
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("EMA momentum must lie in [0, 1]")
        return cls({k: v.copy() for k, v in state.params.items()}, momentum)

    def as_model(self, spec, seed=0):
        """Read-only view usable with ``classify``/``project_all``."""
        return ModelState(spec, self.params, seed)


def ema_update(ema, current):
    """``theta_ema <- m * theta_ema + (1 - m) * theta`` for every parameter, in place."""
    if ema.params.keys() != current.params.keys():
        raise ShapeMismatch("EMA and model parameter sets differ")
    for name, shadow in ema.params.items():
        live = current.params[name]
        if shadow.shape != live.shape:
            raise ShapeMismatch(f"{name}: {shadow.shape} vs {live.shape}")
        kernels.lerp_(shadow, live, ema.momentum)
    return ema
