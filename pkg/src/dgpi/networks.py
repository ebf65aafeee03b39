"""Value and policy function approximators.

Each approximator owns a flat float64 parameter vector. ``net(x, weights)``
evaluates it on a single state ``(n,)`` or a batch ``(B, n)``; ``weights``
defaults to the stored parameters and may instead be a traced
:class:`~dgpi.autodiff.Var` so the output is differentiable in the
parameters as well as in ``x``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

OUTPUT_ACTIVATIONS = ("softplus", "linear", "tanh", "logsq")


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected ELU network layout.

    ``output_activation`` is one of ``softplus``, ``linear``, ``tanh`` (scaled
    componentwise by ``output_scale``) or ``logsq`` (``log(1 + z**2)``, used by
    zero-bias value networks since it vanishes at zero and is never negative).
    Softplus and logsq heads accept an optional single positive
    ``output_scale``, which lets a freshly initialised value network reach
    large cost-to-go magnitudes without huge last-layer weights.
    """

    widths: tuple[int, ...]
    output_activation: str = "linear"
    output_scale: tuple[float, ...] | None = None
    zero_bias: bool = False
    hidden_activation: str = "elu"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.output_scale is not None:
            object.__setattr__(self, "output_scale", tuple(float(s) for s in self.output_scale))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"need at least two positive layer widths, got {self.widths}")
        if self.hidden_activation != "elu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "tanh":
            scale = self.output_scale
            if scale is None or len(scale) != self.widths[-1] or min(scale) <= 0:
                raise ValueError("tanh output needs one positive scale per output")
        elif self.output_scale is not None:
            if self.output_activation == "linear":
                raise ValueError("linear output takes no scale")
            if len(self.output_scale) != 1 or self.output_scale[0] <= 0:
                raise ValueError("value output scale must be one positive number")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def layer_shapes(self) -> list[tuple[int, int, bool]]:
        return [(rows, cols, not self.zero_bias)
                for cols, rows in zip(self.widths[:-1], self.widths[1:])]

    @property
    def n_params(self) -> int:
        return sum(r * c + (r if b else 0) for r, c, b in self.layer_shapes())


@dataclass
class MlpParams:
    flat: np.ndarray
    shapes: list[tuple[int, int, bool]]

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        expected = sum(r * c + (r if b else 0) for r, c, b in self.shapes)
        if self.flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got shape {self.flat.shape}")


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for rows, cols, has_bias in spec.layer_shapes():
        bound = np.sqrt(6.0 / (rows + cols))
        chunks.append(rng.uniform(-bound, bound, size=rows * cols))
        if has_bias:
            chunks.append(np.zeros(rows))
    return MlpParams(np.concatenate(chunks), spec.layer_shapes())


def mlp_forward(spec: MlpSpec, weights, x):
    """Raw network output, shape ``x.shape[:-1] + (n_out,)``."""
    if ad._shape(x)[-1] != spec.n_in:
        raise ad.ShapeError(f"network expects {spec.n_in} inputs, got {ad._shape(x)}")
    if ad._shape(weights) != (spec.n_params,):
        raise ad.ShapeError(f"network expects {spec.n_params} parameters, got {ad._shape(weights)}")
    h = x
    offset = 0
    shapes = spec.layer_shapes()
    for k, (rows, cols, has_bias) in enumerate(shapes):
        w = ad.reshape(ad.index(weights, slice(offset, offset + rows * cols)), (rows, cols))
        offset += rows * cols
        h = ad.matvec(w, h)
        if has_bias:
            h = ad.add(h, ad.index(weights, slice(offset, offset + rows)))
            offset += rows
        if k < len(shapes) - 1:
            h = ad.elu(h)
    act = spec.output_activation
    if act == "tanh":
        return ad.mul(ad.tanh(h), np.array(spec.output_scale))
    if act == "linear":
        return h
    out = ad.softplus(h) if act == "softplus" else ad.log1p(ad.square(h))
    if spec.output_scale is not None:
        out = ad.scale(out, spec.output_scale[0])
    return out


class ValueNetwork:
    """Scalar value estimate ``V(x)``, fed the deviation ``x - shift``."""

    kind = "mlp"

    def __init__(self, spec: MlpSpec, params: MlpParams | np.ndarray, shift=None):
        if spec.n_out != 1:
            raise ValueError("value network must have a single output")
        if spec.output_activation not in ("softplus", "logsq"):
            raise ValueError("value network output must be non-negative (softplus or logsq)")
        self.spec = spec
        flat = params.flat if isinstance(params, MlpParams) else params
        self.params = np.array(flat, dtype=np.float64)
        self.shift = np.zeros(spec.n_in) if shift is None else np.asarray(shift, dtype=np.float64)

    @property
    def zero_at_shift(self) -> bool:
        """True when ``V(shift) == 0`` holds for every parameter vector."""
        return self.spec.zero_bias and self.spec.output_activation == "logsq"

    def __call__(self, x, weights=None):
        w = self.params if weights is None else weights
        return ad.index(mlp_forward(self.spec, w, ad.sub(x, self.shift)), (..., 0))


class PolicyNetwork:
    """Control law ``u = pi(x)``; input optionally shifted like the value network."""

    kind = "mlp"

    def __init__(self, spec: MlpSpec, params: MlpParams | np.ndarray, shift=None):
        if spec.output_activation not in ("linear", "tanh"):
            raise ValueError("policy output must be linear or tanh")
        self.spec = spec
        flat = params.flat if isinstance(params, MlpParams) else params
        self.params = np.array(flat, dtype=np.float64)
        self.shift = np.zeros(spec.n_in) if shift is None else np.asarray(shift, dtype=np.float64)

    def __call__(self, x, weights=None):
        w = self.params if weights is None else weights
        return mlp_forward(self.spec, w, ad.sub(x, self.shift))


class QuadraticValue:
    """``V(x) = (x - shift)^T P (x - shift)`` with ``P`` as the parameters."""

    kind = "quadratic"

    def __init__(self, P, shift=None):
        P = np.asarray(P, dtype=np.float64)
        self.n = P.shape[0]
        self.params = P.reshape(-1).copy()
        self.shift = np.zeros(self.n) if shift is None else np.asarray(shift, dtype=np.float64)
        self.zero_at_shift = True

    def __call__(self, x, weights=None):
        w = self.params if weights is None else weights
        P = ad.reshape(w, (self.n, self.n))
        d = ad.sub(x, self.shift)
        return ad.dot(d, ad.matvec(P, d))


class LinearPolicy:
    """``u = -K (x - shift)``."""

    kind = "linear"

    def __init__(self, K, shift=None):
        K = np.atleast_2d(np.asarray(K, dtype=np.float64))
        self.m, self.n = K.shape
        self.params = K.reshape(-1).copy()
        self.shift = np.zeros(self.n) if shift is None else np.asarray(shift, dtype=np.float64)

    def __call__(self, x, weights=None):
        w = self.params if weights is None else weights
        K = ad.reshape(w, (self.m, self.n))
        return ad.neg(ad.matvec(K, ad.sub(x, self.shift)))


# ---------------------------------------------------------------- checkpoints

def net_to_dict(net) -> dict:
    d = {"kind": net.kind, "shift": net.shift.tolist(), "params": net.params.tolist()}
    if net.kind == "mlp":
        spec = asdict(net.spec)
        spec["widths"] = list(spec["widths"])
        d["spec"] = spec
    elif net.kind == "linear":
        d["rows"] = net.m
    return d


def net_from_dict(d: dict, role: str):
    params = np.array(d["params"], dtype=np.float64)
    shift = np.array(d["shift"], dtype=np.float64)
    kind = d["kind"]
    if kind == "mlp":
        spec = MlpSpec(**d["spec"])
        if spec.n_params != params.size:
            raise ValueError("checkpoint parameter count does not match its layer widths")
        cls = ValueNetwork if role == "value" else PolicyNetwork
        return cls(spec, params, shift)
    if kind == "quadratic" and role == "value":
        n = int(round(np.sqrt(params.size)))
        return QuadraticValue(params.reshape(n, n), shift)
    if kind == "linear" and role == "policy":
        rows = int(d["rows"])
        return LinearPolicy(params.reshape(rows, -1), shift)
    raise ValueError(f"cannot load a {kind!r} approximator as the {role} function")


@dataclass
class Checkpoint:
    model: str
    value: object
    policy: object
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        doc = {"format": "dgpi-checkpoint/1", "model": self.model,
               "value": net_to_dict(self.value), "policy": net_to_dict(self.policy),
               "meta": self.meta}
        # json writes floats with repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "dgpi-checkpoint/1":
            raise ValueError(f"{path}: not a checkpoint document")
        return cls(doc["model"], net_from_dict(doc["value"], "value"),
                   net_from_dict(doc["policy"], "policy"), doc.get("meta", {}))
