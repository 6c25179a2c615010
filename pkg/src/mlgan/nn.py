"""Linear layers, MLP forward, Adam, and text checkpoints.

Models are plain containers of numpy parameter arrays. Each training step
registers the current parameters as requires_grad leaves on a fresh tape,
computes the loss graph, and applies a functional Adam update to the numpy
side. Nothing here mutates shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


class CheckpointError(Exception):
    pass


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes {self.weight.shape} / {self.bias.shape}")


@dataclass
class Mlp:
    layers: list[LinearLayer]
    hidden_activation: str = "leaky_relu"  # or "sigmoid"
    output_activation: str = "sigmoid"     # or "none"
    leaky_slope: float = 0.2

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weight.shape[1]] + [
            l.weight.shape[0] for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.append(l.weight)
            out.append(l.bias)
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "Mlp":
        layers = [LinearLayer(params[2 * i], params[2 * i + 1])
                  for i in range(len(self.layers))]
        return Mlp(layers, self.hidden_activation, self.output_activation,
                   self.leaky_slope)


def init_params(sizes: list[int], rng: np.random.Generator,
                hidden_activation: str = "leaky_relu",
                output_activation: str = "sigmoid",
                leaky_slope: float = 0.2) -> Mlp:
    """Glorot-uniform weights, zero biases. Deterministic given rng state."""
    if len(sizes) < 2:
        raise ValueError("layer size list needs input and output sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        layers.append(LinearLayer(w, np.zeros(fan_out)))
    return Mlp(layers, hidden_activation, output_activation, leaky_slope)


def register_params(model: Mlp, tape: ad.Tape, requires_grad: bool = True):
    """Leaf nodes for every parameter, in parameters() order."""
    return [tape.leaf(p, requires_grad=requires_grad)
            for p in model.parameters()]


def _activate(h, kind: str, slope: float):
    if kind == "leaky_relu":
        return ad.leaky_relu(h, slope)
    if kind == "sigmoid":
        return ad.sigmoid(h)
    if kind == "none":
        return h
    raise ValueError(f"unknown activation {kind!r}")


def mlp_forward(model: Mlp, x: ad.Node, tape: ad.Tape,
                param_nodes=None) -> ad.Node:
    """Forward a (batch, in) node through the MLP.

    param_nodes, when given, must come from register_params on the same tape;
    otherwise the parameters enter as non-differentiable constants.
    """
    if len(x.shape) != 2 or x.shape[1] != model.sizes[0]:
        raise ad.ShapeError(
            f"mlp_forward: input {x.shape} incompatible with in-size {model.sizes[0]}")
    if param_nodes is None:
        param_nodes = [tape.const(p) for p in model.parameters()]
    h = x
    n = len(model.layers)
    for i in range(n):
        w, b = param_nodes[2 * i], param_nodes[2 * i + 1]
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        kind = model.output_activation if i == n - 1 else model.hidden_activation
        h = _activate(h, kind, model.leaky_slope)
    return h


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(lr=lr, **kw,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState):
    """One Adam update with bias correction; returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params/grads/state length mismatch")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {i}")
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps,
                                 t, new_m, new_v)


CHECKPOINT_MAGIC = "MLGAN-CKPT v1"


def save_mlp(model: Mlp, path) -> None:
    """Text checkpoint: magic, sizes, activations, then parameters at 17 sig digits."""
    lines = [CHECKPOINT_MAGIC,
             " ".join(str(s) for s in model.sizes),
             f"{model.hidden_activation} {model.output_activation} "
             f"{model.leaky_slope!r}"]
    for p in model.parameters():
        lines.append(" ".join(f"{x:.17g}" for x in p.ravel()))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mlp(path) -> Mlp:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad or missing magic line")
    try:
        sizes = [int(s) for s in lines[1].split()]
        hid, out, slope = lines[2].split()
        slope = float(slope)
    except (IndexError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from e
    n_layers = len(sizes) - 1
    expected = 3 + 2 * n_layers
    if len(lines) < expected:
        raise CheckpointError(
            f"{path}: truncated, expected {expected} lines, got {len(lines)}")
    layers = []
    row = 3
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        try:
            w = np.array([float(x) for x in lines[row].split()])
            b = np.array([float(x) for x in lines[row + 1].split()])
        except ValueError as e:
            raise CheckpointError(f"{path}: bad number at line {row + 1}: {e}") from e
        if w.size != fan_out * fan_in or b.size != fan_out:
            raise CheckpointError(
                f"{path}: parameter count mismatch at line {row + 1}")
        layers.append(LinearLayer(w.reshape(fan_out, fan_in), b))
        row += 2
    return Mlp(layers, hid, out, slope)
