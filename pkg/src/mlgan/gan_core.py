"""Generator/discriminator wiring, Gumbel-sigmoid sampling, and the losses.

Label conventions: a hard label vector has entries in {0, 1}; a relaxed one
lives in [0, 1]. Probability vectors are clamped into [CLAMP_EPS, 1-CLAMP_EPS]
before any log. Batched quantities put instances along rows: features (B, d),
labels (B, n_labels), critic scores (B, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import LinearLayer, Mlp, mlp_forward

CLAMP_EPS = 1e-7


@dataclass
class GanConfig:
    alpha: float = 10.0        # logistic-loss weight in the generator objective
    gp_weight: float = 10.0    # gradient-penalty weight (lambda)
    tau_inv: float = 0.9       # inverse temperature of Gumbel sigmoid
    tau_mode: str = "multiply"  # "multiply": factor tau_inv; "divide": factor 1/tau_inv
    d_proj: int = 32
    d_hidden: int = 64
    n_hidden: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.gp_weight < 0 or self.tau_inv <= 0:
            raise ValueError("alpha, gp_weight must be >= 0 and tau_inv > 0")
        if min(self.d_proj, self.d_hidden, self.n_hidden) <= 0:
            raise ValueError("projection/hidden sizes and depth must be positive")
        if self.tau_mode not in ("multiply", "divide"):
            raise ValueError(f"unknown tau_mode {self.tau_mode!r}")

    @property
    def noise_factor(self) -> float:
        return self.tau_inv if self.tau_mode == "multiply" else 1.0 / self.tau_inv


@dataclass
class FeatureExtractor:
    """Fixed map z = f_ext(x): identity, or a frozen random projection."""

    projection: np.ndarray | None = None  # (d_out, d_in); None = identity

    @classmethod
    def identity(cls) -> "FeatureExtractor":
        return cls(None)

    @classmethod
    def random_projection(cls, d_in: int, d_out: int,
                          rng: np.random.Generator) -> "FeatureExtractor":
        return cls(rng.normal(size=(d_out, d_in)) / np.sqrt(d_in))

    def extract(self, x: np.ndarray) -> np.ndarray:
        if self.projection is None:
            return x
        return x @ self.projection.T

    def out_dim(self, d_in: int) -> int:
        return d_in if self.projection is None else self.projection.shape[0]


@dataclass
class Discriminator:
    """Wasserstein critic over <label set, instance features> pairs.

    Features and labels are each linearly projected, concatenated, then run
    through leaky-relu FC layers to a single unbounded score. With
    conditional=False the feature branch is dropped and the critic sees the
    label vector alone.
    """

    proj_label: LinearLayer
    proj_feat: LinearLayer | None
    hidden: list[LinearLayer]
    out: LinearLayer
    leaky_slope: float = 0.2

    @property
    def conditional(self) -> bool:
        return self.proj_feat is not None

    def parameters(self) -> list[np.ndarray]:
        layers = [self.proj_label] + ([self.proj_feat] if self.proj_feat else [])
        layers += self.hidden + [self.out]
        params = []
        for l in layers:
            params.append(l.weight)
            params.append(l.bias)
        return params

    def with_parameters(self, params) -> "Discriminator":
        it = iter(params)
        def take():
            return LinearLayer(next(it), next(it))
        proj_label = take()
        proj_feat = take() if self.proj_feat else None
        hidden = [take() for _ in self.hidden]
        return Discriminator(proj_label, proj_feat, hidden, take(),
                             self.leaky_slope)


def init_discriminator(n_labels: int, feat_dim: int, cfg: GanConfig,
                       rng: np.random.Generator,
                       conditional: bool = True) -> Discriminator:
    def glorot(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return LinearLayer(rng.uniform(-a, a, size=(fan_out, fan_in)),
                           np.zeros(fan_out))

    proj_label = glorot(cfg.d_proj, n_labels)
    proj_feat = glorot(cfg.d_proj, feat_dim) if conditional else None
    width_in = 2 * cfg.d_proj if conditional else cfg.d_proj
    hidden = []
    for i in range(cfg.n_hidden):
        hidden.append(glorot(cfg.d_hidden, width_in if i == 0 else cfg.d_hidden))
    return Discriminator(proj_label, proj_feat, hidden,
                         glorot(1, cfg.d_hidden), cfg.leaky_slope)


def register_disc_params(disc: Discriminator, tape: ad.Tape,
                         requires_grad: bool = True):
    return [tape.leaf(p, requires_grad=requires_grad)
            for p in disc.parameters()]


def _linear(x, w, b):
    return ad.add(ad.matmul(x, ad.transpose(w)), b)


def discriminator_score(disc: Discriminator, y: ad.Node, z: ad.Node | None,
                        tape: ad.Tape, param_nodes=None) -> ad.Node:
    """Critic scores, one row per batch element, shape (B, 1)."""
    if param_nodes is None:
        param_nodes = [tape.const(p) for p in disc.parameters()]
    it = iter(param_nodes)
    def take():
        return next(it), next(it)

    py = _linear(y, *take())
    if disc.conditional:
        if z is None:
            raise ad.ShapeError("conditional discriminator needs features")
        pz = _linear(z, *take())
        h = ad.concat([pz, py], axis=1)
    else:
        h = py
    for _ in disc.hidden:
        h = ad.leaky_relu(_linear(h, *take()), disc.leaky_slope)
    return _linear(h, *take())


def classifier_forward(model: Mlp, x: ad.Node, tape: ad.Tape,
                       param_nodes=None) -> ad.Node:
    """Per-label probabilities of the generator, clamped away from {0, 1}."""
    probs = mlp_forward(model, x, tape, param_nodes)
    return ad.clamp(probs, CLAMP_EPS, 1.0 - CLAMP_EPS)


def hard_threshold(probs: np.ndarray) -> np.ndarray:
    """Predicted hard labels: 1 iff probability strictly exceeds 0.5."""
    return (np.asarray(probs) > 0.5).astype(np.float64)


def logit_node(probs: ad.Node) -> ad.Node:
    one_minus = ad.add_scalar(ad.scale(probs, -1.0), 1.0)
    return ad.sub(ad.log(probs), ad.log(one_minus))


def gumbel_sigmoid_sample(probs: ad.Node, cfg: GanConfig,
                          rng: np.random.Generator, tape: ad.Tape) -> ad.Node:
    """Relaxed Bernoulli sample per label.

    Adds logistic noise g = log u - log(1-u) to the logit and squashes the
    scaled result. The noise enters as a constant, so gradients flow to the
    probabilities only.
    """
    u = rng.uniform(size=probs.shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    noise = tape.const(np.log(u) - np.log1p(-u))
    return ad.sigmoid(ad.scale(ad.add(logit_node(probs), noise),
                               cfg.noise_factor))


def loss_logistic(probs: ad.Node, y: ad.Node, tape: ad.Tape) -> ad.Node:
    """Binary cross-entropy, summed over labels, averaged over the batch."""
    if probs.shape != y.shape:
        raise ad.ShapeError(f"loss_logistic: {probs.shape} vs {y.shape}")
    one_minus_y = ad.add_scalar(ad.scale(y, -1.0), 1.0)
    one_minus_p = ad.add_scalar(ad.scale(probs, -1.0), 1.0)
    ll = ad.add(ad.mul(y, ad.log(probs)), ad.mul(one_minus_y, ad.log(one_minus_p)))
    batch = probs.shape[0] if len(probs.shape) == 2 else 1
    return ad.scale(ad.sum_all(ll), -1.0 / batch)


def loss_generator(d_scores: ad.Node, logistic: ad.Node, alpha: float,
                   tape: ad.Tape) -> ad.Node:
    """Generator objective: -E[D(y_hat, x)] + alpha * logistic loss."""
    return ad.add(ad.scale(ad.mean_all(d_scores), -1.0),
                  ad.scale(logistic, alpha))


def loss_discriminator(real: ad.Node, gen: ad.Node, mism: ad.Node | None,
                       gp: ad.Node, gp_weight: float, tape: ad.Tape) -> ad.Node:
    """Critic loss: -E[real] + 1/2 E[gen] + 1/2 E[mism] + lambda * gp.

    Without the mismatched term (negative sampling ablation) the generated
    term takes full weight 1.
    """
    gen_w = 0.5 if mism is not None else 1.0
    loss = ad.add(ad.scale(ad.mean_all(real), -1.0),
                  ad.scale(ad.mean_all(gen), gen_w))
    if mism is not None:
        loss = ad.add(loss, ad.scale(ad.mean_all(mism), 0.5))
    return ad.add(loss, ad.scale(gp, gp_weight))


def interpolate(y: ad.Node, y_hat: ad.Node, eps, tape: ad.Tape) -> ad.Node:
    """Relaxed mixture eps * y + (1 - eps) * y_hat.

    eps may be a scalar or a per-batch-element column, broadcast over labels.
    """
    e = np.asarray(eps, dtype=np.float64)
    if np.any(e < 0) or np.any(e > 1):
        raise ValueError("interpolation weights must lie in [0, 1]")
    if e.ndim == 1 and len(y.shape) == 2:
        e = np.repeat(e[:, None], y.shape[1], axis=1)
    else:
        e = np.broadcast_to(e, y.shape).copy()
    e_node = tape.const(e)
    one_minus = tape.const(1.0 - e)
    return ad.add(ad.mul(e_node, y), ad.mul(one_minus, y_hat))


def gradient_penalty(disc: Discriminator, y: np.ndarray, y_hat: np.ndarray,
                     z: np.ndarray | None, rng: np.random.Generator,
                     tape: ad.Tape, param_nodes=None):
    """WGAN-gp penalty E[(||grad_{y*} D(y*, x)|| - 1)^2], differentiable in D.

    y and y_hat are numeric label batches (the generated batch is detached:
    the penalty regularizes the critic, not the generator). One interpolation
    weight is drawn per batch element. Returns (penalty, mean_grad_norm),
    both scalar nodes on the tape.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    eps = rng.uniform(size=y.shape[0])
    y_star_val = eps[:, None] * y + (1.0 - eps[:, None]) * y_hat
    y_star = tape.leaf(y_star_val, requires_grad=True, name="y_star")
    z_node = None
    if disc.conditional:
        z_node = tape.const(np.atleast_2d(z))
    scores = discriminator_score(disc, y_star, z_node, tape, param_nodes)
    # rows are independent, so the gradient of the summed score stacks the
    # per-element label gradients
    (g,) = tape.grad(ad.sum_all(scores), [y_star])
    norms = ad.sqrt0(ad.sum_axis1(ad.square(g)))
    penalty = ad.mean_all(ad.square(ad.add_scalar(norms, -1.0)))
    return penalty, ad.mean_all(norms)
