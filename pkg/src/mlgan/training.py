"""Pretraining, the adversarial loop, evaluation, and the ablation matrix.

One training run is strictly sequential and fully determined by (config,
seed): every batch draw, Gumbel noise value, and interpolation weight comes
from named child streams of a single seed sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import gan_core as gc
from . import metrics as mx
from . import synthdata as sd
from .nn import AdamState, Mlp, adam_step, init_params, register_params

VARIANTS = ("full", "no_negative_sampling", "unconditional_d", "no_gumbel",
            "baseline_only")


class TrainingAbort(RuntimeError):
    """Raised when a loss or gradient turns non-finite."""


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    batch_size: int = 64
    d_steps_per_g: int = 3
    pretrain_epochs: int = 20
    adv_epochs: int = 30
    g_hidden: list[int] = field(default_factory=lambda: [64, 64])
    gan: gc.GanConfig = field(default_factory=gc.GanConfig)
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_steps_per_g < 1 or self.batch_size < 1:
            raise ValueError("d_steps_per_g and batch_size must be >= 1")
        if self.pretrain_epochs < 0 or self.adv_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass
class TrainLog:
    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    ITER_FIELDS = ("iteration", "phase", "epoch", "l_logistic", "l_g", "l_d",
                   "gp", "grad_norm")

    def record(self, **kw):
        for v in kw.values():
            if isinstance(v, float) and not np.isfinite(v):
                raise TrainingAbort(f"non-finite value in training log: {kw}")
        kw.setdefault("iteration", len(self.iterations))
        self.iterations.append(kw)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(self.ITER_FIELDS) + "\n")
            for row in self.iterations:
                f.write(",".join(
                    "" if row.get(k) is None else
                    (f"{row[k]:.10g}" if isinstance(row[k], float) else str(row[k]))
                    for k in self.ITER_FIELDS) + "\n")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init_g", "init_d", "pretrain", "batches", "noise", "interp")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def make_extractor(dataset: sd.Dataset, cfg: TrainConfig) -> gc.FeatureExtractor:
    # identity at desk scale; a frozen projection (keyed to the dataset seed)
    # only when the raw features exceed the projection budget
    if dataset.d <= cfg.gan.d_proj:
        return gc.FeatureExtractor.identity()
    rng = np.random.default_rng(np.random.SeedSequence([dataset.seed, 0xFE]))
    return gc.FeatureExtractor.random_projection(dataset.d, cfg.gan.d_proj, rng)


def build_models(dataset: sd.Dataset, cfg: TrainConfig, streams):
    fext = make_extractor(dataset, cfg)
    g = init_params([dataset.d] + list(cfg.g_hidden) + [dataset.n_labels],
                    streams["init_g"], leaky_slope=cfg.gan.leaky_slope)
    d = gc.init_discriminator(dataset.n_labels, fext.out_dim(dataset.d),
                              cfg.gan, streams["init_d"],
                              conditional=cfg.variant != "unconditional_d")
    return g, d, fext


def _check_finite(value, term: str) -> float:
    v = float(value)
    if not np.isfinite(v):
        raise TrainingAbort(f"non-finite {term}")
    return v


def pretrain_generator(g: Mlp, dataset: sd.Dataset, cfg: TrainConfig,
                       rng: np.random.Generator,
                       log: TrainLog | None = None):
    """Plain multi-label classifier training on the logistic loss."""
    log = log if log is not None else TrainLog()
    state = AdamState.for_params(g.parameters(), lr=cfg.lr_g)
    train_idx = dataset.indices("train")
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            pick = order[lo:lo + cfg.batch_size]
            tape = ad.Tape()
            params = register_params(g, tape)
            x = tape.const(dataset.features[pick])
            y = tape.const(dataset.labels[pick])
            probs = gc.classifier_forward(g, x, tape, params)
            loss = gc.loss_logistic(probs, y, tape)
            grad_nodes = tape.grad(loss, params)
            try:
                loss_val = _check_finite(tape.evaluate(loss), "pretrain logistic loss")
                grads = [tape.evaluate(n) for n in grad_nodes]
            except ad.AutodiffError as e:
                raise TrainingAbort(f"pretrain: {e}") from e
            new_params, state = adam_step(g.parameters(), grads, state)
            g = g.with_parameters(new_params)
            losses.append(loss_val)
        log.record(phase="pretrain", epoch=epoch,
                   l_logistic=float(np.mean(losses)) if losses else None)
    return g, log


def _generated_batch(g: Mlp, x: np.ndarray, cfg: TrainConfig,
                     noise_rng: np.random.Generator) -> np.ndarray:
    """Detached relaxed samples (or raw probabilities for no_gumbel)."""
    tape = ad.Tape()
    probs = gc.classifier_forward(g, tape.const(x), tape)
    if cfg.variant == "no_gumbel":
        return tape.evaluate(probs)
    sample = gc.gumbel_sigmoid_sample(probs, cfg.gan, noise_rng, tape)
    return tape.evaluate(sample)


def _disc_step(g, d, fext, dataset, cfg, state_d, streams, log):
    batches = streams["batches"]
    xm, ym = sd.sample_matched(dataset, cfg.batch_size, batches)
    xg, yg = sd.sample_matched(dataset, cfg.batch_size, batches)
    y_hat = _generated_batch(g, xg, cfg, streams["noise"])
    tape = ad.Tape()
    d_params = gc.register_disc_params(d, tape)

    def score(y_val, x_val):
        y_node = tape.const(y_val)
        z = tape.const(fext.extract(x_val)) if d.conditional else None
        return gc.discriminator_score(d, y_node, z, tape, d_params)

    real = score(ym, xm)
    gen = score(y_hat, xg)
    mism = None
    if cfg.variant != "no_negative_sampling":
        xmm, ymm = sd.sample_matched(dataset, cfg.batch_size, batches)
        y_prime = sd.sample_mismatched(dataset, ymm, batches)
        mism = score(y_prime, xmm)
    z_gp = fext.extract(xg) if d.conditional else None
    gp, norm = gc.gradient_penalty(d, yg, y_hat, z_gp, streams["interp"],
                                   tape, d_params)
    loss = gc.loss_discriminator(real, gen, mism, gp, cfg.gan.gp_weight, tape)
    grad_nodes = tape.grad(loss, d_params)
    try:
        loss_val = _check_finite(tape.evaluate(loss), "discriminator loss")
        gp_val = _check_finite(tape.evaluate(gp), "gradient penalty")
        norm_val = _check_finite(tape.evaluate(norm), "interpolate gradient norm")
        grads = [tape.evaluate(n) for n in grad_nodes]
    except ad.AutodiffError as e:
        raise TrainingAbort(f"discriminator step: {e}") from e
    new_params, state_d = adam_step(d.parameters(), grads, state_d)
    return d.with_parameters(new_params), state_d, loss_val, gp_val, norm_val


def _gen_step(g, d, fext, dataset, cfg, state_g, streams):
    x, y = sd.sample_matched(dataset, cfg.batch_size, streams["batches"])
    tape = ad.Tape()
    g_params = register_params(g, tape)
    x_node = tape.const(x)
    probs = gc.classifier_forward(g, x_node, tape, g_params)
    logistic = gc.loss_logistic(probs, tape.const(y), tape)
    if cfg.variant == "no_gumbel":
        y_hat = probs
    else:
        y_hat = gc.gumbel_sigmoid_sample(probs, cfg.gan, streams["noise"], tape)
    z = tape.const(fext.extract(x)) if d.conditional else None
    scores = gc.discriminator_score(d, y_hat, z, tape)
    loss = gc.loss_generator(scores, logistic, cfg.gan.alpha, tape)
    grad_nodes = tape.grad(loss, g_params)
    try:
        loss_val = _check_finite(tape.evaluate(loss), "generator loss")
        logi_val = _check_finite(tape.evaluate(logistic), "generator logistic term")
        grads = [tape.evaluate(n) for n in grad_nodes]
    except ad.AutodiffError as e:
        raise TrainingAbort(f"generator step: {e}") from e
    new_params, state_g = adam_step(g.parameters(), grads, state_g)
    return g.with_parameters(new_params), state_g, loss_val, logi_val


def train_adversarial(g: Mlp, d: gc.Discriminator, fext: gc.FeatureExtractor,
                      dataset: sd.Dataset, cfg: TrainConfig, streams,
                      log: TrainLog | None = None):
    """The iterative loop: d_steps_per_g critic updates per generator update."""
    log = log if log is not None else TrainLog()
    state_g = AdamState.for_params(g.parameters(), lr=cfg.lr_g)
    state_d = AdamState.for_params(d.parameters(), lr=cfg.lr_d)
    updates_per_epoch = len(dataset.indices("train")) // cfg.batch_size
    for epoch in range(cfg.adv_epochs):
        for _ in range(updates_per_epoch):
            for _ in range(cfg.d_steps_per_g):
                d, state_d, l_d, gp_val, norm_val = _disc_step(
                    g, d, fext, dataset, cfg, state_d, streams, log)
                log.record(phase="adversarial", epoch=epoch, l_d=l_d,
                           gp=gp_val, grad_norm=norm_val)
            g, state_g, l_g, l_logistic = _gen_step(
                g, d, fext, dataset, cfg, state_g, streams)
            log.record(phase="adversarial", epoch=epoch, l_g=l_g,
                       l_logistic=l_logistic)
        log.epochs.append({"epoch": epoch,
                           "report": evaluate(g, dataset, "test")})
    return g, d, log


def evaluate(g: Mlp, dataset: sd.Dataset, split: str) -> mx.MetricReport:
    """Threshold the generator's probabilities at 0.5 and score against truth."""
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise ValueError(f"evaluate: empty split {split!r}")
    tape = ad.Tape()
    probs = gc.classifier_forward(g, tape.const(dataset.features[idx]), tape)
    preds = gc.hard_threshold(tape.evaluate(probs))
    return mx.report(preds, dataset.labels[idx])


def train_model(dataset: sd.Dataset, cfg: TrainConfig):
    """Full protocol for one variant: pretrain, then (maybe) adversarial."""
    streams = rng_streams(cfg.seed)
    g, d, fext = build_models(dataset, cfg, streams)
    fext_before = None if fext.projection is None else fext.projection.copy()
    g, log = pretrain_generator(g, dataset, cfg, streams["pretrain"])
    if cfg.variant != "baseline_only":
        g, d, log = train_adversarial(g, d, fext, dataset, cfg, streams, log)
    if fext_before is not None and not np.array_equal(fext_before, fext.projection):
        raise TrainingAbort("feature extractor changed during training")
    return g, d, log


def run_ablation(dataset: sd.Dataset, base_cfg: TrainConfig, seeds):
    """All five variants over shared seeds; returns {variant: [(seed, report)]}."""
    if not seeds:
        raise ValueError("run_ablation: at least one seed required")
    results: dict[str, list] = {v: [] for v in VARIANTS}
    for seed in seeds:
        for variant in VARIANTS:
            cfg = replace(base_cfg, variant=variant, seed=seed)
            g, _, _ = train_model(dataset, cfg)
            results[variant].append((seed, evaluate(g, dataset, "test")))
    return results


def median_report(reports) -> mx.MetricReport:
    """Fieldwise median over MetricReports."""
    fields = ("c_precision", "c_recall", "c_f1", "o_precision", "o_recall",
              "o_f1", "mean_labels")
    vals = {f: float(np.median([getattr(r, f) for r in reports])) for f in fields}
    return mx.MetricReport(**vals)
