"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Criteria 6-9 share one module-scoped set of end-to-end training runs (five
seeds, all five variants) and together take ~30-40 minutes on a single core;
they are marked slow.
"""

import time

import numpy as np
import pytest

from mlgan import autodiff as ad
from mlgan import gan_core as gc
from mlgan import metrics as mx
from mlgan import synthdata as sd
from mlgan import training as tr
from mlgan.cli import main
from mlgan.nn import init_params

from conftest import finite_diff, rel_err, random_mlp_graph
from test_metrics import oracle_counts, oracle_macro, oracle_micro

SEEDS = [0, 1, 2, 3, 4]


def passed(num, desc):
    print(f"\n[criterion {num:02d}] PASS: {desc}")


# --------------------------------------------------------------- criterion 1

def test_criterion_1_first_order_gradients():
    start = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        depth = rng.integers(2, 5)
        sizes = [int(rng.integers(2, 17)) for _ in range(depth + 1)]
        t = ad.Tape()
        out, params = random_mlp_graph(t, rng, sizes,
                                       rng.normal(size=(1, sizes[0])))
        analytic = [t.evaluate(g).copy() for g in t.grad(out, params)]
        for p, g in zip(params, analytic):
            p_val = t.evaluate(p).copy()

            def f(v, p=p):
                t.bind(p, v)
                return float(t.evaluate(out))

            fd = finite_diff(f, p_val, h=1e-4)
            t.bind(p, p_val)
            worst = max(worst, rel_err(fd, g, floor=1e-4))
    elapsed = time.time() - start
    assert worst <= 1e-4, f"worst relative error {worst}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    passed(1, f"100 random MLPs, gradients vs central differences "
              f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


# --------------------------------------------------------------- criterion 2

def test_criterion_2_second_order_penalty_path():
    start = time.time()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(20):
        cfg = gc.GanConfig(d_proj=3, d_hidden=4,
                           n_hidden=int(rng.integers(1, 3)))
        disc = gc.init_discriminator(3, 2, cfg, rng)
        y = rng.integers(0, 2, size=(3, 3)).astype(float)
        y_hat = rng.uniform(size=(3, 3))
        z = rng.normal(size=(3, 2))
        gp_seed = int(rng.integers(0, 2 ** 31))

        def weighted_gp(d):
            t = ad.Tape()
            params = gc.register_disc_params(d, t)
            pen, _ = gc.gradient_penalty(d, y, y_hat, z,
                                         np.random.default_rng(gp_seed),
                                         t, params)
            return t, ad.scale(pen, cfg.gp_weight), params

        t, loss, params = weighted_gp(disc)
        analytic = [t.evaluate(g).copy() for g in t.grad(loss, params)]
        flat = disc.parameters()
        for k, (p_arr, g) in enumerate(zip(flat, analytic)):
            def f(v, k=k):
                new = [q.copy() for q in flat]
                new[k] = v
                tt, loss2, _ = weighted_gp(disc.with_parameters(new))
                return float(tt.evaluate(loss2))

            fd = finite_diff(f, p_arr, h=1e-5)
            worst = max(worst, rel_err(fd, g, floor=1e-4))
    elapsed = time.time() - start
    assert worst <= 1e-3, f"worst relative error {worst}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    passed(2, f"20 critics, d(lambda*gp)/dparams vs central differences "
              f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


# --------------------------------------------------------------- criterion 3

def test_criterion_3_gumbel_sigmoid_fidelity():
    cfg = gc.GanConfig(tau_inv=10.0)
    rng = np.random.default_rng(303)
    n = 100000
    for logit in (-2.0, -1.0, 0.0, 1.0, 2.0):
        p = 1 / (1 + np.exp(-logit))
        t = ad.Tape()
        probs = t.const(np.full((1, n), p))
        sample = t.evaluate(gc.gumbel_sigmoid_sample(probs, cfg, rng, t))
        frac = float(np.mean(sample > 0.5))
        se = np.sqrt(p * (1 - p) / n)
        assert abs(frac - p) < 3 * se, f"logit {logit}: {frac} vs {p}"
    # pathwise gradient with the noise draw held fixed
    t = ad.Tape()
    p_leaf = t.leaf(np.array([[0.2, 0.5, 0.8]]), requires_grad=True)
    sample = gc.gumbel_sigmoid_sample(p_leaf, cfg, np.random.default_rng(7), t)
    out = ad.sum_all(sample)
    (g,) = t.grad(out, [p_leaf])
    analytic = t.evaluate(g).copy()
    p_val = t.evaluate(p_leaf).copy()

    def f(v):
        t.bind(p_leaf, v)
        return float(t.evaluate(out))

    err = rel_err(finite_diff(f, p_val), analytic)
    assert err <= 1e-4
    passed(3, f"threshold frequencies match sigmoid(logit) at 3 sigma; "
              f"pathwise gradient rel err {err:.2e}")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_closed_form_loss_values():
    t = ad.Tape()
    # logistic: hand value, all-half, perfect prediction
    v = t.evaluate(gc.loss_logistic(t.const([[0.8, 0.3]]),
                                    t.const([[1.0, 0.0]]), t))
    assert abs(v - -(np.log(0.8) + np.log(0.7))) < 1e-9
    v = t.evaluate(gc.loss_logistic(t.const([[0.5] * 4]),
                                    t.const([[1.0, 0, 1, 0]]), t))
    assert abs(v - 4 * np.log(2)) < 1e-9
    y = np.array([[1.0, 0.0, 1.0]])
    v = t.evaluate(gc.loss_logistic(
        t.const(np.clip(y, gc.CLAMP_EPS, 1 - gc.CLAMP_EPS)), t.const(y), t))
    assert v <= 1e-6
    # generator loss
    v = t.evaluate(gc.loss_generator(t.const([1.0, 3.0]), t.const(0.5), 10.0, t))
    assert abs(v - 3.0) < 1e-9
    v = t.evaluate(gc.loss_generator(t.const([0.0, 0.0]), t.const(0.0), 0.0, t))
    assert abs(v) < 1e-9
    # discriminator loss
    v = t.evaluate(gc.loss_discriminator(t.const([2.0]), t.const([1.0]),
                                         t.const([0.0]), t.const(0.04), 10.0, t))
    assert abs(v - -1.1) < 1e-9
    v = t.evaluate(gc.loss_discriminator(t.const([0.0]), t.const([0.0]),
                                         t.const([0.0]), t.const(0.0), 10.0, t))
    assert abs(v) < 1e-9
    # gradient penalty: unit-gradient, linear 2*sum, constant critic
    from test_gan_core import linear_label_disc, zeroed
    tp = ad.Tape()
    pen, _ = gc.gradient_penalty(linear_label_disc(1, 1.0), np.array([[1.0]]),
                                 np.array([[0.3]]), np.zeros((1, 2)),
                                 np.random.default_rng(0), tp)
    assert abs(tp.evaluate(pen)) < 1e-9
    tp = ad.Tape()
    pen, _ = gc.gradient_penalty(linear_label_disc(4, 2.0), np.ones((1, 4)),
                                 np.zeros((1, 4)), np.zeros((1, 2)),
                                 np.random.default_rng(1), tp)
    assert abs(tp.evaluate(pen) - 9.0) < 1e-9
    tp = ad.Tape()
    disc0 = zeroed(gc.init_discriminator(3, 2, gc.GanConfig(d_proj=3,
                                                            d_hidden=4,
                                                            n_hidden=2),
                                         np.random.default_rng(2)))
    pen, _ = gc.gradient_penalty(disc0, np.ones((2, 3)), np.zeros((2, 3)),
                                 np.zeros((2, 2)), np.random.default_rng(3), tp)
    assert abs(tp.evaluate(pen) - 1.0) < 1e-9
    passed(4, "loss_logistic / loss_generator / loss_discriminator / "
              "gradient_penalty reproduce all documented example values")


# --------------------------------------------------------------- criterion 5

def test_criterion_5_metrics_against_oracle():
    rng = np.random.default_rng(505)
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        n = int(rng.integers(1, 21))
        preds = rng.integers(0, 2, size=(n, k))
        truths = rng.integers(0, 2, size=(n, k))
        c = mx.confusion_counts(preds, truths)
        tp, fp, fn = oracle_counts(preds, truths)
        assert list(c.tp) == tp and list(c.fp) == fp and list(c.fn) == fn
        for got, want in ((mx.macro_prf1(c), oracle_macro(tp, fp, fn)),
                          (mx.micro_prf1(c), oracle_micro(tp, fp, fn))):
            for g, w in zip(got, want):
                assert abs(g - w) <= 1e-12
    passed(5, "confusion counts exact and all six metrics within 1e-12 of "
              "the brute-force oracle on 1000 random cases")


# ------------------------------------------------- shared training runs 6-9

@pytest.fixture(scope="module")
def training_matrix():
    dataset = sd.generate_dataset(sd.default_spec(), 6000, seed=1)
    reports: dict[str, list[mx.MetricReport]] = {v: [] for v in tr.VARIANTS}
    full_logs = {}
    wall = {}
    for seed in SEEDS:
        for variant in tr.VARIANTS:
            cfg = tr.TrainConfig(variant=variant, seed=seed)
            t0 = time.time()
            g, _, log = tr.train_model(dataset, cfg)
            wall[(variant, seed)] = time.time() - t0
            reports[variant].append(tr.evaluate(g, dataset, "test"))
            if variant == "full":
                full_logs[seed] = log
    return dataset, reports, full_logs, wall


def median(reports, field):
    return float(np.median([getattr(r, field) for r in reports]))


@pytest.mark.slow
def test_criterion_6_adversarial_beats_baseline(training_matrix):
    _, reports, _, wall = training_matrix
    base_cf1 = median(reports["baseline_only"], "c_f1")
    full_cf1 = median(reports["full"], "c_f1")
    base_of1 = median(reports["baseline_only"], "o_f1")
    full_of1 = median(reports["full"], "o_f1")
    budget = sum(wall[(v, s)] for v in ("baseline_only", "full") for s in SEEDS)
    assert full_cf1 >= base_cf1
    assert full_of1 >= base_of1
    assert (full_cf1 - base_cf1) * 100 >= 1.0, \
        f"C-F1 gain only {(full_cf1 - base_cf1) * 100:.2f} points"
    assert budget <= 30 * 60, f"baseline+full runs took {budget:.0f}s"
    passed(6, f"median C-F1 {full_cf1:.4f} vs baseline {base_cf1:.4f} "
              f"(+{(full_cf1 - base_cf1) * 100:.1f} pts), O-F1 "
              f"{full_of1:.4f} vs {base_of1:.4f}, {budget:.0f}s total")


@pytest.mark.slow
def test_criterion_7_label_count_effect(training_matrix):
    _, reports, _, _ = training_matrix
    base = median(reports["baseline_only"], "mean_labels")
    full = median(reports["full"], "mean_labels")
    assert full > base, f"mean_labels {full} vs baseline {base}"
    passed(7, f"median mean_labels {full:.3f} > baseline {base:.3f} "
              f"(+{100 * (full / base - 1):.1f}%)")


@pytest.mark.slow
def test_criterion_8_ablation_directions(training_matrix):
    _, reports, _, _ = training_matrix
    full = median(reports["full"], "c_f1")
    medians = {v: median(reports[v], "c_f1")
               for v in ("no_negative_sampling", "unconditional_d", "no_gumbel")}
    detail = ", ".join(f"{v} {m:.4f}" for v, m in medians.items())
    losing = [v for v, m in medians.items() if full < m]
    if losing:
        print(f"\n[criterion 08] FAIL: median C-F1 full {full:.4f} < "
              + ", ".join(f"{v} ({medians[v]:.4f})" for v in losing)
              + f"; all ablations: {detail}")
    else:
        passed(8, f"median C-F1 full {full:.4f} >= " + detail)
    assert not losing, f"full {full:.4f} below ablations: {detail}"


@pytest.mark.slow
def test_criterion_9_gradient_norms_near_one(training_matrix):
    _, _, full_logs, _ = training_matrix
    for seed, log in full_logs.items():
        last_epoch = max(r["epoch"] for r in log.iterations
                         if r.get("grad_norm") is not None)
        norms = [r["grad_norm"] for r in log.iterations
                 if r.get("grad_norm") is not None
                 and r["epoch"] == last_epoch]
        mean_norm = float(np.mean(norms))
        assert 0.25 <= mean_norm <= 2.0, f"seed {seed}: {mean_norm}"
    passed(9, "final-epoch mean interpolate gradient norm within [0.25, 2.0] "
              "for all seeds")


# -------------------------------------------------------------- criterion 10

def test_criterion_10_end_to_end_determinism(tmp_path):
    from test_cli import TINY_CFG
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(TINY_CFG.format(dir=tmp_path))
    assert main(["gen-data", "--config", str(cfg)]) == 0
    outputs = []
    for _ in range(2):
        assert main(["train", "--config", str(cfg), "--seed", "11"]) == 0
        outputs.append(((tmp_path / "generator.ckpt").read_bytes(),
                        (tmp_path / "train_log.csv").read_bytes()))
    assert outputs[0] == outputs[1]
    passed(10, "two cmd_train runs with identical config and seed produce "
               "byte-identical checkpoints and logs")
