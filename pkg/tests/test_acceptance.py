"""Acceptance suite. Each test records one PASS/FAIL line (printed and summarized at the end)."""

import json
import time

import numpy as np
import pytest

from arl import numerics as nx
from arl.cli import ExperimentSpec, bias_sweep
from arl.dataset import load_dataset, split
from arl.eval import auc, auc_brute_force, identifiability_probe, two_cluster_mass, weight_diagnostics
from arl.model import adversary_objective, adversary_objective_grad, compute_lambda, make_adversary
from arl.synthetic import predict_accuracy_by_group, random_tabular, two_region_split
from arl.train import TrainConfig, multi_run, train

from conftest import CONFIGS, DATA, record

N_SEEDS = 10


def tuned(method):
    path = CONFIGS / "adult_tuned.json"
    if not path.exists():
        pytest.fail(f"tuned configs missing: {path} (run scripts/tune.py)")
    configs = json.loads(path.read_text())["configs"]
    if method not in configs:
        pytest.fail(f"{path} has no tuned {method} config")
    return TrainConfig.from_dict(configs[method])


def test_lambda_algebra():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst_mean, min_lam = 0.0, np.inf
    for _ in range(1000):
        f = rng.uniform(1e-6, 1 - 1e-6, int(rng.integers(1, 513)))
        lam = compute_lambda(f)
        worst_mean = max(worst_mean, abs(lam.mean() - 2.0))
        min_lam = min(min_lam, lam.min())
    uniform_ok = all(np.all(compute_lambda(np.full(n, c)) == 2.0) for n, c in [(1, 0.3), (7, 0.5), (512, 0.9)])
    elapsed = time.perf_counter() - t0
    ok = min_lam > 1.0 and worst_mean <= 1e-9 and uniform_ok and elapsed < 1.0
    record("1", ok, f"min lambda {min_lam:.6f} > 1, max |mean-2| {worst_mean:.2e} <= 1e-9, "
                    f"uniform all-2 {uniform_ok}, {elapsed:.2f}s < 1s")
    assert ok


def _rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


def test_gradient_suite():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 17))
        d = int(rng.integers(1, 7))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n).astype(float)
        if i % 2 == 0:
            hidden = [int(h) for h in rng.integers(1, 7, int(rng.integers(0, 3)))]
            params = nx.init_params([d, *hidden, 1], ["relu"] * len(hidden) + ["sigmoid"], rng)
            for layer in params.layers:
                layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
            w = rng.uniform(0.5, 3.0, n)
            analytic = nx.backward(params, X, y, w).flat()
            numeric = nx.finite_difference_grad(lambda p: nx.weighted_bce(nx.forward(p, X), y, w), params).flat()
        else:
            adv = make_adversary(d + 1, rng)
            adv.params.layers[0].bias[:] = rng.normal(0, 0.3, 1)
            a_in = np.hstack([X, y[:, None]])
            losses = rng.exponential(1.0, n)
            analytic = adversary_objective_grad(adv.params, a_in, losses).flat()
            numeric = nx.finite_difference_grad(lambda p: adversary_objective(p, a_in, losses), adv.params).flat()
        worst = max(worst, _rel_error(analytic, numeric))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    record("2", ok, f"100 learner/adversary configs, max relative error {worst:.2e} <= 1e-4, {elapsed:.1f}s < 30s")
    assert ok


def test_auc_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(500):
        n = int(rng.integers(2, 201))
        # every other instance draws from a coarse grid so ties are frequent
        scores = rng.integers(0, 5, n) / 4 if i % 2 else rng.random(n)
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        worst = max(worst, abs(auc(scores, labels) - auc_brute_force(scores, labels)))
    ok = worst <= 1e-12
    record("3", ok, f"500 instances (n <= 200, with ties), max |rank - brute force| {worst:.1e} <= 1e-12")
    assert ok


def test_constant_adversary_reduction():
    identical = []
    for seed in range(5):
        ds = random_tabular(seed, 1000)
        base = dict(train_steps=500, batch_size=64, learner_lr=0.05, seed=seed)
        erm = train(TrainConfig(method="ERM", **base), ds)
        arl = train(TrainConfig(method="ARL", freeze_adversary=True, **base), ds)
        identical.append(all(np.array_equal(a, b) for a, b in zip(erm.learner.params.arrays(),
                                                                   arl.learner.params.arrays())))
    ok = all(identical)
    record("4", ok, f"pinned-adversary ARL == ERM bit-identically on {sum(identical)}/5 seeds (1000 rows)")
    assert ok


def test_toy_max_min():
    t0 = time.perf_counter()
    gains, erm_worst, arl_worst = [], [], []
    for seed in range(N_SEEDS):
        train_set, test = two_region_split(seed)
        worst = {}
        for method in ("ERM", "ARL"):
            cfg = TrainConfig(method=method, hidden=(), learner_lr=0.1, adversary_lr=0.1, batch_size=64,
                              train_steps=2000, seed=seed)
            worst[method] = min(predict_accuracy_by_group(train(cfg, train_set).learner, test).values())
        erm_worst.append(worst["ERM"])
        arl_worst.append(worst["ARL"])
        gains.append(worst["ARL"] - worst["ERM"])
    elapsed = time.perf_counter() - t0
    gain = float(np.mean(gains))
    ok = gain >= 0.03 and elapsed < 120
    record("5", ok, f"worst-region accuracy ERM {np.mean(erm_worst):.3f} -> ARL {np.mean(arl_worst):.3f}, "
                    f"gain {100 * gain:+.1f} pp >= +3 pp over {N_SEEDS} seeds, {elapsed:.0f}s < 120s")
    assert ok


@pytest.fixture(scope="module")
def adult_runs(adult_split):
    train_set, test = adult_split
    t0 = time.perf_counter()
    erm = multi_run(tuned("ERM"), train_set, test, N_SEEDS)
    arl = multi_run(tuned("ARL"), train_set, test, N_SEEDS, keep_models=True)
    return erm, arl, time.perf_counter() - t0


def _fmt(agg, key):
    return f"{agg.mean[key]:.3f}+-{agg.std[key]:.4f}"


def test_adult_erm_overall(adult_runs):
    erm, _, elapsed = adult_runs
    value = erm.mean["auc_overall"]
    ok = abs(value - 0.898) <= 0.02
    record("6a", ok, f"Adult ERM overall AUC {_fmt(erm, 'auc_overall')}, |x - 0.898| <= 0.02 "
                     f"({len(erm.seeds)} seeds, both methods trained in {elapsed / 60:.1f} min)")
    assert ok


def test_adult_auc_min_gain(adult_runs):
    erm, arl, _ = adult_runs
    gain = arl.mean["auc_min"] - erm.mean["auc_min"]
    ok = gain >= 0.005
    record("6b", ok, f"Adult AUC(min) ERM {_fmt(erm, 'auc_min')} -> ARL {_fmt(arl, 'auc_min')}, "
                     f"gain {gain:+.4f} >= +0.005")
    assert ok


def test_adult_auc_minority_gain(adult_runs):
    erm, arl, _ = adult_runs
    gain = arl.mean["auc_minority"] - erm.mean["auc_minority"]
    groups = {erm.per_seed[s].minority_group for s in erm.seeds}
    ok = gain >= 0.03
    record("6c", ok, f"Adult AUC(minority, group {'/'.join(sorted(groups))}) ERM {_fmt(erm, 'auc_minority')} "
                     f"-> ARL {_fmt(arl, 'auc_minority')}, gain {gain:+.4f} >= +0.03")
    assert ok


def test_adult_runtime(adult_runs):
    elapsed = adult_runs[2]
    ok = elapsed < 30 * 60
    record("6-time", ok, f"Adult ERM + ARL, {N_SEEDS} seeds each: {elapsed / 60:.1f} min < 30 min")
    assert ok


def test_lsac_directional():
    path = DATA / "lsac.csv"
    if not path.exists():
        record("7", False, f"LSAC data unavailable ({path} missing); criterion not evaluated")
        pytest.fail(f"{path} missing: the LSAC dataset could not be obtained in this environment")
    train_set, test = split(load_dataset(path, DATA / "lsac.schema.json"), 0.7, 0)
    erm = multi_run(TrainConfig(method="ERM"), train_set, test, N_SEEDS)
    arl = multi_run(TrainConfig(method="ARL"), train_set, test, N_SEEDS)
    ok = (arl.mean["auc_overall"] >= erm.mean["auc_overall"]
          and arl.mean["auc_min"] >= erm.mean["auc_min"] - 0.005)
    record("7", ok, f"LSAC AUC(avg) ERM {_fmt(erm, 'auc_overall')} vs ARL {_fmt(arl, 'auc_overall')}; "
                    f"AUC(min) ERM {_fmt(erm, 'auc_min')} vs ARL {_fmt(arl, 'auc_min')}")
    assert ok


def test_probe(adult, compas):
    t0 = time.perf_counter()
    race = identifiability_probe(adult, "race").accuracy
    sex = identifiability_probe(adult, "sex").accuracy
    compas_race = identifiability_probe(compas, "race").accuracy
    elapsed = time.perf_counter() - t0
    ok = abs(race - 0.90) <= 0.03 and abs(sex - 0.84) <= 0.03 and compas_race <= 0.70 and elapsed < 120
    record("8", ok, f"probe Adult race {race:.3f} (0.90+-0.03), Adult sex {sex:.3f} (0.84+-0.03), "
                    f"COMPAS race {compas_race:.3f} <= 0.70, {elapsed:.0f}s < 120s")
    assert ok


@pytest.fixture(scope="module")
def label_flip_points(adult_split):
    train_set, test = adult_split
    dro = tuned("DRO")
    assert dro.dro_alpha == 0.2
    spec = ExperimentSpec(
        data=DATA / "adult.csv",
        schema=DATA / "adult.schema.json",
        methods=["ARL", "DRO"],
        method_configs={"ARL": tuned("ARL").to_dict(), "DRO": dro.to_dict()},
        n_seeds=N_SEEDS,
        biases=[{"kind": "label_flip", "levels": [0.1, 0.3]}],
        report_group="F",
    )
    points = bias_sweep(spec, train_set, test)
    return {(p["level"], p["method"]): p for p in points}


def test_label_bias_high(label_flip_points):
    arl, dro = label_flip_points[(0.3, "ARL")], label_flip_points[(0.3, "DRO")]
    ok = arl["auc_mean"] > dro["auc_mean"]
    record("9a", ok, f"flip 0.3: AUC(F) ARL {arl['auc_mean']:.4f} > DRO(alpha=0.2) {dro['auc_mean']:.4f} "
                     f"({arl['n_runs']}/{dro['n_runs']} runs)")
    assert ok


def test_label_bias_low(label_flip_points):
    arl, dro = label_flip_points[(0.1, "ARL")], label_flip_points[(0.1, "DRO")]
    gap = abs(arl["auc_mean"] - dro["auc_mean"])
    ok = gap <= 0.02
    record("9b", ok, f"flip 0.1: AUC(F) ARL {arl['auc_mean']:.4f} vs DRO {dro['auc_mean']:.4f}, "
                     f"|gap| {gap:.4f} <= 0.02")
    assert ok


def test_weight_diagnostics(adult_runs, adult_split):
    _, arl, _ = adult_runs
    train_set, _ = adult_split
    result = arl.results[arl.seeds[0]]
    diag = weight_diagnostics(result.learner, result.adversary, train_set)
    mis = diag.misclassified_mean()
    correct0 = diag.quadrant_mean["no-error; class 0"]
    c0, c1 = diag.class_mean[0.0], diag.class_mean[1.0]
    ok = mis > correct0 and c1 > c0
    record("10", ok, f"Adult ARL: mean lambda misclassified {mis:.3f} > correct class 0 {correct0:.3f}; "
                     f"class 1 {c1:.3f} > class 0 {c0:.3f} (positive rate {train_set.y.mean():.2f}; "
                     f"two-cluster mass {two_cluster_mass(diag.lambdas):.2f})")
    assert ok


def test_compas_runs(compas):
    train_set, test = split(compas, 0.7, 0)
    rows = []
    for method in ("ERM", "ARL", "IPW_SY", "DRO", "MINDIFF"):
        agg = multi_run(TrainConfig(method=method, train_steps=2000), train_set, test, 1)
        rows.append(f"{method} {agg.mean['auc_overall']:.3f}")
    ok = len(rows) == 5
    record("COMPAS", ok, "all methods complete; overall AUC " + ", ".join(rows))
    assert ok
