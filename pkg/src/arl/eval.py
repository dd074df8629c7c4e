"""Rank AUC, per-group reports, FPR gaps, the identifiability probe and weight diagnostics."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from arl import numerics as nx
from arl.model import adversary_forward, compute_lambda, dataset_adversary_input

# column order of the flat CSV row
REPORT_COLUMNS = ("auc_overall", "auc_macro_avg", "auc_min", "auc_minority")


class UndefinedMetric(ValueError):
    pass


def auc(scores, labels):
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_brute_force(scores, labels):
    """O(n^2) pairwise reference AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    p = scores[labels > 0.5]
    q = scores[labels <= 0.5]
    if len(p) == 0 or len(q) == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative label")
    wins = 0.0
    for a in p:
        for b in q:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(p) * len(q))


@dataclass
class MetricsReport:
    auc_overall: float
    group_auc: dict
    group_n: dict
    auc_min: float = float("nan")
    auc_macro_avg: float = float("nan")
    auc_minority: float = float("nan")
    minority_group: str | None = None
    fpr: dict = field(default_factory=dict)
    fnr: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def row(self, group_order):
        vals = [getattr(self, c) for c in REPORT_COLUMNS]
        vals.extend(self.group_auc.get(g, float("nan")) for g in group_order)
        return vals


def report_groups(dataset):
    """Masks for the coarse per-feature groups then the intersections, in reporting order."""
    schema = dataset.schema
    masks = {}
    for p in schema.protected:
        for i, code in enumerate(p.codes):
            masks[code] = dataset.codes[p.column] == i
    if len(schema.protected) > 1:
        for k, name in enumerate(dataset.group_names):
            masks[name] = dataset.s == k
    return masks


def report_group_names(schema):
    names = [c for p in schema.protected for c in p.codes]
    if len(schema.protected) > 1:
        names.extend("".join(c) for c in itertools.product(*(p.codes for p in schema.protected)))
    return names


def _rates(pred, y):
    neg, pos = y <= 0.5, y > 0.5
    fpr = float(pred[neg].mean()) if neg.any() else float("nan")
    fnr = float((~pred[pos]).mean()) if pos.any() else float("nan")
    return fpr, fnr


def metrics_from_scores(scores, labels, masks, threshold=0.5):
    """Stratified report. Groups enter only here, after scoring."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    overall = auc(scores, labels)
    group_auc, group_n, fpr, fnr = {}, {}, {}, {}
    pred = scores >= threshold
    for name, mask in masks.items():
        group_n[name] = int(mask.sum())
        try:
            group_auc[name] = auc(scores[mask], labels[mask])
        except UndefinedMetric:
            continue
        fpr[name], fnr[name] = _rates(pred[mask], labels[mask])
    report = MetricsReport(overall, group_auc, group_n, fpr=fpr, fnr=fnr)
    if group_auc:
        vals = list(group_auc.values())
        report.auc_min = min(vals)
        report.auc_macro_avg = float(np.mean(vals))
        smallest = min(group_auc, key=lambda g: (group_n[g], list(masks).index(g)))
        report.minority_group = smallest
        report.auc_minority = group_auc[smallest]
    return report


def group_metrics(learner, test, threshold=0.5):
    scores = learner.predict(test.X)
    return metrics_from_scores(scores, test.y, report_groups(test), threshold)


def fpr_gap(learner, test, feature, threshold=0.5, scores=None):
    """|FPR(a) - FPR(b)| between the two declared values of a protected feature."""
    if scores is None:
        scores = learner.predict(test.X)
    p = test.schema.protected_feature(feature)
    if len(p.values) != 2:
        raise ValueError(f"{feature}: FPR gap needs exactly two declared values")
    rates = []
    for i, code in enumerate(p.codes):
        neg = (test.codes[feature] == i) & (test.y <= 0.5)
        if not neg.any():
            raise UndefinedMetric(f"group {code!r} has no negative examples")
        rates.append(float(np.mean(scores[neg] >= threshold)))
    return abs(rates[0] - rates[1])


@dataclass
class ProbeResult:
    feature: str
    accuracy: float
    majority_baseline: float
    n_train: int
    n_test: int

    def to_dict(self):
        return asdict(self)


def fit_logistic(X, y, steps=2000, lr=0.1, seed=0):
    """Full-batch Adagrad logistic regression built on the numerics module."""
    rng = np.random.default_rng(seed)
    params = nx.init_params([X.shape[1], 1], ["sigmoid"], rng)
    opt = nx.make_optimizer(params, "adagrad", lr)
    w = np.ones(len(y))
    for _ in range(steps):
        nx.optimizer_step(params, nx.backward(params, X, y, w), opt)
    return params


def identifiability_probe(dataset, feature, seed=0, steps=2000, lr=0.1, train_fraction=0.7):
    """Predict a protected feature from [X, y] with a linear model; held-out accuracy.

    Only rows inside the feature's two most frequent declared values are used.
    """
    p = dataset.schema.protected_feature(feature)
    code = dataset.codes[feature]
    present = [i for i in range(len(p.values)) if np.any(code == i)]
    if len(present) < 2:
        raise UndefinedMetric(f"{feature}: needs at least two observed classes")
    counts = sorted(present, key=lambda i: -np.sum(code == i))[:2]
    rows = np.flatnonzero(np.isin(code, counts))
    target = (code[rows] == counts[1]).astype(float)
    Z = np.hstack([dataset.X[rows], dataset.y[rows, None]])

    perm = np.random.default_rng(seed).permutation(len(rows))
    n_tr = int(round(train_fraction * len(rows)))
    tr, te = perm[:n_tr], perm[n_tr:]
    params = fit_logistic(Z[tr], target[tr], steps=steps, lr=lr, seed=seed)
    pred = nx.forward(params, Z[te]) >= 0.5
    acc = float(np.mean(pred == (target[te] > 0.5)))
    share = float(target[tr].mean())
    majority = 1.0 if share >= 0.5 else 0.0
    baseline = float(np.mean(target[te] == majority))
    return ProbeResult(feature, acc, baseline, len(tr), len(te))


QUADRANTS = ("no-error; class 0", "error; class 0", "error; class 1", "no-error; class 1")


@dataclass
class WeightDiagnostics:
    lambdas: np.ndarray
    quadrant: np.ndarray
    histograms: dict
    quadrant_mean: dict
    group_class_mean: dict
    class_mean: dict
    bins: np.ndarray

    @property
    def n(self):
        return len(self.lambdas)

    def misclassified_mean(self):
        mis = (self.quadrant == 1) | (self.quadrant == 2)
        return float(self.lambdas[mis].mean()) if mis.any() else float("nan")


def weight_diagnostics(learner, adversary, train, n_bins=40):
    """Example weights over the whole dataset, stratified by confusion quadrant.

    Normalization scope is the full dataset, so the weights average 2.
    """
    f = adversary_forward(adversary, dataset_adversary_input(train, adversary.mode))
    lam = compute_lambda(f)
    pred = learner.predict(train.X) >= 0.5
    y = train.y > 0.5
    # 0: correct class 0, 1: error class 0, 2: error class 1, 3: correct class 1
    quadrant = np.where(y, np.where(pred, 3, 2), np.where(pred, 1, 0))
    hi = max(float(lam.max()), 1.0 + 1e-9)
    bins = np.linspace(1.0, math.ceil(hi * 10) / 10 + 1e-9, n_bins + 1)
    hists, qmean = {}, {}
    for q, name in enumerate(QUADRANTS):
        sel = lam[quadrant == q]
        hists[name] = np.histogram(sel, bins=bins)[0]
        qmean[name] = float(sel.mean()) if len(sel) else float("nan")
    class_mean = {c: float(lam[train.y == c].mean()) for c in (0.0, 1.0) if np.any(train.y == c)}
    group_class = {}
    for name, mask in report_groups(train).items():
        for c in (0, 1):
            sel = mask & (train.y == c)
            if sel.any():
                group_class[(name, c)] = float(lam[sel].mean())
    return WeightDiagnostics(lam, quadrant, hists, qmean, group_class, class_mean, bins)


def two_cluster_mass(lambdas, centers=(1.0, 4.0), width=0.5):
    """Share of weights within ``width`` of either cluster center."""
    lam = np.asarray(lambdas)
    near = np.zeros(len(lam), dtype=bool)
    for c in centers:
        near |= np.abs(lam - c) <= width
    return float(near.mean())
