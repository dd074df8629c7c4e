"""Training procedures: ERM, IPW, ARL, the DRO and MinDiff surrogates, CV grid search, multi-seed runs.

All methods share one mini-batch loop. Each run draws its learner
initialization, adversary initialization and batch order from three
independent generators seeded by ``(seed, stream)``, so two methods with the
same seed see the same initial learner and the same batches.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from arl import numerics as nx
from arl.dataset import group_priors
from arl.eval import auc, metrics_from_scores, report_groups
from arl.model import (
    DEFAULT_HIDDEN,
    LearnerModel,
    adversary_input,
    adversary_objective_grad,
    adversary_width,
    capacity_boost,
    compute_lambda,
    make_adversary,
    make_learner,
)

log = logging.getLogger(__name__)

METHODS = ("ERM", "IPW_S", "IPW_SY", "ARL", "DRO", "MINDIFF")

GRID_BATCH_SIZES = (32, 64, 128, 256, 512)
GRID_LEARNING_RATES = (0.001, 0.01, 0.1, 1, 2, 5)

_INIT_STREAM, _ADV_STREAM, _BATCH_STREAM = 0, 1, 2


class DivergenceError(ArithmeticError):
    def __init__(self, step, player="learner"):
        super().__init__(f"{player} diverged at step {step}")
        self.step = step
        self.player = player


@dataclass
class TrainConfig:
    method: str = "ERM"
    learner_lr: float = 0.1
    adversary_lr: float = 0.1
    batch_size: int = 256
    train_steps: int = 10000
    seed: int = 0
    adversary_mode: str = "X+Y"
    adversary_hidden: tuple = ()
    hidden: tuple = DEFAULT_HIDDEN
    optimizer: str = "adagrad"
    capacity_multiplier: float = 1.0
    dro_eta: float = 0.5
    dro_alpha: float = 0.2
    mindiff_mu: float = 1.0
    # ARL: learner steps per adversary step
    learner_steps_per_adversary: int = 1
    # ARL: pin the adversary to a constant 0.5 output (lambda = 2 everywhere)
    freeze_adversary: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learner_lr <= 0 or self.adversary_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.dro_eta < 0:
            raise ValueError("dro_eta must be >= 0")
        if not 0 < self.dro_alpha <= 1:
            raise ValueError("dro_alpha must be in (0, 1]")
        if self.mindiff_mu < 0:
            raise ValueError("mindiff_mu must be >= 0")
        self.hidden = tuple(self.hidden)
        self.adversary_hidden = tuple(self.adversary_hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adversary_hidden"] = list(self.adversary_hidden)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    lambda_mean: list = field(default_factory=list)
    lambda_max: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)


@dataclass
class RunResult:
    learner: LearnerModel
    trace: TrainTrace
    config: TrainConfig
    adversary: object = None

    @property
    def seed(self):
        return self.config.seed


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def _batches(n, batch_size, rng):
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def _learner_for(config, train):
    hidden = capacity_boost(config.hidden, config.capacity_multiplier)
    return make_learner(train.X.shape[1], _rng(config.seed, _INIT_STREAM), hidden)


def _check_finite(value, step, player="learner"):
    if not np.isfinite(value):
        raise DivergenceError(step, player)


def _fit_weighted(config, train, weights=None):
    """Shared loop for the fixed-weight methods (ERM, IPW)."""
    learner = _learner_for(config, train)
    opt = nx.make_optimizer(learner.params, config.optimizer, config.learner_lr)
    batches = _batches(len(train), config.batch_size, _rng(config.seed, _BATCH_STREAM))
    trace = TrainTrace()
    X, y = train.X, train.y
    w_all = np.ones(len(train)) if weights is None else weights
    for step in range(config.train_steps):
        idx = next(batches)
        xb, yb, wb = X[idx], y[idx], w_all[idx]
        out, cache = nx.forward_cache(learner.params, xb)
        p = out[:, 0]
        loss = nx.weighted_bce(p, yb, wb)
        _check_finite(loss, step)
        grad_pre = wb * (p - yb) / np.sum(wb)
        nx.optimizer_step(learner.params, nx.backprop(learner.params, cache, grad_pre), opt)
        trace.loss.append(loss)
        trace.timestamps.append(time.perf_counter())
    return RunResult(learner, trace, config)


def train_erm(config, train):
    """Unweighted mean cross-entropy."""
    return _fit_weighted(config, train)


def ipw_weights(dataset, method, priors=None):
    """Fixed per-example weights 1/p(s) (IPW_S) or 1/p(s, y) (IPW_SY)."""
    ps, psy = priors if priors is not None else group_priors(dataset)
    if method == "IPW_S":
        probs = np.array([ps.get(int(g), 0.0) for g in dataset.s])
    elif method == "IPW_SY":
        probs = np.array([psy.get((int(g), int(c)), 0.0) for g, c in zip(dataset.s, dataset.y)])
    else:
        raise ValueError(f"not an IPW method: {method}")
    if np.any(probs <= 0):
        raise ValueError("zero-probability cell in group priors")
    return 1.0 / probs


def train_ipw(config, train, priors=None):
    return _fit_weighted(config, train, ipw_weights(train, config.method, priors))


def train_arl(config, train):
    """Alternating minimax: learner descends, adversary ascends the same lambda-weighted loss.

    Per batch: adversary scores -> lambda; learner step on the lambda-weighted
    cross-entropy; then (every ``learner_steps_per_adversary`` batches) an
    adversary step with the freshly updated learner held fixed.
    """
    learner = _learner_for(config, train)
    width = adversary_width(config.adversary_mode, train.X.shape[1], train.S.shape[1])
    adversary = make_adversary(
        width,
        _rng(config.seed, _ADV_STREAM),
        config.adversary_mode,
        config.adversary_hidden,
        zero=config.freeze_adversary,
    )
    l_opt = nx.make_optimizer(learner.params, config.optimizer, config.learner_lr)
    a_opt = nx.make_optimizer(adversary.params, config.optimizer, config.adversary_lr)
    batches = _batches(len(train), config.batch_size, _rng(config.seed, _BATCH_STREAM))
    trace = TrainTrace()
    X, y, S = train.X, train.y, train.S
    mode = config.adversary_mode
    k = max(1, config.learner_steps_per_adversary)

    for step in range(config.train_steps):
        idx = next(batches)
        xb, yb = X[idx], y[idx]
        a_in = adversary_input(xb, yb, mode, S[idx])
        a_out, a_cache = nx.forward_cache(adversary.params, a_in)
        f = a_out[:, 0]
        lam = compute_lambda(f)

        out, cache = nx.forward_cache(learner.params, xb)
        p = out[:, 0]
        loss = nx.weighted_bce(p, yb, lam)
        _check_finite(loss, step)
        grad_pre = lam * (p - yb) / np.sum(lam)
        nx.optimizer_step(learner.params, nx.backprop(learner.params, cache, grad_pre), l_opt)

        if not config.freeze_adversary and (step + 1) % k == 0:
            losses = nx.bce_terms(nx.forward(learner.params, xb), yb)
            grads = adversary_objective_grad(adversary.params, a_in, losses, a_cache)
            # ascend: descend on the negated weighted loss
            grads = nx.GradientSet([-g for g in grads.arrays])
            try:
                nx.optimizer_step(adversary.params, grads, a_opt)
            except nx.NumericError:
                raise DivergenceError(step, "adversary") from None

        trace.loss.append(loss)
        trace.lambda_mean.append(float(lam.mean()))
        trace.lambda_max.append(float(lam.max()))
        trace.timestamps.append(time.perf_counter())
    return RunResult(learner, trace, config, adversary)


def dro_loss_grad(p, y, eta):
    """Mean squared hinge (l - eta)_+^2 and its gradient w.r.t. the output logits."""
    ce = nx.bce_terms(p, y)
    h = np.maximum(ce - eta, 0.0)
    n = len(p)
    return float(np.mean(h * h)), 2.0 * h * (p - y) / n


def dro_risk_bound(losses, eta, alpha):
    """Chi-square dual upper bound on the worst-case risk over subpopulations of mass >= alpha."""
    c = np.sqrt((1.0 / alpha - 1.0) ** 2 + 1.0)
    h = np.maximum(np.asarray(losses) - eta, 0.0)
    return float(c * np.sqrt(np.mean(h * h)) + eta)


def train_dro(config, train):
    learner = _learner_for(config, train)
    opt = nx.make_optimizer(learner.params, config.optimizer, config.learner_lr)
    batches = _batches(len(train), config.batch_size, _rng(config.seed, _BATCH_STREAM))
    trace = TrainTrace()
    for step in range(config.train_steps):
        idx = next(batches)
        xb, yb = train.X[idx], train.y[idx]
        out, cache = nx.forward_cache(learner.params, xb)
        loss, grad_pre = dro_loss_grad(out[:, 0], yb, config.dro_eta)
        _check_finite(loss, step)
        nx.optimizer_step(learner.params, nx.backprop(learner.params, cache, grad_pre), opt)
        trace.loss.append(loss)
        trace.timestamps.append(time.perf_counter())
    return RunResult(learner, trace, config)


def mindiff_loss_grad(p, y, codes, mu):
    """Mean BCE plus mu * sum over features of |mean score gap on negatives|.

    ``codes`` is a list of per-feature arrays with values 0/1 (or -1 outside).
    Returns (loss, grad w.r.t. logits).
    """
    n = len(p)
    loss = float(np.mean(nx.bce_terms(p, y)))
    grad_p = np.zeros(n)
    neg = y <= 0.5
    if mu > 0:
        for code in codes:
            a = neg & (code == 0)
            b = neg & (code == 1)
            na, nb = int(a.sum()), int(b.sum())
            if na == 0 or nb == 0:
                continue
            gap = p[a].mean() - p[b].mean()
            loss += mu * abs(gap)
            sign = np.sign(gap)
            grad_p[a] += mu * sign / na
            grad_p[b] -= mu * sign / nb
    grad_pre = (p - y) / n + grad_p * p * (1.0 - p)
    return loss, grad_pre


def train_mindiff(config, train):
    for p in train.schema.protected:
        if len(p.values) != 2:
            raise ValueError(f"MinDiff needs binary protected features; {p.column} has {len(p.values)} values")
    if not train.schema.protected:
        raise ValueError("MinDiff needs protected features")
    learner = _learner_for(config, train)
    opt = nx.make_optimizer(learner.params, config.optimizer, config.learner_lr)
    batches = _batches(len(train), config.batch_size, _rng(config.seed, _BATCH_STREAM))
    trace = TrainTrace()
    code_arrays = [train.codes[p.column] for p in train.schema.protected]
    for step in range(config.train_steps):
        idx = next(batches)
        xb, yb = train.X[idx], train.y[idx]
        out, cache = nx.forward_cache(learner.params, xb)
        loss, grad_pre = mindiff_loss_grad(out[:, 0], yb, [c[idx] for c in code_arrays], config.mindiff_mu)
        _check_finite(loss, step)
        nx.optimizer_step(learner.params, nx.backprop(learner.params, cache, grad_pre), opt)
        trace.loss.append(loss)
        trace.timestamps.append(time.perf_counter())
    return RunResult(learner, trace, config)


def train(config, train_set):
    """Dispatch on ``config.method``."""
    m = config.method
    if m == "ERM":
        return train_erm(config, train_set)
    if m in ("IPW_S", "IPW_SY"):
        return train_ipw(config, train_set)
    if m == "ARL":
        return train_arl(config, train_set)
    if m == "DRO":
        return train_dro(config, train_set)
    return train_mindiff(config, train_set)


def evaluate(result, test):
    scores = result.learner.predict(test.X)
    return metrics_from_scores(scores, test.y, report_groups(test))


# --- model selection -------------------------------------------------------

def auc_criterion(scores, labels, config):
    """Higher is better."""
    return auc(scores, labels)


def dro_criterion(scores, labels, config):
    """Negated held-out chi-square worst-case risk bound at the config's alpha (higher is better)."""
    return -dro_risk_bound(nx.bce_terms(scores, labels), config.dro_eta, config.dro_alpha)


CRITERIA = {"auc": auc_criterion, "dro_worst_case": dro_criterion}


def expand_grid(base, space):
    """Cartesian product of ``space`` (field -> list of values) over ``base``, in declaration order."""
    if not space:
        return [base]
    keys = list(space)
    for key in keys:
        if not space[key]:
            raise ValueError(f"empty grid axis {key!r}")
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(space[k] for k in keys))]


def standard_grid(method):
    """The learning-rate x batch-size grid; ARL adds the adversary learning rate axis."""
    space = {"batch_size": list(GRID_BATCH_SIZES), "learner_lr": list(GRID_LEARNING_RATES)}
    if method == "ARL":
        space["adversary_lr"] = list(GRID_LEARNING_RATES)
    return space


def _cv_score(config, folds, criterion):
    vals = []
    for fit, val in folds:
        try:
            result = train(config, fit)
        except DivergenceError:
            return float("nan")
        scores = result.learner.predict(val.X)
        # selection only ever sees (scores, labels)
        vals.append(criterion(scores, val.y, config))
    return float(np.mean(vals))


def grid_search(points, train_set, k=5, seed=0, criterion="auc", jobs=1):
    """Mean k-fold validation criterion per grid point; returns (best config, table).

    Ties go to the smaller batch, then the smaller learning rate, then
    declaration order.
    """
    points = list(points)
    if not points:
        raise ValueError("empty grid")
    crit = CRITERIA[criterion]
    from arl.dataset import kfold

    folds = kfold(train_set, k, seed)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            scores = list(pool.map(_cv_score, points, [folds] * len(points), [crit] * len(points)))
    else:
        scores = [_cv_score(p, folds, crit) for p in points]
    table = [{"index": i, "score": s, "config": p.to_dict()} for i, (p, s) in enumerate(zip(points, scores))]
    valid = [i for i, s in enumerate(scores) if np.isfinite(s)]
    if not valid:
        raise DivergenceError(-1, "every grid point")
    best = min(valid, key=lambda i: (-scores[i], points[i].batch_size, points[i].learner_lr, i))
    for row in table:
        row["best"] = row["index"] == best
    return points[best], table


# --- multi-seed aggregation ------------------------------------------------

@dataclass
class AggregateReport:
    config: TrainConfig
    seeds: list
    per_seed: dict
    mean: dict
    std: dict
    diverged: list = field(default_factory=list)
    # seed -> RunResult, only when multi_run(keep_models=True)
    results: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "per_seed": {str(s): r.to_dict() for s, r in self.per_seed.items()},
            "mean": self.mean,
            "std": self.std,
            "diverged": self.diverged,
        }


def flatten_report(report):
    out = {
        "auc_overall": report.auc_overall,
        "auc_macro_avg": report.auc_macro_avg,
        "auc_min": report.auc_min,
        "auc_minority": report.auc_minority,
    }
    for g, v in report.group_auc.items():
        out[f"auc_{g}"] = v
    return out


def aggregate(reports):
    """Mean and sample std per metric over {seed: MetricsReport}; independent of seed order."""
    keys = sorted(reports)
    flat = [flatten_report(reports[s]) for s in keys]
    names = []
    for f in flat:
        names.extend(k for k in f if k not in names)
    mean, std = {}, {}
    for name in names:
        vals = np.array([f[name] for f in flat if name in f and np.isfinite(f[name])])
        if len(vals) == 0:
            continue
        mean[name] = float(vals.mean())
        std[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def _one_seed(config, train_set, test, keep=False):
    try:
        result = train(config, train_set)
    except DivergenceError as exc:
        return config.seed, None, str(exc), None
    return config.seed, evaluate(result, test), None, result if keep else None


def multi_run(config, train_set, test, n_seeds=10, jobs=1, keep_models=False):
    """Train and evaluate with seeds config.seed + 0..n_seeds-1; diverged runs are excluded and listed."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    configs = [replace(config, seed=config.seed + i) for i in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(
                pool.map(_one_seed, configs, [train_set] * n_seeds, [test] * n_seeds, [keep_models] * n_seeds)
            )
    else:
        outcomes = [_one_seed(c, train_set, test, keep_models) for c in configs]
    per_seed, diverged, results = {}, [], {}
    for seed, report, err, result in outcomes:
        if report is None:
            log.warning("seed %d excluded: %s", seed, err)
            diverged.append({"seed": seed, "error": err})
            continue
        per_seed[seed] = report
        if result is not None:
            results[seed] = result
    if not per_seed:
        raise DivergenceError(-1, "every seed")
    mean, std = aggregate(per_seed)
    return AggregateReport(config, sorted(per_seed), per_seed, mean, std, diverged, results)
