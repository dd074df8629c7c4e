"""The two players: a ReLU MLP learner and a (by default linear) adversary.

The adversary scores each example in (0, 1); ``compute_lambda`` rescales the
scores into example weights ``1 + n * f / sum(f)``, which are at least 1 and
average exactly 2 over the normalization scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from arl import numerics as nx
from arl.dataset import EncodingStats

ADVERSARY_MODES = ("X+Y", "S", "S+Y", "X+Y+S")
CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (64, 32)


@dataclass
class LearnerModel:
    params: nx.ParameterSet
    hidden: tuple = DEFAULT_HIDDEN

    def predict(self, X):
        return nx.forward(self.params, X)


@dataclass
class AdversaryModel:
    params: nx.ParameterSet
    mode: str = "X+Y"
    hidden: tuple = ()

    def __post_init__(self):
        if self.mode not in ADVERSARY_MODES:
            raise ValueError(f"unknown adversary mode {self.mode!r}")


def capacity_boost(hidden, multiplier):
    """Scale hidden widths by ``multiplier`` (>= 1), rounding to the nearest unit."""
    if multiplier < 1:
        raise ValueError("capacity multiplier must be >= 1")
    return tuple(int(round(h * multiplier)) for h in hidden)


def make_learner(in_dim, rng, hidden=DEFAULT_HIDDEN):
    dims = [in_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    return LearnerModel(nx.init_params(dims, acts, rng), tuple(hidden))


def adversary_width(mode, n_features, n_protected):
    if mode == "X+Y":
        return n_features + 1
    if mode == "S":
        return n_protected
    if mode == "S+Y":
        return n_protected + 1
    return n_features + 1 + n_protected


def make_adversary(in_dim, rng, mode="X+Y", hidden=(), zero=False):
    """Linear adversary by default; ``hidden`` adds ReLU layers.

    ``zero=True`` gives all-zero parameters (every score exactly 0.5).
    """
    dims = [in_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    params = nx.init_params(dims, acts, rng)
    if zero:
        for layer in params.layers:
            layer.weight[:] = 0.0
    return AdversaryModel(params, mode, tuple(hidden))


def adversary_input(X, y, mode, S=None):
    """Concatenate the adversary's input columns for ``mode``.

    The label is appended as a raw 0/1 column; S is the protected one-hot block.
    """
    if mode not in ADVERSARY_MODES:
        raise ValueError(f"unknown adversary mode {mode!r}")
    y = np.asarray(y, dtype=float)[:, None]
    if "S" in mode and (S is None or S.shape[1] == 0):
        raise ValueError(f"adversary mode {mode} needs protected columns, but none exist")
    if mode == "X+Y":
        return np.hstack([X, y])
    if mode == "S":
        return np.asarray(S, dtype=float)
    if mode == "S+Y":
        return np.hstack([S, y])
    return np.hstack([X, y, S])


def dataset_adversary_input(ds, mode):
    return adversary_input(ds.X, ds.y, mode, ds.S)


def adversary_forward(adv, adv_inputs):
    return nx.forward(adv.params, adv_inputs)


def compute_lambda(f):
    """Example weights ``1 + n * f / sum(f)`` over the given scope."""
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    if n == 0:
        raise ValueError("cannot normalize an empty score vector")
    total = f.sum()
    # constant scores give exactly 2 (the rounded sum would otherwise leave ~1 ulp of noise)
    if total < 1e-12 or np.all(f == f[0]):
        return np.full(n, 2.0)
    return 1.0 + n * f / total


def lambda_grad_wrt_scores(f, losses):
    """d/df of mean_lambda_weighted_loss = sum(lambda * loss) / sum(lambda).

    sum(lambda) is the constant 2n, so only the numerator depends on f.
    """
    f = np.asarray(f, dtype=float)
    losses = np.asarray(losses, dtype=float)
    total = f.sum()
    if total < 1e-12:
        return np.zeros_like(f)
    weighted = np.dot(f, losses) / total
    return (losses - weighted) / (2.0 * total)


def adversary_objective(params, adv_inputs, losses):
    """Lambda-weighted mean loss the adversary maximizes, for fixed per-example losses."""
    f = nx.forward(params, adv_inputs)
    lam = compute_lambda(f)
    return float(np.sum(lam * losses) / np.sum(lam))


def adversary_objective_grad(params, adv_inputs, losses, cache=None):
    """Gradient of ``adversary_objective`` w.r.t. the adversary parameters."""
    if cache is None:
        out, cache = nx.forward_cache(params, adv_inputs)
    else:
        out = nx.sigmoid(cache[-1][1])
    f = out[:, 0]
    d_pre = lambda_grad_wrt_scores(f, losses) * f * (1.0 - f)
    return nx.backprop(params, cache, d_pre)


def save_checkpoint(path, learner, stats, method, adversary=None, extra=None):
    def pack(params):
        return [
            {"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
            for l in params.layers
        ]

    doc = {
        "version": CHECKPOINT_VERSION,
        "method": method,
        "learner": {"hidden": list(learner.hidden), "layers": pack(learner.params)},
        "adversary": None,
        "stats": stats.to_dict() if stats is not None else None,
        "extra": extra or {},
    }
    if adversary is not None:
        doc["adversary"] = {
            "mode": adversary.mode,
            "hidden": list(adversary.hidden),
            "layers": pack(adversary.params),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns a dict with learner, adversary (or None), stats, method and extra."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")

    def unpack(layers):
        return nx.ParameterSet(
            [
                nx.Layer(np.array(l["weight"], dtype=float), np.array(l["bias"], dtype=float), l["activation"])
                for l in layers
            ]
        )

    learner = LearnerModel(unpack(doc["learner"]["layers"]), tuple(doc["learner"]["hidden"]))
    adversary = None
    if doc["adversary"] is not None:
        a = doc["adversary"]
        adversary = AdversaryModel(unpack(a["layers"]), a["mode"], tuple(a["hidden"]))
    stats = EncodingStats.from_dict(doc["stats"]) if doc["stats"] else None
    return {
        "learner": learner,
        "adversary": adversary,
        "stats": stats,
        "method": doc["method"],
        "extra": doc.get("extra", {}),
    }
