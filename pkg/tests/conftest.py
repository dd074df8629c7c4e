import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from arl.dataset import RawTable, Schema, encode, load_dataset, split

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"

TOY_SCHEMA = Schema.from_dict(
    {
        "name": "toy",
        "columns": {"a": "numeric", "b": "numeric", "color": "categorical", "sex": "protected", "race": "protected",
                    "label": "label"},
        "label": {"column": "label", "positive": "yes"},
        "protected": [
            {"column": "race", "values": {"White": "W", "Black": "B"}},
            {"column": "sex", "values": {"Male": "M", "Female": "F"}},
        ],
    }
)


def toy_frame(n=200, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(3.0, 2.0, n)
    b = rng.normal(-1.0, 0.5, n)
    logit = a - 3.0 + 2 * (b + 1.0)
    return pd.DataFrame(
        {
            "a": a,
            "b": b,
            "color": rng.choice(["red", "green", "blue"], n),
            "sex": rng.choice(["Male", "Female"], n, p=[0.6, 0.4]),
            "race": rng.choice(["White", "Black", "Other"], n, p=[0.7, 0.2, 0.1]),
            "label": np.where(rng.random(n) < 1 / (1 + np.exp(-logit)), "yes", "no"),
        }
    )


def toy_dataset(n=200, seed=0):
    frame = toy_frame(n, seed).astype({"a": float, "b": float})
    ds, _ = encode(RawTable(frame), TOY_SCHEMA)
    return ds


def write_toy_csv(tmp_path, n=200, seed=0):
    data = tmp_path / "toy.csv"
    schema = tmp_path / "toy.schema.json"
    toy_frame(n, seed).to_csv(data, index=False)
    schema.write_text(json.dumps(TOY_SCHEMA.to_dict()))
    return data, schema


@pytest.fixture
def toy():
    return toy_dataset()


def _require(path):
    if not path.exists():
        pytest.fail(f"required data file missing: {path}")
    return path


@pytest.fixture(scope="session")
def adult():
    return load_dataset(_require(DATA / "adult.csv"), DATA / "adult.schema.json")


@pytest.fixture(scope="session")
def adult_split(adult):
    return split(adult, 0.7, 0)


@pytest.fixture(scope="session")
def compas():
    return load_dataset(_require(DATA / "compas.csv"), DATA / "compas.schema.json")


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {key:<8} {detail}")
