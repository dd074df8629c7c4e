"""Cross-validated hyperparameter selection; writes the tuned configs used by the acceptance tests.

ERM and ARL search the full batch-size x learning-rate grid (ARL also over the
adversary learning rate). DRO reuses ERM's learning rate and batch size and
searches its threshold eta under the worst-case criterion.

    python scripts/tune.py --data data/adult.csv --schema data/adult.schema.json \
        --out configs/adult_tuned.json
"""

import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

from arl.cli import DEFAULT_ETA_GRID
from arl.dataset import load_dataset, split
from arl.train import TrainConfig, expand_grid, grid_search, standard_grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--schema", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--methods", default="ERM,ARL,DRO")
    ap.add_argument("--steps", type=int, default=10000)
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    doc = json.loads(out.read_text()) if out.exists() else {}
    doc.update({"data": args.data, "schema": args.schema, "split_seed": args.split_seed, "folds": args.folds})
    doc.setdefault("configs", {})
    doc.setdefault("cv_tables", {})
    train_set, _ = split(load_dataset(args.data, args.schema), 0.7, args.split_seed)

    for method in args.methods.split(","):
        t0 = time.time()
        base = TrainConfig(method=method, train_steps=args.steps)
        if method == "DRO":
            erm = doc["configs"]["ERM"]
            base = replace(base, learner_lr=erm["learner_lr"], batch_size=erm["batch_size"])
            points, criterion = expand_grid(base, {"dro_eta": list(DEFAULT_ETA_GRID)}), "dro_worst_case"
        else:
            points, criterion = expand_grid(base, standard_grid(method)), "auc"
        best, table = grid_search(points, train_set, args.folds, args.split_seed, criterion, args.jobs)
        doc["configs"][method] = best.to_dict()
        doc["cv_tables"][method] = table
        logging.info("%s: %d points in %.0fs -> %s", method, len(points), time.time() - t0, best.to_json())
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
