"""Convert the raw UCI Adult and ProPublica COMPAS files into header-row CSVs.

Usage:
    python scripts/prepare_data.py --adult-dir RAW --compas-csv RAW/compas-scores-two-years.csv --out data/

The raw files are the public distributions (adult.data, adult.test and
compas-scores-two-years.csv). Missing cells are written as "?" and declared in
the schema, so nothing is dropped here.
"""

import argparse
import csv
from pathlib import Path

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]

COMPAS_COLUMNS = [
    "sex", "race", "age", "age_cat", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "priors_count", "c_charge_degree", "c_charge_desc",
    "two_year_recid",
]


def _adult_rows(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(ADULT_COLUMNS):
                continue
            cells[-1] = cells[-1].rstrip(".")
            yield cells


def prepare_adult(raw_dir, out_path):
    raw_dir = Path(raw_dir)
    n = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ADULT_COLUMNS)
        for name in ("adult.data", "adult.test"):
            for row in _adult_rows(raw_dir / name):
                writer.writerow(row)
                n += 1
    return n


def prepare_compas(raw_csv, out_path):
    n = 0
    with open(raw_csv, encoding="utf-8") as src, open(out_path, "w", newline="", encoding="utf-8") as dst:
        reader = csv.DictReader(src)
        writer = csv.writer(dst)
        writer.writerow(COMPAS_COLUMNS)
        for rec in reader:
            writer.writerow([rec[c].strip() or "?" for c in COMPAS_COLUMNS])
            n += 1
    return n


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--adult-dir", required=True)
    parser.add_argument("--compas-csv", required=True)
    parser.add_argument("--out", default="data")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print("adult rows:", prepare_adult(args.adult_dir, out / "adult.csv"))
    print("compas rows:", prepare_compas(args.compas_csv, out / "compas.csv"))


if __name__ == "__main__":
    main()
