"""Convert the raw UCI German Credit and Adult files into headered CSVs.

Usage:
    python scripts/prepare_datasets.py RAW_DIR OUT_DIR

RAW_DIR must contain ``german.data``, ``adult.data`` and ``adult.test`` as
distributed by the UCI repository. OUT_DIR receives ``german_credit.csv``,
``adult.csv`` and a ``*.schema.json`` next to each.
"""

import csv
import json
import sys
from pathlib import Path

GERMAN_COLUMNS = [
    ("checking_status", "categorical"),
    ("duration_months", "numeric"),
    ("credit_history", "categorical"),
    ("purpose", "categorical"),
    ("credit_amount", "numeric"),
    ("savings", "categorical"),
    ("employment_since", "categorical"),
    ("installment_rate", "numeric"),
    ("personal_status_sex", "categorical"),
    ("other_debtors", "categorical"),
    ("residence_since", "numeric"),
    ("property", "categorical"),
    ("age", "numeric"),
    ("other_installment_plans", "categorical"),
    ("housing", "categorical"),
    ("existing_credits", "numeric"),
    ("job", "categorical"),
    ("people_liable", "numeric"),
    ("telephone", "categorical"),
    ("foreign_worker", "categorical"),
]

ADULT_COLUMNS = [
    ("age", "numeric"),
    ("workclass", "categorical"),
    ("fnlwgt", "numeric"),
    ("education", "categorical"),
    ("education_num", "numeric"),
    ("marital_status", "categorical"),
    ("occupation", "categorical"),
    ("relationship", "categorical"),
    ("race", "categorical"),
    ("sex", "categorical"),
    ("capital_gain", "numeric"),
    ("capital_loss", "numeric"),
    ("hours_per_week", "numeric"),
    ("native_country", "categorical"),
]


def _schema(columns, label, classes):
    cols = [{"name": name, "kind": kind} for name, kind in columns]
    cols.append({"name": label, "kind": "label", "classes": classes})
    return {"columns": cols}


def convert_german(raw_dir: Path, out_dir: Path) -> int:
    rows = []
    for line in (raw_dir / "german.data").read_text().splitlines():
        if not line.strip():
            continue
        fields = line.split()
        # 1 = good, 2 = bad in the UCI coding
        label = {"1": "good", "2": "bad"}[fields[-1]]
        rows.append(fields[:-1] + [label])
    header = [name for name, _ in GERMAN_COLUMNS] + ["credit"]
    with open(out_dir / "german_credit.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    schema = _schema(GERMAN_COLUMNS, "credit", ["bad", "good"])
    (out_dir / "german_credit.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    return len(rows)


def convert_adult(raw_dir: Path, out_dir: Path) -> int:
    rows = []
    for name in ("adult.data", "adult.test"):
        for line in (raw_dir / name).read_text().splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            fields[-1] = fields[-1].rstrip(".")
            rows.append(fields)
    header = [name for name, _ in ADULT_COLUMNS] + ["income"]
    with open(out_dir / "adult.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    schema = _schema(ADULT_COLUMNS, "income", ["<=50K", ">50K"])
    (out_dir / "adult.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    return len(rows)


def main(argv):
    if len(argv) != 3:
        print(__doc__)
        return 2
    raw_dir, out_dir = Path(argv[1]), Path(argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    print("german_credit rows:", convert_german(raw_dir, out_dir))
    print("adult rows:", convert_adult(raw_dir, out_dir))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
