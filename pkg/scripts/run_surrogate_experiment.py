"""Transformer vs GRN-Transformer on a synthetic corpus, three seeds, full training data.

Writes aggregate.csv, curves.csv and summary.json to --out and prints the
summary table. Defaults match the configuration the acceptance test runs
(about 20 minutes on one core).

    python3 scripts/run_surrogate_experiment.py --out runs/surrogate
"""

import argparse
import csv
import json
from pathlib import Path

from grnppg.cli import format_summary
from grnppg.surrogate import SurrogateSpec, run_surrogate
from grnppg.training import AGGREGATE_COLUMNS, CURVE_COLUMNS


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/surrogate")
    ap.add_argument("--pulses", type=int, default=SurrogateSpec.n_pulses)
    ap.add_argument("--d-model", type=int, default=SurrogateSpec.d_model)
    ap.add_argument("--epochs", type=int, default=SurrogateSpec.max_epochs)
    ap.add_argument("--patience", type=int, default=SurrogateSpec.patience)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()

    spec = SurrogateSpec(n_pulses=a.pulses, d_model=a.d_model, max_epochs=a.epochs, patience=a.patience,
                         seeds=tuple(int(s) for s in a.seeds.split(",")), threads=a.threads)
    res = run_surrogate(spec)

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(res.comparison.aggregate_rows(), AGGREGATE_COLUMNS, out / "aggregate.csv")
    write_csv(res.comparison.curve_rows(), CURVE_COLUMNS, out / "curves.csv")
    summary = {"spec": vars(spec), "prevalence": res.prevalence, "means": res.means, "checks": res.checks(),
               "summary": res.comparison.summary, "flags": res.comparison.flags, "wall_s": res.wall_s}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=list))

    print(format_summary(res.comparison.summary, res.comparison.flags))
    print(f"prevalence {res.prevalence:.3f}, {res.wall_s / 60:.1f} min")
    for k, v in res.checks().items():
        print(f"{k}: {'ok' if v else 'NOT MET'}")


if __name__ == "__main__":
    main()
