"""Record the drift-ratio baseline used by the refinement acceptance check.

Runs the step-size refinement experiment for a linear and a ReLU network
and writes ``src/gradflow/data/baseline_drift.json``.  Rerun only when the
experiment definition changes on purpose.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from gradflow.backend import BACKEND
from gradflow.harness import ExperimentConfig, drift_summary, package_version, stepsize_refinement_experiment

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "gradflow" / "data" / "baseline_drift.json"


def baseline_configs() -> dict:
    common = {
        "dims": [16, 8, 8, 4],
        "init": {"kind": "xavier", "seed": 0},
        "data": {"kind": "synthetic", "n_samples": 200, "seed": 0, "whiten": True},
        "eta0": 0.001,
        "refinements": [2, 5, 10, 20],
        "iterations": 5000,
    }
    return {"linear": dict(common, activation="linear"), "relu": dict(common, activation="relu")}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    doc = {"version": package_version(), "backend": BACKEND, "runs": {}}
    for name, cfg in baseline_configs().items():
        start = time.perf_counter()
        summary = drift_summary(stepsize_refinement_experiment(ExperimentConfig.from_dict(cfg)))
        doc["runs"][name] = {"config": cfg, "drift_ratio": {str(r): v for r, v in summary.items()}}
        print(f"{name}: {summary} ({time.perf_counter() - start:.1f} s)")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
