"""Command-line entry point.

Every subcommand reads an optional JSON config, writes results under
``--out`` and finishes with ``manifest.json`` echoing the config, seed,
package version and a timestamp.  Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds, worstcase
from .backend import BACKEND
from .core_linear import WeightSetting
from .flow_engine import gd_run, gf_integrate
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_data,
    build_init,
    build_objective,
    drift_summary,
    package_version,
    stepsize_refinement_experiment,
)
from .init_balance import balance_nearest, lemma_distance_bound, unbalancedness


class UsageError(Exception):
    pass


PRESETS = {
    "certify": {"kind": "lnn_flow", "w_norm": 0.1, "nu": 0.0, "n": 3, "eps_bar": 0.5, "eps": 1.0 / 6.0, "t": 1.0},
}


def _load_config(path, preset=None) -> dict:
    if path is None:
        if preset is None:
            raise UsageError("a --config file is required")
        return dict(preset)
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise UsageError(f"config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _write_manifest(out: Path, command: str, config: dict, outputs: dict) -> None:
    seed = config.get("seed")
    for key in ("init", "data"):
        if seed is None and isinstance(config.get(key), dict):
            seed = config[key].get("seed")
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": package_version(),
        "backend": BACKEND,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


# --------------------------------------------------------------- subcommands


def _certify_one(c: dict) -> dict:
    kind = c.get("kind", "lnn_flow")
    if kind == "lnn_flow":
        cert = bounds.lnn_flow_certificate(c["w_norm"], c["nu"], int(c["n"]), c["eps_bar"], c["eps"], c.get("t", 0.0))
        return json.loads(cert.to_json())
    if kind == "gd_translation":
        eta, k = bounds.gd_translation(c["w_norm"], c["nu"], int(c["n"]), c["eps_tilde"], c.get("eta"))
        return {"statement": "balanced gd translation", "inputs": c, "outputs": {"eta_max": eta, "k": k}}
    if kind == "unbalanced_translation":
        e_hat, eta, k = bounds.unbalanced_translation(c["w_norm"], c["nu"], int(c["n"]), c["eps_tilde"], c.get("eta"))
        return {"statement": "nearly balanced gd translation", "inputs": c,
                "outputs": {"eps_hat_max": e_hat, "eta_max": eta, "k_bound": k}}
    if kind == "coarse_eta":
        r = bounds.coarse_eta_bound(c["m"], c["beta"], c["f0"], c["eps"], c.get("init_gap", 0.0), c["t_tilde"])
        return {"statement": r.statement, "inputs": c, "outputs": {"eta_max": r.eta, "feasible": r.feasible}}
    raise ConfigError(f"unknown certificate kind {kind!r}")


def cmd_certify(cfg: dict, out: Path) -> dict:
    items = cfg["sweep"] if "sweep" in cfg else [cfg]
    certs = [_certify_one(c) for c in items]
    (out / "certificates.json").write_text(json.dumps(certs, indent=2) + "\n")
    for c in certs:
        print(json.dumps(c["outputs"]))
    return {"certificates": "certificates.json", "count": len(certs)}


def _problem(cfg: dict):
    if "dims" not in cfg:
        raise ConfigError("config needs dims")
    dims = tuple(int(d) for d in cfg["dims"])
    data = build_data(cfg.get("data", {"kind": "synthetic", "n_samples": 50, "seed": 0}), dims)
    theta0 = build_init(cfg.get("init", {"kind": "balanced", "radius": 0.2, "seed": 0}), dims)
    obj = build_objective(dims, cfg.get("activation", "linear"), cfg.get("loss", "square"), data)
    return dims, theta0, obj


def _dump_states(path: Path, times, states, obj) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "loss", "norm"] + [f"x{i}" for i in range(states.shape[1])])
        for t, s in zip(times, states):
            w.writerow([_fmt(t), _fmt(obj.value(s)), _fmt(np.linalg.norm(s))] + [_fmt(v) for v in s])


def cmd_flow(cfg: dict, out: Path) -> dict:
    dims, theta0, obj = _problem(cfg)
    horizon = float(cfg.get("T", 10.0))
    samples = int(cfg.get("samples", 101))
    grid = np.linspace(0.0, horizon, samples)
    traj = gf_integrate(theta0, horizon, tol=float(cfg.get("tol", 1e-7)), grad=obj)
    _dump_states(out / "flow.csv", grid, np.asarray(traj(grid)), obj)
    return {"trajectory": "flow.csv", "descent_ok": bool(traj.meta.get("descent_ok", True))}


def cmd_gd(cfg: dict, out: Path) -> dict:
    dims, theta0, obj = _problem(cfg)
    if "eta" not in cfg or "steps" not in cfg:
        raise ConfigError("gd config needs eta and steps")
    tr = gd_run(theta0, float(cfg["eta"]), int(cfg["steps"]), obj, record_every=int(cfg.get("record_every", 1)))
    _dump_states(out / "gd.csv", tr.times, tr.states, obj)
    return {"trajectory": "gd.csv", "final_loss": float(obj.value(tr.states[-1]))}


def cmd_worstcase(cfg: dict, out: Path) -> dict:
    start, p, t_mid = worstcase.preset(cfg.get("a", 1.0), cfg.get("b", 3.0), cfg.get("eps", 1e-6))
    t_tilde = float(cfg.get("t_tilde", t_mid))
    etas = cfg.get("etas")
    if etas is None:
        etas = [worstcase.threshold_eta(p, t_tilde)]
    reports = []
    for i, eta in enumerate(etas):
        rep = worstcase.divergence_experiment(start, p, t_tilde, float(eta))
        reports.append(rep.summary())
        with open(out / f"worst_{i}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "discrepancy"])
            for t, d in zip(rep.window_times, rep.window_discrepancy):
                w.writerow([_fmt(t), _fmt(d)])
    (out / "worstcase.json").write_text(json.dumps(reports, indent=2) + "\n")
    for r in reports:
        print(json.dumps(r))
    return {"report": "worstcase.json", "t_tilde": t_tilde, "count": len(reports)}


def cmd_experiment(cfg: dict, out: Path) -> dict:
    doc = dict(cfg)
    doc["output_dir"] = str(out)
    ec = ExperimentConfig.from_dict(doc)
    records = stepsize_refinement_experiment(ec)
    summary = drift_summary(records)
    print(json.dumps({"drift_ratio": summary}))
    return {"csv": [f"drift_r{r}.csv" for r in sorted(records)],
            "drift_ratio": {str(k): v for k, v in summary.items()},
            "aborted": {str(r): rec.aborted_at for r, rec in records.items() if rec.aborted_at is not None}}


def cmd_balance(cfg: dict, out: Path) -> dict:
    if "dims" not in cfg:
        raise ConfigError("config needs dims")
    dims = tuple(int(d) for d in cfg["dims"])
    theta = build_init(cfg.get("init", {"kind": "balanced", "radius": 0.2, "seed": 0}), dims)
    scale = float(cfg.get("perturb", 0.0))
    if scale:
        rng = np.random.default_rng(int(cfg.get("perturb_seed", 0)))
        theta = WeightSetting.from_flat(theta.flat() + scale * rng.standard_normal(theta.size), dims)
    before = unbalancedness(theta)
    fixed = balance_nearest(theta, sweeps=int(cfg.get("sweeps", 50)), tol=float(cfg.get("tol", 1e-8)))
    report = {
        "unbalancedness_before": before,
        "unbalancedness_after": unbalancedness(fixed),
        "moved": float(np.linalg.norm(fixed.flat() - theta.flat())),
        "distance_bound": lemma_distance_bound(theta),
    }
    np.save(out / "balanced.npy", fixed.flat())
    (out / "balance.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return {"report": "balance.json", "weights": "balanced.npy"}


COMMANDS = {
    "certify": cmd_certify,
    "flow": cmd_flow,
    "gd": cmd_gd,
    "worstcase": cmd_worstcase,
    "experiment": cmd_experiment,
    "balance": cmd_balance,
}

DESCRIPTIONS = {
    "certify": "evaluate certificates from a JSON config (or the built-in preset)",
    "flow": "integrate gradient flow and dump the trajectory",
    "gd": "run gradient descent and dump the iterates",
    "worstcase": "run the worst-case divergence experiment",
    "experiment": "step-size refinement experiment with CSV output",
    "balance": "draw a balanced start, optionally perturb, and rebalance",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradflow", description="Gradient flow vs gradient descent toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in DESCRIPTIONS.items():
        sp = sub.add_parser(name, help=helptext, description=helptext)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", default="results", help="output directory (default: results)")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        preset = PRESETS.get(args.command)
        cfg = _load_config(args.config, preset)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out)
        _write_manifest(out, args.command, cfg, outputs)
    except (UsageError, ConfigError, KeyError) as err:
        msg = f"missing config key {err}" if isinstance(err, KeyError) else str(err)
        print(json.dumps({"error": "usage", "message": msg}), file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - reported as structured failure
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
