"""Experiment configuration and the step-size refinement experiment.

Each refinement factor ``r`` reruns gradient descent at ``eta0 / r`` from the
same start; its iterate ``r k`` is compared with iterate ``k`` of the
baseline run.  Rows are written as CSV with a fixed header.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core_linear import DataMoments, WeightSetting
from .datasets import load_idx, synthetic_dataset, xavier_uniform_init
from .errors import DivergenceError, ShapeError
from .flow_engine import LinearObjective, NetworkObjective, gd_run
from .homogeneous import ActivationSpec, LabeledSet
from .init_balance import BalancedInitConfig, random_balanced_init

CSV_HEADER = "t,loss_base,loss_r,dist_weights,dist_from_init"
DEFAULT_STEP_CAP = 5_000_000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def package_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0+unknown"


def parse_activation(spec) -> ActivationSpec:
    if spec in ("linear", None):
        return ActivationSpec.linear()
    if spec == "relu":
        return ActivationSpec.relu()
    if isinstance(spec, dict) and "leaky" in spec:
        return ActivationSpec.leaky(float(spec["leaky"]))
    raise ConfigError(f"unknown activation {spec!r}")


@dataclass
class ExperimentConfig:
    dims: tuple
    activation: object = "linear"
    loss: str = "square"
    init: dict = field(default_factory=lambda: {"kind": "balanced", "radius": 0.2, "seed": 0})
    data: dict = field(default_factory=lambda: {"kind": "synthetic", "n_samples": 200, "seed": 0, "whiten": True})
    eta0: float = 0.001
    refinements: tuple = (2, 5, 10, 20)
    iterations: int = 5000
    output_dir: str | None = None
    step_cap: int = DEFAULT_STEP_CAP

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.refinements = tuple(self.refinements)
        if len(self.dims) < 2 or min(self.dims) <= 0:
            raise ConfigError(f"invalid dims {self.dims}")
        if self.loss not in ("square", "cross_entropy"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        parse_activation(self.activation)
        if not all(isinstance(r, int) and not isinstance(r, bool) and r >= 1 for r in self.refinements):
            raise ConfigError("refinement factors must be positive integers")
        if not self.refinements:
            raise ConfigError("need at least one refinement factor")
        if not (isinstance(self.iterations, int) and self.iterations >= 1):
            raise ConfigError("iterations must be a positive integer")
        if not self.eta0 > 0:
            raise ConfigError("eta0 must be positive")
        if self.iterations * max(self.refinements) > self.step_cap:
            raise ConfigError("iterations x max refinement exceeds the step cap")
        if self.init.get("kind") not in ("balanced", "xavier"):
            raise ConfigError(f"unknown init kind {self.init.get('kind')!r}")
        if self.data.get("kind") not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data kind {self.data.get('kind')!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        net = doc.pop("network", None)
        if net is not None:
            doc.setdefault("dims", net.get("dims"))
            doc.setdefault("activation", net.get("activation", "linear"))
            doc.setdefault("loss", net.get("loss", "square"))
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "dims" not in doc or doc["dims"] is None:
            raise ConfigError("config needs dims")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"], d["refinements"] = list(self.dims), list(self.refinements)
        return d


# ----------------------------------------------------------------- builders


def build_data(spec: dict, dims) -> LabeledSet:
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        classes = spec.get("classes")
        return synthetic_dataset(
            int(spec.get("n_samples", 200)), int(dims[0]), int(dims[-1]), int(spec.get("seed", 0)),
            whiten_inputs=bool(spec.get("whiten", True)), noise=float(spec.get("noise", 0.0)),
            classes=None if classes is None else int(classes),
        )
    if kind == "idx":
        data = load_idx(spec["images"], spec["labels"], spec.get("subset_size", 1000), int(spec.get("seed", 0)))
        if data.input_dim != dims[0]:
            raise ShapeError(f"data has {data.input_dim} features, network expects {dims[0]}")
        return data
    raise ConfigError(f"unknown data kind {kind!r}")


def build_init(spec: dict, dims) -> WeightSetting:
    kind = spec.get("kind", "balanced")
    seed = int(spec.get("seed", 0))
    if kind == "balanced":
        return random_balanced_init(BalancedInitConfig(tuple(dims), float(spec.get("radius", 0.2)), seed,
                                                       spec.get("norm")))
    if kind == "xavier":
        return xavier_uniform_init(dims, seed)
    raise ConfigError(f"unknown init kind {kind!r}")


def _whitened(data: LabeledSet, tol: float = 1e-10) -> bool:
    x = data.inputs
    return bool(np.allclose(x.T @ x / x.shape[0], np.eye(x.shape[1]), atol=tol))


def build_objective(dims, activation, loss: str, data: LabeledSet):
    """Fast closed-form objective for linear nets on whitened data, else backprop."""
    act = parse_activation(activation)
    if act.alpha == act.alpha_bar == 1.0 and loss == "square" and _whitened(data):
        return LinearObjective(dims, DataMoments.from_data(data.inputs, data.labels))
    return NetworkObjective(dims, data, act, loss)


# --------------------------------------------------------------- experiment


@dataclass
class RunRecord:
    """Rows on the shared grid ``t = k * eta0`` for one refinement factor."""

    r: int
    rows: np.ndarray
    aborted_at: int | None = None

    @property
    def drift_ratio(self) -> float:
        travelled = float(np.max(self.rows[:, 4])) if self.rows.size else 0.0
        drift = float(np.max(self.rows[:, 3])) if self.rows.size else 0.0
        return drift / travelled if travelled > 0 else float("nan")


def worker_count() -> int:
    env = os.environ.get("GRADFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("GRADFLOW_THREADS must be an integer")
    return os.cpu_count() or 1


def _losses(obj, states):
    return np.array([obj.value(s) for s in states])


def _run(obj, theta0: np.ndarray, eta: float, steps: int, stride: int):
    """States every ``stride`` steps; on divergence the prefix and its index."""
    try:
        tr = gd_run(theta0, eta, steps, obj, record_every=stride)
        return tr.states, None
    except DivergenceError as err:
        bad = err.index
        kept = (bad - 1) // stride
        tr = gd_run(theta0, eta, kept * stride, obj, record_every=stride) if kept > 0 else None
        states = tr.states if tr is not None else theta0[None, :]
        return states, kept + 1


def _compare(r, base_states, base_loss, obj, theta0, eta0, iterations):
    states, abort = _run(obj, theta0, eta0 / r, r * iterations, r)
    losses = _losses(obj, states)
    rows_n = min(len(states), len(base_states))
    bad = ~np.isfinite(losses[:rows_n]) | ~np.isfinite(base_loss[:rows_n])
    if np.any(bad):
        rows_n = int(np.argmax(bad))
        abort = rows_n if abort is None else min(abort, rows_n)
    k = np.arange(rows_n)
    rows = np.column_stack([
        k * eta0,
        base_loss[:rows_n],
        losses[:rows_n],
        np.linalg.norm(base_states[:rows_n] - states[:rows_n], axis=1),
        np.linalg.norm(base_states[:rows_n] - theta0, axis=1),
    ])
    return RunRecord(r=r, rows=rows, aborted_at=abort)


def write_csv(path, record: RunRecord) -> None:
    lines = [CSV_HEADER]
    lines += [",".join(f"{v:.17g}" for v in row) for row in record.rows]
    if record.aborted_at is not None:
        lines.append(f"# ABORTED: non-finite loss or divergence at comparison index {record.aborted_at}")
    Path(path).write_text("\n".join(lines) + "\n")


def stepsize_refinement_experiment(cfg: ExperimentConfig, theta0: WeightSetting | None = None,
                                   data: LabeledSet | None = None) -> dict:
    """Run the baseline and every refinement; returns ``{r: RunRecord}``.

    Writes ``drift_r{r}.csv`` per factor when ``cfg.output_dir`` is set.
    """
    data = build_data(cfg.data, cfg.dims) if data is None else data
    theta0 = build_init(cfg.init, cfg.dims) if theta0 is None else theta0
    obj = build_objective(cfg.dims, cfg.activation, cfg.loss, data)
    start = theta0.flat()
    base_states, base_abort = _run(obj, start, cfg.eta0, cfg.iterations, 1)
    base_loss = _losses(obj, base_states)
    with ThreadPoolExecutor(max_workers=min(worker_count(), len(cfg.refinements))) as pool:
        futures = {r: pool.submit(_compare, r, base_states, base_loss, obj, start, cfg.eta0, cfg.iterations)
                   for r in cfg.refinements}
        records = {r: f.result() for r, f in futures.items()}
    if base_abort is not None:
        for rec in records.values():
            rec.aborted_at = base_abort if rec.aborted_at is None else min(rec.aborted_at, base_abort)
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r, rec in records.items():
            write_csv(out / f"drift_r{r}.csv", rec)
    return records


def drift_summary(records: dict) -> dict:
    return {int(r): rec.drift_ratio for r, rec in sorted(records.items())}


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "build_data",
    "build_init",
    "build_objective",
    "drift_summary",
    "parse_activation",
    "stepsize_refinement_experiment",
    "write_csv",
]
