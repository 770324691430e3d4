"""Seeded simulation trials, per-trial CSV output and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import chain_precision, machine_samples
from .debias import fit_and_threshold
from .errors import DicovError, InvalidParameter
from .glasso import DEFAULT_MAX_ITER, DEFAULT_TOL
from .hub import HubEstimate, combine, full_estimators, naive_estimator
from .metrics import MetricsRecord, frobenius_sq_error, linf_error, support_metrics

ESTIMATORS = ("distributed", "naive", "full", "full_debiased")
CSV_COLUMNS = ("trial", "M", "beta", "estimator", "mse", "linf", "fpr", "fnr", "wall_ms")
METRICS = ("mse", "linf", "fpr", "fnr")


@dataclass
class ExperimentConfig:
    """Everything a run depends on.

    ``lam`` and ``tau`` default to ``beta * sqrt(log p / n)`` and
    ``beta * sqrt(log p / (M n))``; ``B`` defaults to ``10 p``.
    """

    p: int = 100
    n: int = 100
    M: int = 10
    trials: int = 20
    a: float = 0.4
    beta: float = 1.0
    B: int | None = None
    lam: float | None = None
    tau: float | None = None
    base_seed: int = 0
    estimators: tuple[str, ...] = ESTIMATORS
    mode: str = "simulate"
    address: str = "127.0.0.1"
    port: int = 5757
    timeout: float = 60.0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    timing: bool = False
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.estimators, str):
            self.estimators = tuple(e.strip() for e in self.estimators.split(",") if e.strip())
        self.estimators = tuple(self.estimators)
        self.validate()

    def validate(self):
        if self.p < 2:
            raise InvalidParameter("p must be >= 2")
        if self.n < 1:
            raise InvalidParameter("n must be >= 1")
        if self.M < 1:
            raise InvalidParameter("M must be >= 1")
        if self.trials < 1:
            raise InvalidParameter("trials must be >= 1")
        if not self.beta > 0:
            raise InvalidParameter("beta must be > 0")
        if self.B is not None and self.B < self.p:
            raise InvalidParameter("B must be >= p")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise InvalidParameter(f"unknown estimators: {sorted(unknown)}")
        if self.mode not in ("simulate", "hub", "worker"):
            raise InvalidParameter(f"unknown mode {self.mode!r}")

    @property
    def bandwidth(self) -> int:
        return 10 * self.p if self.B is None else int(self.B)

    @property
    def lam_machine(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return self.beta * math.sqrt(math.log(self.p) / self.n)

    @property
    def tau_hub(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        return self.beta * math.sqrt(math.log(self.p) / (self.M * self.n))

    @property
    def lam_full(self) -> float:
        return self.beta * math.sqrt(math.log(self.p) / (self.M * self.n))

    @property
    def tau_full(self) -> float:
        return self.beta * math.sqrt(math.log(self.p) / (self.M * self.n))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrialResult:
    trial: int
    model: object
    hub: HubEstimate | None = None
    updates: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)
    records: list = field(default_factory=list)


def _clock():
    return time.perf_counter()


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """One trial: every requested estimator sees the same samples."""
    model = chain_precision(config.p, config.a)
    seed = config.base_seed + trial
    want = set(config.estimators)
    result = TrialResult(trial=trial, model=model)
    blocks = [machine_samples(model, config.n, seed, m) for m in range(config.M)]
    elapsed = {}

    if want & {"distributed", "naive"}:
        t0 = _clock()
        fits = []
        for m, block in enumerate(blocks):
            fit, update = fit_and_threshold(
                block, config.lam_machine, config.bandwidth, m, tol=config.tol, max_iter=config.max_iter
            )
            fits.append(fit)
            result.updates.append(update)
        machine_time = _clock() - t0
        if "distributed" in want:
            t1 = _clock()
            result.hub = combine(result.updates, config.tau_hub)
            result.estimates["distributed"] = result.hub.theta_final
            elapsed["distributed"] = machine_time + _clock() - t1
        if "naive" in want:
            t1 = _clock()
            result.estimates["naive"] = naive_estimator([f.theta_hat for f in fits])
            elapsed["naive"] = machine_time + _clock() - t1

    if want & {"full", "full_debiased"}:
        t0 = _clock()
        full, full_d = full_estimators(
            np.vstack(blocks), config.lam_full, config.tau_full, tol=config.tol, max_iter=config.max_iter
        )
        spent = _clock() - t0
        if "full" in want:
            result.estimates["full"] = full
            elapsed["full"] = spent
        if "full_debiased" in want:
            result.estimates["full_debiased"] = full_d
            elapsed["full_debiased"] = spent

    for name in ESTIMATORS:
        if name not in want:
            continue
        est = result.estimates[name]
        dense = est if isinstance(est, np.ndarray) else est.to_dense()
        fpr, fnr = support_metrics(dense, model)
        result.records.append(
            MetricsRecord(
                estimator=name,
                trial=trial,
                M=config.M,
                beta=config.beta,
                mse=frobenius_sq_error(dense, model.theta),
                linf=linf_error(dense, model.theta),
                fpr=fpr,
                fnr=fnr,
                wall_ms=int(round(elapsed[name] * 1000)) if config.timing else 0,
            )
        )
    return result


def run_experiment(config: ExperimentConfig, csv_path=None) -> list[MetricsRecord]:
    """Run ``config.trials`` trials and optionally write the per-trial CSV."""
    records = []
    for t in range(config.trials):
        try:
            records.extend(run_trial(config, t).records)
        except DicovError as exc:
            raise type(exc)(f"trial {t} (seed {config.base_seed + t}): {exc}") from exc
    if csv_path is not None:
        write_records(records, csv_path)
    return records


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        row = r.as_dict()
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_records(records, path) -> None:
    Path(path).write_text(records_csv(records))


def summarize(records, keys=("M", "beta", "estimator")) -> list[dict]:
    """Median and quartiles of every metric per group, groups in first-seen order."""
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    rows = []
    for key, group in groups.items():
        row = dict(zip(keys, key))
        row["trials"] = len(group)
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in group])
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            row[f"{metric}_median"] = float(med)
            row[f"{metric}_q25"] = float(q25)
            row[f"{metric}_q75"] = float(q75)
        rows.append(row)
    return rows


SUMMARY_COLUMNS = ("M", "beta", "estimator", "trials") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("median", "q25", "q75")
)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def sweep_machines(config: ExperimentConfig, M_values, csv_path=None, records_path=None) -> list[dict]:
    """Repeat the experiment for each machine count; one summary row per (M, estimator)."""
    records = []
    for M in M_values:
        records.extend(run_experiment(config.replace(M=int(M))))
    rows = summarize(records)
    if records_path is not None:
        write_records(records, records_path)
    if csv_path is not None:
        Path(csv_path).write_text(summary_csv(rows))
    return rows


def sweep_beta(config: ExperimentConfig, beta_values, csv_path=None, records_path=None) -> list[dict]:
    """Vary the tuning multiplier for the distributed estimator at fixed ``M``."""
    records = []
    for beta in beta_values:
        cfg = config.replace(beta=float(beta), estimators=("distributed",))
        records.extend(run_experiment(cfg))
    rows = summarize(records)
    if records_path is not None:
        write_records(records, records_path)
    if csv_path is not None:
        Path(csv_path).write_text(summary_csv(rows))
    return rows
