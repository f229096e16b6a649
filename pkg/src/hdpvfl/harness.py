"""Experiment runner: baselines, epsilon sweeps, (e, k) cross-validation,
metrics files and the theory-bound report.

Modes
-----
``single_party``  active features only, noiseless SGD
``centralized``   both parties' features in one table, noiseless SGD with
                  per-party weight clipping
``vfl_plain``     two-party protocol without noise
``vfl_dp``        two-party protocol with Gaussian-perturbed IRs

All four share one SGD core, schedule and initialisation, so accuracy
differences come from partitioning and privacy noise alone. Test scoring
combines both weight vectors without noise; it is an evaluation
convenience of the simulator, not part of the private training path.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import AlignedPair, entity_resolve, load_csv
from .errors import DivergenceError, InputError
from .glm import LossSpec, PenaltySpec, loss_value, make_loss, make_penalty
from .privacy import (NO_PRIVACY, Hyperparams, delta2_ir_a, delta2_ir_b, gaussian_sigma,
                      gradient_error_bound, stream_rng, utility_bound)
from .protocol import centralized_sgd, run_training

log = logging.getLogger(__name__)

MODES = ("single_party", "centralized", "vfl_plain", "vfl_dp")

#: Figure defaults for the privacy-accuracy tradeoff runs.
BENCHMARK_DEFAULTS = Hyperparams(epsilon=1.0, delta=0.01, learning_rate=0.1, batch_size=3200,
                             epochs=10, clip_norm=1.0, seed=0)


@dataclass
class ExperimentConfig:
    modes: tuple = ("vfl_dp",)
    h: Hyperparams = BENCHMARK_DEFAULTS
    loss: str = "logistic"
    penalty: str = "l2"
    lam: float = 0.001
    mu: float = 0.0
    epsilon_grid: tuple = (1.0,)
    folds: int = 5
    repeats: int = 10
    test_fraction: float = 0.2
    active_csv: Optional[str] = None
    passive_csv: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.epsilon_grid = tuple(float(e) for e in self.epsilon_grid)
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise InputError(f"modes must be drawn from {MODES}, got {self.modes}")
        if "vfl_dp" in self.modes and not self.epsilon_grid:
            raise InputError("vfl_dp needs a nonempty epsilon grid")
        if any(math.isnan(e) or e <= 0 for e in self.epsilon_grid):
            raise InputError("every epsilon must be > 0")
        if self.repeats < 1 or self.folds < 2:
            raise InputError("repeats must be >= 1 and folds >= 2")
        if not 0 < self.test_fraction < 1:
            raise InputError("test_fraction must lie in (0, 1)")

    def loss_spec(self) -> LossSpec:
        return make_loss(self.loss)

    def penalty_spec(self) -> PenaltySpec:
        return make_penalty(self.penalty, self.lam, self.mu)


@dataclass(frozen=True)
class MetricsRecord:
    mode: str
    epsilon: float
    repeat: int
    seed: int
    test_accuracy: Optional[float]
    test_loss: Optional[float]
    train_loss: tuple
    wall_time: float
    hyperparams: dict
    status: str = "ok"
    error: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}")
        if self.status not in ("ok", "diverged"):
            raise InputError(f"unknown status {self.status!r}")
        if self.test_accuracy is not None and not 0.0 <= self.test_accuracy <= 1.0:
            raise InputError(f"accuracy {self.test_accuracy!r} outside [0, 1]")
        if self.status == "diverged" and self.test_accuracy is not None:
            raise InputError("a diverged cell has no accuracy")
        object.__setattr__(self, "train_loss", tuple(float(v) for v in self.train_loss))

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"mode": self.mode, "epsilon": "inf" if self.epsilon == NO_PRIVACY else self.epsilon,
             "repeat": self.repeat, "seed": self.seed, "test_accuracy": self.test_accuracy,
             "test_loss": self.test_loss, "train_loss": list(self.train_loss),
             "hyperparams": self.hyperparams, "status": self.status, "error": self.error}
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


def holdout_split(y: np.ndarray, test_fraction: float, seed: int,
                  stratify: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test index split, stratified by label when asked."""
    rng = stream_rng(seed, "split")
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if stratify else [np.arange(len(y))]
    test = []
    for g in groups:
        g = rng.permutation(g)
        test.extend(g[:int(round(test_fraction * len(g)))].tolist())
    test = np.sort(np.array(test, dtype=int))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def stratified_folds(y: np.ndarray, folds: int, seed: int, stratify: bool = True) -> list[np.ndarray]:
    rng = stream_rng(seed, "split")
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if stratify else [np.arange(len(y))]
    buckets: list = [[] for _ in range(folds)]
    offset = 0
    for g in groups:
        for j, i in enumerate(rng.permutation(g)):
            buckets[(offset + j) % folds].append(int(i))
        offset += len(g)
    return [np.sort(np.array(b, dtype=int)) for b in buckets]


def _accuracy(scores: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.where(scores >= 0, 1.0, -1.0) == y))


def _train_and_score(mode: str, pair: AlignedPair, train: np.ndarray, test: np.ndarray,
                     h: Hyperparams, spec: LossSpec, pen: PenaltySpec):
    """Train one cell; return (test scores, per-epoch train losses)."""
    Xa, Xb, y = pair.active.X, pair.passive.X, pair.active.y
    if mode == "single_party":
        res = centralized_sgd(Xa[train], y[train], h, spec, pen)
        return Xa[test] @ res.w, [r["train_loss"] for r in res.history]
    if mode == "centralized":
        X = np.hstack([Xa, Xb])
        res = centralized_sgd(X[train], y[train], h, spec, pen, blocks=[Xa.shape[1], Xb.shape[1]])
        return X[test] @ res.w, [r["train_loss"] for r in res.history]
    if mode == "vfl_plain":
        h = replace(h, epsilon=NO_PRIVACY)
    model = run_training(Xa[train], y[train], Xb[train], h, spec, pen)
    return model.decision_function(Xa[test], Xb[test]), [r["train_loss"] for r in model.history]


def run_cell(mode: str, epsilon: float, pair: AlignedPair, train, test, h: Hyperparams,
             spec: LossSpec, pen: PenaltySpec, repeat: int = 0) -> MetricsRecord:
    h = replace(h, epsilon=epsilon if mode == "vfl_dp" else NO_PRIVACY)
    start = time.perf_counter()
    snapshot = {**h.resolve(len(train)).to_dict(), "loss": spec.name, "penalty": pen.to_dict()}
    y_test = pair.active.y[test]
    try:
        scores, train_loss = _train_and_score(mode, pair, train, test, h, spec, pen)
    except DivergenceError as exc:
        log.warning("%s eps=%s repeat %d diverged: %s", mode, epsilon, repeat, exc)
        return MetricsRecord(mode, h.epsilon, repeat, h.seed, None, None, (),
                             time.perf_counter() - start, snapshot, "diverged", str(exc))
    accuracy = _accuracy(scores, y_test) if spec.is_classifier else None
    test_loss = None if spec.kind == "edf" else float(np.mean(loss_value(spec, scores, y_test)))
    return MetricsRecord(mode, h.epsilon, repeat, h.seed, accuracy, test_loss, train_loss,
                         time.perf_counter() - start, snapshot)


def load_pair(cfg: ExperimentConfig) -> AlignedPair:
    if not (cfg.active_csv and cfg.passive_csv):
        raise InputError("both --active-csv and --passive-csv are required")
    return entity_resolve(load_csv(cfg.active_csv, has_label=True),
                          load_csv(cfg.passive_csv, has_label=False))


def run_experiment(cfg: ExperimentConfig, data: Optional[AlignedPair] = None) -> list[MetricsRecord]:
    """Train and evaluate every (mode, epsilon, repeat) cell.

    Repeat ``i`` uses seed ``h.seed + i`` for both its holdout split and its
    training schedule/noise, so every mode sees identical splits.
    """
    pair = data if data is not None else load_pair(cfg)
    spec, pen = cfg.loss_spec(), cfg.penalty_spec()
    y = pair.active.y
    splits = [holdout_split(y, cfg.test_fraction, cfg.h.seed + i, stratify=spec.is_classifier)
              for i in range(cfg.repeats)]
    records = []
    for mode in cfg.modes:
        grid = cfg.epsilon_grid if mode == "vfl_dp" else (NO_PRIVACY,)
        for eps in grid:
            for i, (train, test) in enumerate(splits):
                h = replace(cfg.h, seed=cfg.h.seed + i)
                records.append(run_cell(mode, eps, pair, train, test, h, spec, pen, repeat=i))
    if cfg.out:
        emit_metrics(records, cfg.out)
    return records


def summarize(records: Sequence[MetricsRecord]) -> list[dict]:
    """Mean and std of test accuracy per (mode, epsilon), in first-seen order."""
    cells: dict = {}
    for r in records:
        cells.setdefault((r.mode, r.epsilon), []).append(r)
    rows = []
    for (mode, eps), rs in cells.items():
        acc = [r.test_accuracy for r in rs if r.test_accuracy is not None]
        rows.append({"mode": mode, "epsilon": eps, "runs": len(rs),
                     "diverged": sum(r.status == "diverged" for r in rs),
                     "mean_accuracy": float(np.mean(acc)) if acc else None,
                     "std_accuracy": float(np.std(acc)) if acc else None})
    return rows


def mean_accuracy(records: Sequence[MetricsRecord], mode: str, epsilon: float = NO_PRIVACY) -> float:
    acc = [r.test_accuracy for r in records
           if r.mode == mode and r.epsilon == epsilon and r.test_accuracy is not None]
    if not acc:
        raise InputError(f"no accuracy recorded for {mode} at epsilon={epsilon}")
    return float(np.mean(acc))


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return "inf" if v == NO_PRIVACY else f"{v:.6f}"
    return str(v)


def emit_metrics(records: Sequence[MetricsRecord], path, include_timing: bool = False) -> Path:
    """Write one JSON record per line to ``path`` and a tab-separated summary
    to ``<path>.summary.tsv``.

    Wall times are left out unless ``include_timing`` is set, so identical
    runs produce byte-identical files.
    """
    if not records:
        raise InputError("no records to emit")
    path = Path(path)
    lines = [json.dumps(r.to_dict(include_timing), sort_keys=True, separators=(",", ":"),
                        allow_nan=False) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    header = ["mode", "epsilon", "runs", "diverged", "mean_accuracy", "std_accuracy"]
    rows = ["\t".join(header)]
    rows += ["\t".join(_fmt(row[c]) for c in header) for row in summarize(records)]
    summary = path.with_name(path.name + ".summary.tsv")
    summary.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return summary


def cross_validate(cfg: ExperimentConfig, data: AlignedPair, e_grid, k_grid,
                   epsilon: Optional[float] = None) -> list[dict]:
    """Mean k-fold accuracy of the two-party protocol for every (e, k)."""
    spec, pen = cfg.loss_spec(), cfg.penalty_spec()
    eps = cfg.epsilon_grid[0] if epsilon is None else epsilon
    seed = cfg.h.seed
    y = data.active.y
    train, _ = holdout_split(y, cfg.test_fraction, seed, stratify=spec.is_classifier)
    folds = stratified_folds(y[train], cfg.folds, seed, stratify=spec.is_classifier)
    rows = []
    for e in e_grid:
        for k in k_grid:
            h = replace(cfg.h, epochs=int(e), clip_norm=float(k))
            scores = []
            for f, val_local in enumerate(folds):
                fit = np.setdiff1d(train, train[val_local])
                rec = run_cell("vfl_dp", eps, data, fit, train[val_local],
                               replace(h, seed=seed + f), spec, pen, repeat=f)
                scores.append(rec.test_accuracy if rec.test_accuracy is not None else 0.0)
            fold_n = len(train) - len(folds[0])
            rows.append({"epochs": int(e), "clip_norm": float(k), "cv_accuracy": float(np.mean(scores)),
                         "delta2_ir_a": delta2_ir_a(h.resolve(fold_n), spec)})
    return rows


def tune(cfg: ExperimentConfig, e_grid, k_grid, data: Optional[AlignedPair] = None) -> Hyperparams:
    """Pick ``(epochs, clip_norm)`` by cross-validated accuracy at a fixed epsilon.

    Ties go to the smaller active-party sensitivity, then fewer epochs.
    """
    if not len(e_grid) or not len(k_grid):
        raise InputError("tuning grids must be nonempty")
    pair = data if data is not None else load_pair(cfg)
    rows = cross_validate(cfg, pair, e_grid, k_grid)
    best = min(rows, key=lambda r: (-r["cv_accuracy"], r["delta2_ir_a"], r["epochs"]))
    for r in rows:
        log.info("e=%d k=%g cv_accuracy=%.4f", r["epochs"], r["clip_norm"], r["cv_accuracy"])
    return replace(cfg.h, epochs=best["epochs"], clip_norm=best["clip_norm"])


@dataclass(frozen=True)
class BoundReport:
    delta2_ir_b: float
    delta2_ir_a: float
    sigma_ir_b: float
    sigma_ir_a: float
    gradient_error: float
    utility: float
    hyperparams: dict = field(default_factory=dict)

    def format(self) -> str:
        rows = [("sensitivity of passive IR sequence", self.delta2_ir_b),
                ("sensitivity of active IR sequence", self.delta2_ir_a),
                ("noise std on passive IR (sigma_ir_b)", self.sigma_ir_b),
                ("noise std on active IR (sigma_ir_a)", self.sigma_ir_a),
                ("per-step gradient error bound", self.gradient_error),
                ("excess-risk bound", self.utility)]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:.6g}" for name, value in rows)


def bound_report(h: Hyperparams, spec: LossSpec) -> BoundReport:
    """Theory-side quantities for a configured run (``h`` already resolved)."""
    d_b, d_a = delta2_ir_b(h, spec.L), delta2_ir_a(h, spec)
    if h.private:
        s_b = gaussian_sigma(d_b, h.epsilon, h.delta)
        s_a = gaussian_sigma(d_a, h.epsilon, h.delta)
    else:
        s_b = s_a = 0.0
    return BoundReport(d_b, d_a, s_b, s_a, gradient_error_bound(h, spec),
                       utility_bound(h, spec), h.to_dict())
