"""Monte Carlo measurement records and the conditional-mean filter applied to them.

Every trajectory draws from its own Philox stream keyed by ``(seed, index)``,
and propagation uses fixed-order elementwise arithmetic, so a record never
depends on which batch or worker produced it. Ensemble statistics are summed
per fixed-size chunk and the chunks are combined in index order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .conditioning import ConditionalState, condition_single
from .gram import QuadratureSchedule, TimeGrid, assemble, discretize
from .statespace import LinearModel

CHUNK = 250


@dataclass(frozen=True)
class Record:
    """One simulated homodyne record.

    ``truth`` is the hidden ``(x(0), p(0))`` of the simulation; it is kept
    for residual checks and is not something a detector could observe.
    """

    grid: TimeGrid
    schedule: QuadratureSchedule
    outcomes: np.ndarray
    truth: np.ndarray
    seed: int
    index: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "theta", "y"])
            for row in zip(self.grid.times, self.schedule.angles, self.outcomes):
                out.writerow([f"{v:.9e}" for v in row])


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _apply(M, X):
    """``X @ M.T`` for a batch of row vectors, summed in a fixed order."""
    out = np.zeros((X.shape[0], M.shape[0]))
    for j in range(M.shape[1]):
        col = M[:, j]
        if np.any(col):
            out = out + X[:, j:j + 1] * col[None, :]
    return out


def _simulate_batch(model: LinearModel, grid: TimeGrid, schedule: QuadratureSchedule,
                    seed: int, indices) -> tuple[np.ndarray, np.ndarray]:
    """Outcomes ``(batch, N)`` and final ``(x, p)`` for the given trajectory indices."""
    N = grid.samples
    if len(schedule) != N:
        raise ValueError(f"schedule has {len(schedule)} angles, grid has {N} samples")
    d = discretize(model, grid.step)
    n = model.dim
    nw = d.Qd.shape[0]
    prior_root = np.linalg.cholesky(model.prior)
    noise_sd = np.sqrt(np.diag(d.Qd))
    draws = np.stack([_stream(seed, i).standard_normal(n + nw * N) for i in indices])
    s = _apply(prior_root, draws[:, :n])
    noises = draws[:, n:].reshape(len(indices), N, nw) * noise_sd
    sin, cos = np.sin(schedule.angles), np.cos(schedule.angles)
    y = np.empty((len(indices), N))
    for k in range(N):
        w = noises[:, k, :]
        out = _apply(d.obs, s) + _apply(d.E, w)
        y[:, k] = sin[k] * out[:, 0] + cos[k] * out[:, 1]
        s = _apply(d.Phi, s) + _apply(d.Gam, w)
    return y, s[:, :2]


def simulate(model: LinearModel, grid: TimeGrid, schedule: QuadratureSchedule,
             seed: int, index: int = 0) -> Record:
    """Draw one record of ``y_theta`` on ``grid``."""
    y, truth = _simulate_batch(model, grid, schedule, seed, [index])
    return Record(grid, schedule, y[0], truth[0], int(seed), int(index))


def filter_record(record: Record, state: ConditionalState) -> tuple[float, float]:
    """Conditional mean ``(x, p)`` at ``t = 0`` given the record."""
    if state.gain.shape[1] != record.outcomes.size:
        raise ValueError("record length does not match the filter")
    if not np.array_equal(record.schedule.angles, state.schedule.angles):
        raise ValueError("record and filter use different schedules")
    est = state.gain @ record.outcomes
    return float(est[0]), float(est[1])


@dataclass(frozen=True)
class EnsembleReport:
    empirical: np.ndarray          # E[r r^T] of residuals r = truth - estimate
    predicted: np.ndarray          # V_m for the schedule
    deviation: float               # max |empirical - predicted| / sqrt(det predicted)
    deviation_corr: float          # same, each entry scaled by sqrt(V_ii V_jj)
    residual_mean: np.ndarray
    max_outcome_corr: float        # max |corr(r_i, y_k)| over components and samples
    count: int
    seed: int


def _chunk_sums(model, grid, schedule, gain, seed, start, stop):
    y, truth = _simulate_batch(model, grid, schedule, seed, range(start, stop))
    est = np.stack([gain @ row for row in y])
    r = truth - est
    return {
        "r": r.sum(axis=0),
        "rr": np.einsum("ki,kj->ij", r, r),
        "ry": np.einsum("ki,kn->in", r, y),
        "yy": (y * y).sum(axis=0),
    }


def verify_ensemble(model: LinearModel, grid: TimeGrid, schedule: QuadratureSchedule,
                    count: int, seed: int, workers: int = 1,
                    state: Optional[ConditionalState] = None) -> EnsembleReport:
    """Compare Monte Carlo residual statistics with the predicted ``V_m``."""
    if count < 100:
        raise ValueError("verify_ensemble needs count >= 100")
    if state is None:
        state = condition_single(assemble(model, grid), schedule)
    bounds = [(a, min(a + CHUNK, count)) for a in range(0, count, CHUNK)]

    def run(bound):
        return _chunk_sums(model, grid, schedule, state.gain, seed, *bound)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    totals = {key: np.sum(np.stack([p[key] for p in parts]), axis=0) for key in parts[0]}

    emp = totals["rr"] / count
    Vm = state.covariance
    det = float(np.linalg.det(Vm))
    diff = np.abs(emp - Vm)
    deviation = float(np.max(diff) / math.sqrt(det)) if det > 0 else math.inf
    scale = np.sqrt(np.outer(np.diag(Vm), np.diag(Vm)))
    deviation_corr = float(np.max(diff / scale))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = totals["ry"] / np.sqrt(np.outer(totals["rr"].diagonal(), totals["yy"]))
    corr = np.nan_to_num(corr)
    return EnsembleReport(emp, Vm, deviation, deviation_corr, totals["r"] / count,
                          float(np.max(np.abs(corr))), int(count), int(seed))
