"""Discrete-time covariance blocks of the measurement record.

The window ``[-tau, 0]`` is sampled at ``N`` points ``t_k = -tau + k dt`` with
``dt = tau / (N - 1)``. Sample ``k`` is the detector output averaged over the
bin ``(t_k - dt, t_k]``; the noises are held constant within each bin with
variance ``q / dt``, and the state is propagated exactly across a bin, so all
moments below are exact for that piecewise-constant noise model. The prior
state is placed at the opening edge of the first bin.

Matrix layout: rows ``0..N-1`` of ``B`` and ``C`` hold ``y1`` samples, rows
``N..2N-1`` hold ``y2`` samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .model import HBAR
from .statespace import LinearModel


class AssemblyError(RuntimeError):
    """Raised when an assembled covariance is not positive definite."""


@dataclass(frozen=True)
class TimeGrid:
    window: float
    samples: int

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("a grid needs at least two samples")
        if not self.window > 0:
            raise ValueError("window must be positive")

    @property
    def step(self) -> float:
        return self.window / (self.samples - 1)

    @property
    def times(self) -> np.ndarray:
        t = -self.window + self.step * np.arange(self.samples)
        t[-1] = 0.0
        return t


@dataclass(frozen=True)
class QuadratureSchedule:
    """Homodyne angle per sample; ``degenerate`` flags samples set to 0 by fiat."""

    angles: np.ndarray
    degenerate: np.ndarray = None

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        if angles.ndim != 1 or not np.all(np.isfinite(angles)):
            raise ValueError("schedule angles must be a finite 1-D array")
        object.__setattr__(self, "angles", angles)
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(angles.size, dtype=bool))

    @classmethod
    def constant(cls, theta: float, samples: int) -> "QuadratureSchedule":
        return cls(np.full(samples, float(theta)))

    def __len__(self):
        return self.angles.size

    @property
    def any_degenerate(self) -> bool:
        return bool(np.any(self.degenerate))


@dataclass(frozen=True)
class Discretization:
    """One-bin transition matrices for a model and step."""

    Phi: np.ndarray      # s_k = Phi s_{k-1} + Gam w_k
    Gam: np.ndarray
    Phibar: np.ndarray   # bin-averaged state = Phibar s_{k-1} + Gambar w_k
    Gambar: np.ndarray
    obs: np.ndarray      # y_k = obs s_{k-1} + E w_k
    E: np.ndarray
    Qd: np.ndarray       # per-bin noise covariance


def discretize(model: LinearModel, dt: float) -> Discretization:
    n = model.dim
    big = np.zeros((3 * n, 3 * n))
    big[:n, :n] = model.drift
    big[:n, n:2 * n] = np.eye(n)
    big[n:2 * n, 2 * n:] = np.eye(n)
    ex = sla.expm(big * dt)
    Phi = ex[:n, :n]
    Z = ex[:n, n:2 * n]
    W = ex[:n, 2 * n:]
    Gam = Z @ model.inputs
    Phibar = Z / dt
    Gambar = W @ model.inputs / dt
    obs = model.outputs @ Phibar
    E = model.outputs @ Gambar + model.feedthrough
    Qd = np.diag(model.intensities) / dt
    return Discretization(Phi, Gam, Phibar, Gambar, obs, E, Qd)


@dataclass(frozen=True)
class Moments:
    """Raw second moments of a record started from covariance ``P0``."""

    B: np.ndarray            # (2N, 2N)
    cross_end: np.ndarray    # (2N, n): Cov(y, s_end)
    sens_start: np.ndarray   # (2N, n): d y / d s_start
    P_end: np.ndarray        # (n, n)


def _moments(model: LinearModel, dt: float, N: int, P0: np.ndarray) -> Moments:
    d = discretize(model, dt)
    n = model.dim
    P = np.array(P0, dtype=float)
    EQE = d.E @ d.Qd @ d.E.T
    GQE = d.Gam @ d.Qd @ d.E.T
    GQG = d.Gam @ d.Qd @ d.Gam.T
    M = np.empty((N, n, 2))
    diag = np.empty((N, 2, 2))
    for k in range(N):
        diag[k] = d.obs @ P @ d.obs.T + EQE
        M[k] = d.Phi @ P @ d.obs.T + GQE
        P = d.Phi @ P @ d.Phi.T + GQG
    P = 0.5 * (P + P.T)

    powers = np.empty((N, n, n))
    powers[0] = np.eye(n)
    for k in range(1, N):
        powers[k] = d.Phi @ powers[k - 1]
    Psi = d.obs @ powers  # (N, 2, n)

    B = np.empty((2 * N, 2 * N))
    idx = np.arange(N)
    B[idx, idx] = diag[:, 0, 0]
    B[N + idx, N + idx] = diag[:, 1, 1]
    B[idx, N + idx] = 0.5 * (diag[:, 0, 1] + diag[:, 1, 0])
    B[N + idx, idx] = B[idx, N + idx]
    for k in range(N - 1):
        blocks = Psi[: N - 1 - k] @ M[k]  # rows j = k+1 .. N-1
        j = idx[k + 1:]
        B[j, k] = B[k, j] = blocks[:, 0, 0]
        B[j, N + k] = B[N + k, j] = blocks[:, 0, 1]
        B[N + j, k] = B[k, N + j] = blocks[:, 1, 0]
        B[N + j, N + k] = B[N + k, N + j] = blocks[:, 1, 1]

    # Cov(s_end, y_k) = Phi^(N-1-k) M_k
    cross = np.einsum("kab,kbc->kac", powers[::-1], M)  # (N, n, 2)
    cross_end = np.concatenate([cross[:, :, 0], cross[:, :, 1]], axis=0)
    sens = np.concatenate([Psi[:, 0, :], Psi[:, 1, :]], axis=0)
    return Moments(B, cross_end, sens, P)


@dataclass(frozen=True, eq=False)
class CovarianceBlocks:
    """Joint covariance of ``(x(0), p(0))`` and the stacked record ``(y1, y2)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    grid: TimeGrid
    units: dict = field(default_factory=lambda: {"hbar": HBAR})

    @property
    def samples(self) -> int:
        return self.grid.samples

    @cached_property
    def factor(self):
        """Cholesky factor of ``B`` (lower); raises :class:`AssemblyError`."""
        try:
            return sla.cho_factor(self.B, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise AssemblyError("record covariance B is not positive definite") from exc

    def solve(self, rhs):
        return sla.cho_solve(self.factor, rhs, check_finite=False)

    @cached_property
    def gain_joint(self) -> np.ndarray:
        """``C^T B^{-1}`` as a ``(2, 2N)`` array."""
        return self.solve(self.C).T


def assemble(model: LinearModel, grid: TimeGrid, n0=None, check_pd=True) -> CovarianceBlocks:
    """Assemble ``A``, ``B`` and ``C`` for a record over ``grid``.

    ``n0`` overrides the model's thermal prior occupation.
    """
    prior = model.prior
    if n0 is not None:
        from .statespace import build_model
        params = model.params.with_(initial_occupation=float(n0))
        prior = build_model(params, model.flavor).prior
    mom = _moments(model, grid.step, grid.samples, prior)
    blocks = CovarianceBlocks(
        A=mom.P_end[:2, :2].copy(),
        B=mom.B,
        C=mom.cross_end[:, :2].copy(),
        grid=grid,
        units={"hbar": HBAR, "mass": model.params.mass, "flavor": model.flavor.value},
    )
    if check_pd:
        blocks.factor
    return blocks


def project_theta(blocks: CovarianceBlocks, schedule: QuadratureSchedule):
    """``B_theta = u B u^T`` and ``C_theta = u C`` with ``u = (sin theta, cos theta)``."""
    N = blocks.samples
    if len(schedule) != N:
        raise ValueError(f"schedule has {len(schedule)} angles, grid has {N} samples")
    s = np.sin(schedule.angles)
    c = np.cos(schedule.angles)
    B = blocks.B
    Bt = (np.outer(s, s) * B[:N, :N] + np.outer(s, c) * B[:N, N:]
          + np.outer(c, s) * B[N:, :N] + np.outer(c, c) * B[N:, N:])
    Ct = s[:, None] * blocks.C[:N] + c[:, None] * blocks.C[N:]
    return Bt, Ct


def embed(schedule: QuadratureSchedule) -> np.ndarray:
    """The ``N x 2N`` projection ``u_theta``."""
    return np.hstack([np.diag(np.sin(schedule.angles)), np.diag(np.cos(schedule.angles))])


_MAGIC = b"OSTB"


def dump_blocks(blocks: CovarianceBlocks, path) -> None:
    """Little-endian dump: magic, int64 N, then A, B, C as row-major float64."""
    N = blocks.samples
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", N))
        fh.write(struct.pack("<dd", blocks.grid.window, blocks.grid.step))
        for arr in (blocks.A, blocks.B, blocks.C):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_blocks(path) -> CovarianceBlocks:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a covariance block dump")
        (N,) = struct.unpack("<q", fh.read(8))
        window, _ = struct.unpack("<dd", fh.read(16))

        def take(shape):
            count = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()

        A = take((2, 2))
        B = take((2 * N, 2 * N))
        C = take((2 * N, 2))
    return CovarianceBlocks(A, B, C, TimeGrid(window, N))
