"""Conditional Gaussian states, steering figures of merit and tomography error."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .gram import (AssemblyError, CovarianceBlocks, QuadratureSchedule, TimeGrid,
                   _moments, embed, project_theta)
from .model import HBAR, PhysicalParams, zeta_F
from .statespace import Flavor, LinearModel, thermal_prior


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ConditionalState:
    """Oscillator state at ``t = 0`` conditioned on one homodyne record."""

    covariance: np.ndarray
    gain: np.ndarray                 # (2, N), acts on y_theta
    schedule: QuadratureSchedule
    mean: Optional[np.ndarray] = None

    @property
    def kx(self) -> np.ndarray:
        """Position filter as a length-2N row on the stacked ``(y1, y2)``."""
        return self.gain[0] @ embed(self.schedule)

    @property
    def kp(self) -> np.ndarray:
        return self.gain[1] @ embed(self.schedule)


@dataclass(frozen=True)
class SteeringReport:
    V_s: np.ndarray
    S: float
    steerable: bool
    wiseman_consistent: bool
    min_variances: Optional[dict] = None


@dataclass(frozen=True)
class VerifiableSteering:
    S_v: float
    closed_form: Optional[float] = None     # -ln(4 zeta_F / eta)
    comparator: Optional[float] = None      # -ln(2 zeta_F / eta) as printed in the literature

    @property
    def comparator_delta(self) -> Optional[float]:
        if self.comparator is None or self.closed_form is None:
            return None
        return self.comparator - self.closed_form


def _cholesky(matrix, what):
    try:
        return sla.cho_factor(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError(f"{what} is not positive definite") from exc


def condition_single(blocks: CovarianceBlocks, schedule: QuadratureSchedule,
                     record=None) -> ConditionalState:
    """Condition on the record of a single time-dependent quadrature."""
    Bt, Ct = project_theta(blocks, schedule)
    factor = _cholesky(Bt, "B_theta")
    gain = sla.cho_solve(factor, Ct, check_finite=False).T
    cov = blocks.A - gain @ Ct
    cov = 0.5 * (cov + cov.T)
    mean = None
    if record is not None:
        record = np.asarray(record, dtype=float)
        if record.shape != (blocks.samples,):
            raise ValueError("record length does not match the grid")
        mean = gain @ record
    return ConditionalState(cov, gain, schedule, mean)


def condition_joint(blocks: CovarianceBlocks) -> np.ndarray:
    """Schur complement ``V_s = A - C^T B^{-1} C``."""
    Vs = blocks.A - blocks.gain_joint @ blocks.C
    return 0.5 * (Vs + Vs.T)


def quadrature_vector(phi: float, dx_q: float, dp_q: float) -> np.ndarray:
    if dx_q <= 0 or dp_q <= 0:
        raise ValueError("zero-point references must be positive")
    return np.array([math.sin(phi) / dx_q, math.cos(phi) / dp_q])


def min_variance(blocks_or_vs, phi: float, dx_q: float, dp_q: float) -> float:
    """Smallest conditional variance of ``X_phi`` over all schedules."""
    v = quadrature_vector(phi, dx_q, dp_q)
    Vs = blocks_or_vs if isinstance(blocks_or_vs, np.ndarray) else condition_joint(blocks_or_vs)
    return float(v @ Vs @ v)


def optimal_schedule(blocks: CovarianceBlocks, phi: float, dx_q: float,
                     dp_q: float) -> QuadratureSchedule:
    """Homodyne angles whose single record attains :func:`min_variance`."""
    N = blocks.samples
    v = quadrature_vector(phi, dx_q, dp_q)
    k = v @ blocks.gain_joint
    k1, k2 = k[:N], k[N:]
    scale = np.max(np.abs(k)) if k.size else 0.0
    degenerate = np.hypot(k1, k2) <= 1e-300 + 1e-14 * scale if scale > 0 else np.ones(N, bool)
    theta = np.where(degenerate, 0.0, np.arctan2(k1, k2))
    theta = np.unwrap(theta)
    theta[degenerate] = 0.0
    return QuadratureSchedule(theta, degenerate)


def steerability(Vs) -> float:
    """``S = -ln(2 sqrt(det V_s) / hbar)``."""
    det = float(np.linalg.det(np.asarray(Vs, dtype=float)))
    if not det > 0:
        raise ValueError("covariance determinant must be positive")
    return -math.log(2.0 * math.sqrt(det) / HBAR)


def wiseman_criterion(Vs) -> bool:
    """True when ``V_s + i Sigma >= 0``, i.e. the state is NOT steerable.

    For a positive definite 2x2 covariance the condition reduces to the
    Heisenberg bound ``det V_s >= hbar**2 / 4``; it is evaluated through the
    same determinant as :func:`steerability` so the two never disagree.
    """
    det = float(np.linalg.det(np.asarray(Vs, dtype=float)))
    if not det > 0:
        return False
    return 2.0 * math.sqrt(det) / HBAR >= 1.0


def heisenberg_matrix_psd(Vs, tol=0.0) -> bool:
    """Direct eigenvalue test of ``V + i (hbar/2) J`` (J the symplectic form)."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    eig = np.linalg.eigvalsh(np.asarray(Vs, dtype=complex) + 0.5j * HBAR * J)
    return bool(eig.min() >= -tol)


def steering_report(Vs, phis=None, dx_q=None, dp_q=None) -> SteeringReport:
    Vs = np.asarray(Vs, dtype=float)
    S = steerability(Vs)
    not_steerable = wiseman_criterion(Vs)
    extra = None
    if phis is not None:
        extra = {float(phi): min_variance(Vs, phi, dx_q, dp_q) for phi in phis}
    return SteeringReport(Vs, S, S > 0, (S > 0) == (not not_steerable), extra)


def steerability_by_quadratures(Vs, dx_q=1.0 / math.sqrt(2.0), dp_q=1.0 / math.sqrt(2.0),
                                points=721) -> float:
    """Brute-force ``-min ln(dX1 dX2 / |sin(phi1 - phi2)|)`` over a grid of angles."""
    phi = np.linspace(0.0, math.pi, points, endpoint=False)
    v = np.stack([np.sin(phi) / dx_q, np.cos(phi) / dp_q], axis=1)
    sd = np.sqrt(np.einsum("ki,ij,kj->k", v, np.asarray(Vs, float), v))
    sin = np.abs(np.sin(phi[:, None] - phi[None, :]))
    with np.errstate(divide="ignore"):
        ratio = np.log(np.outer(sd, sd)) - np.log(sin)
    return float(-np.min(ratio))


def retrodict_Vv(model: LinearModel, grid: TimeGrid, prior_scale: float = 1e8,
                 check_convergence: bool = True) -> np.ndarray:
    """Error covariance of ``(x(0), p(0))`` estimated from data on ``(0, tau]``.

    The oscillator prior is the zero-point covariance inflated by
    ``prior_scale``; the estimate is formed in information form so that
    large priors do not cancel catastrophically. Intracavity modes (full
    cavity model) start from vacuum, independent of the oscillator.
    """
    Vv = _retrodict(model, grid, prior_scale)
    if check_convergence:
        wider = _retrodict(model, grid, prior_scale * 10.0)
        change = np.max(np.abs(wider - Vv)) / max(np.max(np.abs(Vv)), 1e-300)
        if change > 1e-3:
            warnings.warn(f"tomography error not converged in prior scale (change {change:.3g})",
                          ConvergenceWarning, stacklevel=2)
    return Vv


def _retrodict(model, grid, prior_scale):
    n = model.dim
    P0 = np.zeros((n, n))
    if model.flavor is Flavor.CAVITY:
        P0[2:, 2:] = model.prior[2:, 2:]
    mom = _moments(model, grid.step, grid.samples, P0)
    L = mom.sens_start[:, :2]
    prior = prior_scale * thermal_prior(model.params.with_(initial_occupation=0.0))
    factor = _cholesky(mom.B, "tomography record covariance")
    info = L.T @ sla.cho_solve(factor, L, check_finite=False)
    info = info + np.linalg.inv(prior)
    Vv = np.linalg.inv(0.5 * (info + info.T))
    return 0.5 * (Vv + Vv.T)


def verifiable_steering(Vs, Vv, params: Optional[PhysicalParams] = None) -> VerifiableSteering:
    """``S_v = -ln(2 sqrt(det(V_s + V_v)) / hbar)`` plus closed-form references."""
    S_v = steerability(np.asarray(Vs) + np.asarray(Vv))
    closed = comparator = None
    if params is not None and params.efficiency > 0:
        z = zeta_F(params)
        eta = params.efficiency
        if z > 0:
            closed = -math.log(4.0 * z / eta)
            comparator = -math.log(2.0 * z / eta)
    return VerifiableSteering(S_v, closed, comparator)
