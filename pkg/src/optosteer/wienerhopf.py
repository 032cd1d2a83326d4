"""Wiener-Hopf solution of the infinite-window filtering problem.

With data on ``(-inf, 0]`` the optimal filters solve a causal integral
equation. In the frequency domain (``f(w) = int exp(i w t) f(t) dt``) a function
supported on ``t <= 0`` has its poles in the upper half plane; such terms form
the *minus* part of a partial-fraction split, and the rest (lower-half-plane
poles plus any constant) the *plus* part.

The two-quadrature problem is reduced to scalar factorizations: the
amplitude spectrum ``B11 = phi_+ phi_-`` and the Schur-complement spectrum
``B22 - B21 B12 / B11 = psi_+ psi_-``, where ``(.)_+`` carries the
lower-half-plane zeros and poles and ``(.)_- = conj((.)_+)`` the upper ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HBAR, PhysicalParams, check, zeta_F
from .rational import PartialFractions, Rational
from .statespace import build_model, spectra as model_spectra

REAL_AXIS_TOL = 1e-10


@dataclass(frozen=True)
class Factorization:
    plus: Rational
    minus: Rational
    upper_roots: np.ndarray   # numerator roots with Im > 0
    upper_poles: np.ndarray   # denominator roots with Im > 0

    def residual(self, spectrum: Rational, w) -> float:
        """Largest relative mismatch of ``plus * minus`` on the real axis."""
        target = spectrum(w)
        return float(np.max(np.abs(self.plus(w) * self.minus(w) - target) / np.abs(target)))


@dataclass(frozen=True)
class CausalSplit:
    plus: PartialFractions
    minus: PartialFractions


def _on_axis(roots):
    return np.abs(roots.imag) <= REAL_AXIS_TOL * np.maximum(1.0, np.abs(roots))


def factorize(spectrum: Rational) -> Factorization:
    """Split a real, even, positive rational spectrum into causal factors."""
    z, p = spectrum.zeros, spectrum.poles
    if np.any(_on_axis(z)) or np.any(_on_axis(p)):
        raise ValueError("spectrum has zeros or poles on the real axis; "
                         "add mechanical damping (kappa_m > 0) to regularize")
    if np.sum(z.imag < 0) * 2 != z.size or np.sum(p.imag < 0) * 2 != p.size:
        raise ValueError("spectrum roots are not symmetric about the real axis")
    gain = spectrum.gain
    if abs(gain.imag) > 1e-9 * abs(gain) or gain.real <= 0:
        raise ValueError("spectrum must be real and positive on the real axis")
    plus = Rational(math.sqrt(gain.real), z[z.imag < 0], p[p.imag < 0], tag="plus")
    return Factorization(plus, plus.conj(), z[z.imag > 0], p[p.imag > 0])


def split(f) -> CausalSplit:
    """Partial-fraction split by pole half plane; the constant goes to the plus part."""
    pf = f.partial_fractions() if isinstance(f, Rational) else f
    if np.any(_on_axis(pf.poles)):
        raise ValueError("cannot split a function with poles on the real axis")
    upper = pf.poles.imag > 0
    plus = pf.select(~upper)
    plus.const = pf.const
    return CausalSplit(plus, pf.select(upper))


def minus_part(f) -> PartialFractions:
    return split(f).minus


def schur_spectrum(sp: dict) -> Rational:
    """``B22 - B21 B12 / B11``."""
    return sp["B22"] - sp["B21"] * sp["B12"] / sp["B11"]


def _as_pf(f):
    return f.partial_fractions() if isinstance(f, Rational) else f


def solve_filters(sp: dict) -> dict:
    """Causal filter spectra ``K_kj`` mapping output ``k`` to state component ``j``.

    Returns a dict with keys ``K11, K21, K12, K22`` (partial-fraction form)
    plus the factorizations under ``phi`` and ``psi``.
    """
    phi = factorize(sp["B11"])
    psi = factorize(schur_spectrum(sp))
    inv_psi_p = psi.plus.inverse()
    inv_psi_m = psi.minus.inverse()
    B21_over_phim = sp["B21"] / phi.minus
    U = _as_pf(sp["B12"] / phi.plus)
    lower = U.poles.imag < 0
    q, rho = U.poles[lower], U.residues[lower]

    def k2_piece(source):
        return minus_part(source * inv_psi_p) * inv_psi_m

    out = {"phi": phi, "psi": psi}
    for j in (1, 2):
        C1, C2 = sp[f"C1{j}"], sp[f"C2{j}"]
        X = minus_part(C1 / phi.plus)
        K0 = k2_piece(_as_pf(C2) - X * B21_over_phim)
        # [B12 K21 / phi_+]_+ only sees K21 at the lower-half-plane poles of
        # B12 / phi_+; solve for those values self-consistently.
        pieces = [k2_piece(PartialFractions(0j, [ql], [rl]) * B21_over_phim)
                  for ql, rl in zip(q, rho)]
        if pieces:
            M = np.array([[piece(qm) for piece in pieces] for qm in q])
            rhs = np.array([K0(qm) for qm in q])
            system = np.eye(len(q)) + M
            if np.linalg.cond(system) > 1e12:
                raise np.linalg.LinAlgError("singular pole-evaluation system")
            u = np.linalg.solve(system, rhs)
            K2 = K0
            for ul, piece in zip(u, pieces):
                K2 = K2 - piece * ul
        else:
            K2 = K0
        K1 = (X - minus_part(K2 * (sp["B12"] / phi.plus))) * phi.minus.inverse()
        out[f"K1{j}"] = K1.prune(0.0)
        out[f"K2{j}"] = K2.prune(0.0)
    return out


def assemble_Vs_analytic(sp: dict, filters: dict, A) -> np.ndarray:
    """``V_s = A - sum_k int C_ki(t) K_kj(t) dt`` evaluated by residues.

    Spectra carry the single-sided normalization, hence the factor 1/2.
    """
    Vs = np.array(A, dtype=float).copy()
    for i in (1, 2):
        for j in (1, 2):
            total = 0j
            for k in (1, 2):
                Ck = sp[f"C{k}{i}"]
                if Ck.gain == 0:
                    continue
                integrand = filters[f"K{k}{j}"] * Ck.conj()
                total += integrand.prune(0.0).real_line_integral()
            Vs[i - 1, j - 1] -= 0.5 * total.real
    return 0.5 * (Vs + Vs.T)


def stationary_A(params: PhysicalParams) -> np.ndarray:
    """Stationary ``(x, p)`` covariance of the damped adiabatic oscillator."""
    m, wm, km = params.mass, params.mech_freq, params.mech_damping
    if wm <= 0 or km <= 0:
        raise ValueError("stationary covariance needs omega_m > 0 and kappa_m > 0")
    force = 0.5 * (params.coupling ** 2 + params.thermal_force)
    return np.diag([force / (2.0 * m ** 2 * wm ** 2 * km), force / (2.0 * km)])


def analytic_vs_damped(params: PhysicalParams) -> np.ndarray:
    sp = model_spectra(build_model(params))
    if params.coupling == 0.0:
        return stationary_A(params)
    return assemble_Vs_analytic(sp, solve_filters(sp), stationary_A(params))


def analytic_vs(params: PhysicalParams, eps=(0.08, 0.04, 0.02, 0.01, 0.005)) -> np.ndarray:
    """Infinite-window ``V_s`` from the Wiener-Hopf solution.

    A free mass has no stationary state, so it is approached through a
    weakly bound, weakly damped oscillator (``omega_m = kappa_m = eps *
    Omega_q``) and Richardson-extrapolated to ``eps -> 0``.
    """
    check(params)
    if not params.free_mass:
        return analytic_vs_damped(params)
    scale = math.sqrt(params.coupling ** 2 / (HBAR * params.mass))
    if scale == 0.0:
        raise ValueError("free mass without coupling has no conditional state")
    vals = [analytic_vs_damped(params.with_(mech_freq=e * scale, mech_damping=e * scale))
            for e in eps]
    return richardson(np.array(eps), np.array(vals))


def richardson(h, values):
    """Polynomial extrapolation of ``values(h)`` to ``h = 0`` (Neville)."""
    table = [v for v in values]
    n = len(h)
    for level in range(1, n):
        table = [(h[i] * table[i + 1] - h[i + level] * table[i]) / (h[i] - h[i + level])
                 for i in range(n - level)]
    return table[0]


def vs_closed_form(params: PhysicalParams) -> np.ndarray:
    """Free-mass, large-bandwidth ``V_s``."""
    return _closed_form(params, +1.0)


def vv_closed_form(params: PhysicalParams) -> np.ndarray:
    """Tomography error: ``V_s`` with the off-diagonal sign reversed."""
    return _closed_form(params, -1.0)


def _closed_form(params, sign):
    eta = params.efficiency
    if eta <= 0:
        raise ValueError("closed forms need a nonzero efficiency")
    z = zeta_F(params)
    m, a2 = params.mass, params.coupling ** 2
    if z == 0.0:
        return np.zeros((2, 2))
    pref = HBAR * z / (math.sqrt(2.0) * eta)
    return pref * np.array([
        [2 ** 0.25 * math.sqrt(a2 / (z * HBAR * m)), sign],
        [sign, 2 ** 0.75 * math.sqrt(z * HBAR * m / a2)],
    ])


def closed_form_det(params: PhysicalParams) -> float:
    return HBAR ** 2 * zeta_F(params) ** 2 / (2.0 * params.efficiency ** 2)


def closed_form_S(params: PhysicalParams) -> float:
    return -math.log(math.sqrt(2.0) * zeta_F(params) / params.efficiency)


def closed_form_Sv(params: PhysicalParams) -> float:
    """Matrix-level ``-ln(2 sqrt(det(V_s + V_v)) / hbar) = -ln(4 zeta_F / eta)``."""
    return -math.log(4.0 * zeta_F(params) / params.efficiency)


def slowest_rate(params: PhysicalParams) -> float:
    """Smallest ``Im w_j`` over the upper-half-plane zeros of the Schur spectrum.

    These zeros are the poles of the optimal filters, so this is the rate at
    which the finite-window covariance approaches its infinite-window value.
    """
    p = params
    if p.coupling == 0.0:
        return math.nan
    if p.free_mass:
        z = zeta_F(p)
        omega_q = math.sqrt(p.coupling ** 2 / (HBAR * p.mass))
        if z == 0.0:
            return math.nan
        return 2 ** -0.25 * math.sqrt(z) * omega_q
    fac = factorize(schur_spectrum(model_spectra(build_model(p))))
    return float(np.min(fac.upper_roots.imag))
