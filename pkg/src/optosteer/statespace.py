"""Linear dynamical models of the monitored oscillator and their spectra.

Two flavours are supported. ``ADIABATIC`` eliminates the cavity and keeps the
oscillator state ``(x, p)``; ``CAVITY`` carries the intracavity amplitude and
phase quadratures as well. Both are driven by the same five white noises::

    w = (a1, a2, n1, n2, F_th)

with symmetrized intensities ``<w_j(t) w_k(t')>_sym = q_j delta_jk delta(t - t')``,
``q = (1/2, 1/2, 1/2, 1/2, S_F_th / 2)``. The measured outputs are
``y = H s + D w`` where ``y1`` is the amplitude and ``y2`` the phase quadrature.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import HBAR, PhysicalParams, check, reference_frequency
from .rational import Rational

NOISE_LABELS = ("a1", "a2", "n1", "n2", "F_th")


class Flavor(str, enum.Enum):
    ADIABATIC = "adiabatic"
    CAVITY = "cavity"


@dataclass(frozen=True)
class LinearModel:
    flavor: Flavor
    params: PhysicalParams
    drift: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    feedthrough: np.ndarray
    intensities: np.ndarray
    prior: np.ndarray
    state_labels: tuple

    @property
    def dim(self) -> int:
        return self.drift.shape[0]


def thermal_prior(params: PhysicalParams) -> np.ndarray:
    """Covariance of ``(x, p)`` in a thermal state with occupation ``n0``."""
    w = reference_frequency(params)
    m = params.mass
    level = 2.0 * params.initial_occupation + 1.0
    return np.diag([level * HBAR / (2.0 * m * w), level * HBAR * m * w / 2.0])


def build_model(params: PhysicalParams, flavor=Flavor.ADIABATIC) -> LinearModel:
    """State-space realization of the optomechanical equations of motion."""
    check(params)
    flavor = Flavor(flavor)
    m = params.mass
    eta = params.efficiency
    alpha = params.coupling
    se, sl = math.sqrt(eta), math.sqrt(1.0 - eta)
    q = np.array([0.5, 0.5, 0.5, 0.5, 0.5 * params.thermal_force])
    mech = np.array([[0.0, 1.0 / m], [-m * params.mech_freq ** 2, -params.mech_damping]])

    if flavor is Flavor.ADIABATIC:
        scale = max(params.mech_freq, params.mech_damping, math.sqrt(alpha ** 2 / (HBAR * m)))
        if params.cavity_bandwidth < 10.0 * scale:
            warnings.warn("adiabatic elimination assumes cavity_bandwidth >> mechanical rates",
                          stacklevel=2)
        drift = mech
        inputs = np.array([[0.0, 0.0, 0.0, 0.0, 0.0],
                           [-alpha, 0.0, 0.0, 0.0, 1.0]])
        outputs = np.array([[0.0, 0.0],
                            [se * alpha / HBAR, 0.0]])
        feed = np.array([[se, 0.0, sl, 0.0, 0.0],
                         [0.0, se, 0.0, sl, 0.0]])
        prior = thermal_prior(params)
        labels = ("x", "p")
    else:
        kappa = params.cavity_bandwidth
        delta = params.detuning
        g = params.raw_coupling
        rk = math.sqrt(kappa)
        # Phase quadrature sign chosen so that kappa -> inf reproduces the
        # adiabatic outputs y2 = sqrt(eta) (a2 + alpha x / hbar) + ...
        drift = np.zeros((4, 4))
        drift[:2, :2] = mech
        drift[1, 2] = -math.sqrt(2.0) * HBAR * g
        drift[2, 2] = -kappa / 2.0
        drift[2, 3] = -delta
        drift[3, 3] = -kappa / 2.0
        drift[3, 2] = delta
        drift[3, 0] = math.sqrt(2.0) * g
        inputs = np.zeros((4, 5))
        inputs[1, 4] = 1.0
        inputs[2, 0] = rk
        inputs[3, 1] = rk
        outputs = np.array([[0.0, 0.0, se * rk, 0.0],
                            [0.0, 0.0, 0.0, se * rk]])
        feed = np.array([[-se, 0.0, sl, 0.0, 0.0],
                         [0.0, -se, 0.0, sl, 0.0]])
        prior = sla.block_diag(thermal_prior(params), 0.5 * np.eye(2))
        labels = ("x", "p", "a1c", "a2c")

    return LinearModel(flavor, params, drift, inputs, outputs, feed, q, prior, labels)


def green_x(t, params: PhysicalParams):
    """Mechanical Green's function ``G_x(t)`` for ``t >= 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Green's function is only defined for t >= 0")
    m = params.mass
    if params.free_mass:
        return t / m
    wm = params.mech_freq
    if wm == 0.0:
        # overdamped zero-frequency limit of sin(w t) / w
        return np.exp(-params.mech_damping * t / 2.0) * t / m
    return np.exp(-params.mech_damping * t / 2.0) * np.sin(wm * t) / (m * wm)


def mechanical_poles(params: PhysicalParams) -> np.ndarray:
    """Roots of ``w**2 + i kappa_m w - omega_m**2`` (lower half plane)."""
    km, wm = params.mech_damping, params.mech_freq
    disc = np.sqrt(complex(4.0 * wm ** 2 - km ** 2))
    return np.array([(-1j * km + disc) / 2.0, (-1j * km - disc) / 2.0])


def gx_tilde(params: PhysicalParams) -> Rational:
    """``G_x(w) = -1 / (m (w**2 - omega_m**2 + i kappa_m w))``."""
    return Rational(-1.0 / params.mass, (), mechanical_poles(params), tag="G_x")


def spectra(model: LinearModel) -> dict:
    """Cross spectra of ``(y1, y2)`` and their correlation with ``(x(0), p(0))``.

    Normalization follows the single-sided convention in which the shot
    noise floor is 1 (twice the symmetrized Fourier transform). Keys are
    ``B11, B12, B21, B22, C11, C12, C21, C22, Sxx``.
    """
    if model.flavor is not Flavor.ADIABATIC:
        raise ValueError("closed-form spectra exist only for the adiabatic model")
    p = model.params
    eta, alpha, m = p.efficiency, p.coupling, p.mass
    G = gx_tilde(p)
    Gc = G.conj()
    w = Rational(1.0, [0.0])  # the identity function w
    if alpha == 0.0:
        zero = Rational(0.0)
        out = {k: zero for k in ("B12", "B21", "C11", "C12", "C21", "C22")}
        out["B11"] = Rational.constant(1.0, tag="B11")
        out["B22"] = Rational.constant(1.0, tag="B22")
        out["Sxx"] = G * Gc * p.thermal_force
        return out
    Sxx = G * Gc * (alpha ** 2 + p.thermal_force)
    se = math.sqrt(eta)
    out = {
        "B11": Rational.constant(1.0),
        "B12": Gc * (-eta * alpha ** 2 / HBAR),
        "B21": G * (-eta * alpha ** 2 / HBAR),
        "B22": 1.0 + Sxx * (eta * alpha ** 2 / HBAR ** 2),
        "C11": Gc * (-se * alpha),
        "C12": Gc * w * (-1j * m * se * alpha),
        "C21": Sxx * (se * alpha / HBAR),
        "C22": Sxx * w * (1j * m * se * alpha / HBAR),
        "Sxx": Sxx,
    }
    for key, value in out.items():
        value.tag = key
    return out


def transfer(model: LinearModel, w) -> tuple[np.ndarray, np.ndarray]:
    """Frequency responses from the noises to outputs and to the state.

    Returns ``(Ty, Ts)`` with shapes ``(len(w), 2, 5)`` and ``(len(w), n, 5)``
    under the transform convention ``f(w) = int exp(i w t) f(t) dt``.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    n = model.dim
    eye = np.eye(n)
    Ts = np.stack([np.linalg.solve(-1j * wk * eye - model.drift, model.inputs) for wk in w])
    Ty = model.outputs @ Ts + model.feedthrough
    return Ty, Ts


def numeric_spectra(model: LinearModel, w) -> tuple[np.ndarray, np.ndarray]:
    """Single-sided ``(B(w), C(w))`` evaluated from the state-space realization."""
    Ty, Ts = transfer(model, w)
    Q = np.diag(model.intensities)
    B = 2.0 * Ty @ Q @ np.conj(np.transpose(Ty, (0, 2, 1)))
    C = 2.0 * Ty @ Q @ np.conj(np.transpose(Ts, (0, 2, 1)))
    return B, C


def stationary_covariance(model: LinearModel) -> np.ndarray:
    """Stationary state covariance; requires a strictly stable drift."""
    if np.max(np.linalg.eigvals(model.drift).real) >= 0:
        raise ValueError("model has no stationary state (drift not strictly stable)")
    Q = model.inputs @ np.diag(model.intensities) @ model.inputs.T
    return sla.solve_continuous_lyapunov(model.drift, -Q)


def correlation_kernels(model: LinearModel, lags) -> tuple[np.ndarray, np.ndarray]:
    """Stationary two-time kernels excluding the white-noise delta terms.

    Returns ``(Byy, Cys)`` where ``Byy[k] = <y(t) y(t - lag_k)>`` and
    ``Cys[k] = <y(-lag_k) s(0)>`` for ``lag_k > 0``.
    """
    P = stationary_covariance(model)
    Q = np.diag(model.intensities)
    H, D, G, F = model.outputs, model.feedthrough, model.inputs, model.drift
    cross = P @ H.T + G @ Q @ D.T  # <s(t) y(t)> one-sided limit
    Byy, Cys = [], []
    for lag in np.atleast_1d(lags):
        Phi = sla.expm(F * lag)
        Byy.append(H @ Phi @ cross)
        Cys.append((Phi @ cross).T)
    return np.array(Byy), np.array(Cys)


def sql_spectrum(omega, mass=1.0):
    """Free-mass Standard Quantum Limit ``2 hbar / (m omega**2)``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("frequency must be positive")
    return 2.0 * HBAR / (mass * omega ** 2)


def displacement_noise(params: PhysicalParams, omega) -> dict:
    """Single-sided displacement-referred noise spectra of a free mass.

    ``force_thermal`` crosses the SQL at ``Omega_F``; ``backaction`` is the
    quantum noise (radiation-pressure plus shot noise at unit efficiency),
    which touches the SQL at ``Omega_q``; ``sensing`` is the loss-induced
    imprecision, crossing the SQL at ``Omega_x``.
    """
    omega = np.asarray(omega, dtype=float)
    m, alpha, eta = params.mass, params.coupling, params.efficiency
    sql = sql_spectrum(omega, m)
    thermal = params.thermal_force / (m ** 2 * omega ** 4)
    if alpha == 0.0:
        backaction = np.full(omega.shape, np.inf)
        sensing = np.full(omega.shape, np.inf)
    else:
        backaction = alpha ** 2 / (m ** 2 * omega ** 4) + HBAR ** 2 / alpha ** 2
        if eta == 0.0:
            sensing = np.full(omega.shape, np.inf)
        else:
            sensing = np.full(omega.shape, HBAR ** 2 * (1.0 - eta) / (eta * alpha ** 2))
    return {"sql": sql, "force_thermal": thermal, "backaction": backaction, "sensing": sensing}
