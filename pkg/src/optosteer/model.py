"""Physical parameters of the optomechanical setup and derived noise scales.

All quantities live in an internal unit system with ``hbar = 1``. Masses,
lengths and times are otherwise free; :func:`to_natural_units` rescales a
parameter set so that ``m = 1`` and a chosen reference frequency equals 1.

Temperature never appears on its own. The thermal bath enters only through
the single-sided thermal force spectrum ``S_F_th = 4 m kappa_m k_B T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

HBAR = 1.0


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dial settings of a continuously monitored optomechanical device.

    Attributes
    ----------
    mass : float
        Oscillator mass ``m``.
    mech_freq : float
        Mechanical resonance ``omega_m`` (rad/s). Zero together with
        ``mech_damping == 0`` selects the free-mass limit.
    mech_damping : float
        Energy damping rate ``kappa_m`` (rad/s).
    thermal_force : float
        Single-sided thermal force spectrum ``S_F_th``.
    coupling : float
        Effective coupling ``alpha`` (force per unit amplitude quadrature).
    cavity_bandwidth : float
        Cavity energy decay rate ``kappa``; only used by the full-cavity model.
    detuning : float
        Cavity detuning ``Delta``; only used by the full-cavity model.
    efficiency : float
        Photodetection efficiency ``eta``.
    window : float or None
        Measurement duration ``tau``. ``None`` lets callers pick a window
        from the filter's decay rate.
    initial_occupation : float
        Thermal occupation ``n0`` of the oscillator prior at the start of
        the window.
    """

    mass: float = 1.0
    mech_freq: float = 0.0
    mech_damping: float = 0.0
    thermal_force: float = 0.0
    coupling: float = 1.0
    cavity_bandwidth: float = 100.0
    detuning: float = 0.0
    efficiency: float = 1.0
    window: Optional[float] = None
    initial_occupation: float = 0.0

    @property
    def free_mass(self) -> bool:
        return self.mech_freq == 0.0 and self.mech_damping == 0.0

    @property
    def raw_coupling(self) -> float:
        """Cavity coupling ``g`` such that ``alpha = sqrt(8/kappa) hbar g``."""
        return self.coupling * math.sqrt(self.cavity_bandwidth / 8.0) / HBAR

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


def coupling_from_raw(g: float, cavity_bandwidth: float) -> float:
    """Effective coupling ``alpha = sqrt(8/kappa) hbar g``."""
    if cavity_bandwidth <= 0:
        raise ParameterError("cavity_bandwidth must be positive")
    return math.sqrt(8.0 / cavity_bandwidth) * HBAR * g


@dataclass(frozen=True)
class DerivedScales:
    """Characteristic dimensionless constant and frequencies.

    ``omega_x`` is ``math.inf`` at unit efficiency.
    """

    zeta_F: float
    omega_F: float
    omega_q: float
    omega_x: float
    S_F_rp: float
    units: dict = field(default_factory=lambda: {"hbar": HBAR})


def validate(params: PhysicalParams) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    checks = [
        (params.mass > 0, "mass must be positive"),
        (params.mech_freq >= 0, "mech_freq must be non-negative"),
        (params.mech_damping >= 0, "mech_damping must be non-negative"),
        (params.thermal_force >= 0, "thermal_force must be non-negative"),
        (params.cavity_bandwidth > 0, "cavity_bandwidth must be positive"),
        (0.0 <= params.efficiency <= 1.0, "efficiency out of [0,1]"),
        (params.window is None or params.window > 0, "window must be positive"),
        (params.initial_occupation >= 0, "initial_occupation must be non-negative"),
    ]
    for ok, message in checks:
        if not ok:
            problems.append(message)
    for name in ("mass", "mech_freq", "mech_damping", "thermal_force", "coupling",
                 "cavity_bandwidth", "detuning", "efficiency", "initial_occupation"):
        value = getattr(params, name)
        if not math.isfinite(value):
            problems.append(f"{name} must be finite")
    return problems


def check(params: PhysicalParams) -> PhysicalParams:
    problems = validate(params)
    if problems:
        raise ParameterError("; ".join(problems))
    return params


def noise_ratio(params: PhysicalParams) -> float:
    """Thermal-to-radiation-pressure force ratio ``S_F_th / alpha**2``."""
    alpha2 = params.coupling ** 2
    if alpha2 == 0.0:
        return 0.0 if params.thermal_force == 0.0 else math.inf
    return params.thermal_force / alpha2


def thermal_force_floor(params: PhysicalParams) -> float:
    """Smallest ``S_F_th`` a damped oscillator can have: ``2 m kappa_m hbar omega_m``.

    Below it the damping removes more phase-space volume than the bath noise
    restores, and conditional states can violate the uncertainty relation.
    At the floor the stationary state is the ground state.
    """
    return 2.0 * params.mass * params.mech_damping * HBAR * params.mech_freq


def zeta_F(params: PhysicalParams) -> float:
    eta = params.efficiency
    return math.sqrt(0.5 * eta * ((1.0 - eta) + noise_ratio(params)))


def derive_scales(params: PhysicalParams) -> DerivedScales:
    """Compute ``zeta_F`` and the force, quantum and sensing frequencies."""
    check(params)
    m = params.mass
    eta = params.efficiency
    omega_q = math.sqrt(params.coupling ** 2 / (HBAR * m))
    omega_F = math.sqrt(params.thermal_force / (2.0 * HBAR * m))
    if eta >= 1.0:
        omega_x = math.inf
    else:
        omega_x = omega_q * math.sqrt(2.0 * eta / (1.0 - eta))
    return DerivedScales(
        zeta_F=zeta_F(params),
        omega_F=omega_F,
        omega_q=omega_q,
        omega_x=omega_x,
        S_F_rp=params.coupling ** 2,
    )


def reference_frequency(params: PhysicalParams) -> float:
    """``omega_m`` for an oscillator, ``Omega_q`` in the free-mass limit."""
    if params.mech_freq > 0:
        return params.mech_freq
    omega_q = math.sqrt(params.coupling ** 2 / (HBAR * params.mass))
    return omega_q if omega_q > 0 else 1.0


def zero_point(params: PhysicalParams, omega_ref: Optional[float] = None) -> tuple[float, float]:
    """Zero-point spreads ``(dx_q, dp_q)`` of an oscillator at ``omega_ref``."""
    w = reference_frequency(params) if omega_ref is None else omega_ref
    m = params.mass
    return math.sqrt(HBAR / (2.0 * m * w)), math.sqrt(HBAR * m * w / 2.0)


def to_natural_units(params: PhysicalParams, omega_ref: Optional[float] = None):
    """Rescale to ``m = 1`` with frequencies measured in units of ``omega_ref``.

    Returns the rescaled parameters and a metadata dict. ``omega_ref``
    defaults to ``Omega_q``.
    """
    check(params)
    if omega_ref is None:
        omega_ref = math.sqrt(params.coupling ** 2 / (HBAR * params.mass))
    if not omega_ref > 0:
        raise ParameterError("reference frequency must be positive")
    m = params.mass
    scaled = replace(
        params,
        mass=1.0,
        mech_freq=params.mech_freq / omega_ref,
        mech_damping=params.mech_damping / omega_ref,
        cavity_bandwidth=params.cavity_bandwidth / omega_ref,
        detuning=params.detuning / omega_ref,
        coupling=params.coupling / (math.sqrt(m) * omega_ref),
        thermal_force=params.thermal_force / (m * omega_ref ** 2),
        window=None if params.window is None else params.window * omega_ref,
    )
    meta = {"hbar": HBAR, "mass": 1.0, "omega_ref": omega_ref, "time_unit": 1.0 / omega_ref}
    return scaled, meta
