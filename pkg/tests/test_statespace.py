import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from optosteer.model import PhysicalParams
from optosteer.statespace import (Flavor, build_model, correlation_kernels, displacement_noise,
                                  green_x, numeric_spectra, spectra, sql_spectrum, transfer)


def test_zero_coupling_is_free_shear():
    m = build_model(PhysicalParams(coupling=0.0, mass=2.0))
    assert np.array_equal(m.drift, [[0.0, 0.5], [0.0, 0.0]])
    assert np.all(m.outputs == 0.0)


def test_phase_output_weight():
    p = PhysicalParams(coupling=1.7, efficiency=0.64)
    m = build_model(p)
    assert m.outputs[1, 0] == pytest.approx(0.8 * 1.7)
    assert m.outputs[0, 0] == 0.0
    # detection noise mixing
    assert m.feedthrough[0, 0] ** 2 + m.feedthrough[0, 2] ** 2 == pytest.approx(1.0)


def test_adiabatic_warns_for_narrow_cavity():
    with pytest.warns(UserWarning):
        build_model(PhysicalParams(cavity_bandwidth=2.0))


@pytest.mark.parametrize("eta", [1.0, 0.6])
def test_cavity_reduces_to_adiabatic(eta):
    """Output responses of the full cavity approach the adiabatic ones as 1/kappa."""
    w = np.linspace(0.1, 2.0, 15)
    errs = []
    for kappa in (100.0, 400.0):
        p = PhysicalParams(cavity_bandwidth=kappa, efficiency=eta, thermal_force=0.2)
        Ty_c, Ts_c = transfer(build_model(p, Flavor.CAVITY), w)
        Ty_a, Ts_a = transfer(build_model(p), w)
        scale = np.max(np.abs(Ty_a))
        errs.append(max(np.max(np.abs(Ty_c - Ty_a)), np.max(np.abs(Ts_c[:, :2] - Ts_a))) / scale)
    assert errs[0] < 0.05
    assert errs[1] < errs[0] / 3.0


def test_drift_stable():
    for flavor in Flavor:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = build_model(PhysicalParams(mech_freq=0.5, mech_damping=0.1, detuning=0.3,
                                           cavity_bandwidth=5.0), flavor)
        assert np.max(np.linalg.eigvals(m.drift).real) <= 0


def test_green_function_values():
    assert green_x(0.0, PhysicalParams(mech_freq=2.0, mech_damping=0.1)) == 0.0
    assert green_x(2.5, PhysicalParams()) == pytest.approx(2.5)
    value = green_x(1.0, PhysicalParams(mech_freq=2.0, mech_damping=0.1))
    assert value == pytest.approx(math.exp(-0.05) * math.sin(2.0) / 2.0, abs=1e-14)
    # the commonly quoted decimal 0.4324464 is off in the fifth digit; the
    # expression above evaluates to 0.43247523
    assert value == pytest.approx(0.4324464, abs=1e-4)
    with pytest.raises(ValueError):
        green_x(-1.0, PhysicalParams())


def test_green_function_against_impulse_response():
    # m x'' = -m wm^2 x - m km x' with x(0)=0, x'(0)=1/m; the closed form uses the
    # undamped frequency, so agreement is to O(km^2 / wm^2)
    wm, km = 2.0, 0.1
    sol = solve_ivp(lambda t, y: [y[1], -wm ** 2 * y[0] - km * y[1]], (0, 1), [0.0, 1.0],
                    rtol=1e-11, atol=1e-13)
    ode = sol.y[0, -1]
    formula = green_x(1.0, PhysicalParams(mech_freq=wm, mech_damping=km))
    assert abs(ode - formula) / abs(ode) < (km / wm) ** 2


def test_spectra_zero_coupling():
    sp = spectra(build_model(PhysicalParams(coupling=0.0)))
    w = np.array([0.5, 2.0])
    assert np.all(sp["B12"](w) == 0) and np.all(sp["B21"](w) == 0)
    assert np.allclose(sp["B22"](w), 1.0)


def test_free_mass_b22():
    sp = spectra(build_model(PhysicalParams(coupling=1.3)))
    w = np.array([0.7, 1.3, 3.0])
    assert np.allclose(sp["B22"](w), 1 + 1.3 ** 4 / w ** 4, rtol=1e-13)
    omega_q = 1.3
    assert sp["B22"](omega_q) == pytest.approx(2.0)


def test_schur_spectrum_free_mass():
    p = PhysicalParams(efficiency=0.7, thermal_force=0.4, coupling=1.2)
    sp = spectra(build_model(p))
    schur = sp["B22"] - sp["B21"] * sp["B12"] / sp["B11"]
    z = math.sqrt(0.35 * (0.3 + 0.4 / 1.44))
    w = np.linspace(0.2, 4, 9)
    assert np.allclose(schur(w), (w ** 4 + 2 * 1.2 ** 4 * z ** 2) / w ** 4, rtol=1e-12)


def test_cross_spectral_density_is_psd_and_hermitian():
    p = PhysicalParams(efficiency=0.7, thermal_force=0.3, mech_freq=0.8, mech_damping=0.2)
    sp = spectra(build_model(p))
    w = np.linspace(-5, 5, 201)
    assert np.allclose(sp["B21"](w), np.conj(sp["B12"](w)))
    for wk in w:
        M = np.array([[sp["B11"](wk), sp["B12"](wk)], [sp["B21"](wk), sp["B22"](wk)]])
        assert np.allclose(M, M.conj().T)
        assert np.linalg.eigvalsh(M).min() > -1e-12


def test_spectra_match_state_space_transfer():
    p = PhysicalParams(efficiency=0.7, thermal_force=0.3, mech_freq=0.8, mech_damping=0.2,
                       coupling=1.3)
    m = build_model(p)
    sp = spectra(m)
    w = np.array([-1.7, 0.3, 1.1])
    B, C = numeric_spectra(m, w)
    for i in range(2):
        for j in range(2):
            assert np.allclose(B[:, i, j], sp[f"B{i + 1}{j + 1}"](w), rtol=1e-12, atol=1e-12)
            assert np.allclose(C[:, i, j], sp[f"C{i + 1}{j + 1}"](w), rtol=1e-12, atol=1e-12)


def test_kernels_match_spectra():
    """Inverse transform of the B21 spectrum equals the state-space kernel."""
    p = PhysicalParams(efficiency=0.8, mech_freq=1.0, mech_damping=0.4)
    m = build_model(p)
    sp = spectra(m)
    lags = np.array([0.5, 1.5, 3.0])
    Byy, _ = correlation_kernels(m, lags)
    dw = 0.002
    w = (np.arange(2 ** 18) - 2 ** 17) * dw
    for lag, direct in zip(lags, Byy):
        # single-sided spectrum: twice the transform of the two-time correlation
        val = np.sum(sp["B21"](w) * np.exp(-1j * w * lag)) * dw / (2 * np.pi) / 2
        assert val.real == pytest.approx(direct[1, 0], abs=2e-4)
        assert direct[0, 1] == 0.0


def test_sql():
    assert sql_spectrum(1.0) == pytest.approx(2.0)
    assert sql_spectrum(2.0) == pytest.approx(0.5)
    w = np.array([0.3, 1.0, 7.0])
    assert np.allclose(sql_spectrum(2 * w, 3.0), sql_spectrum(w, 3.0) / 4)
    with pytest.raises(ValueError):
        sql_spectrum(0.0)


def test_noise_crossings():
    p = PhysicalParams(coupling=1.5, thermal_force=0.8, efficiency=0.7)
    omega_q = 1.5
    omega_F = math.sqrt(0.8 / 2.0)
    n_q = displacement_noise(p, np.array([omega_q]))
    n_F = displacement_noise(p, np.array([omega_F]))
    assert n_q["backaction"][0] == pytest.approx(n_q["sql"][0], rel=1e-12)
    assert n_F["force_thermal"][0] == pytest.approx(n_F["sql"][0], rel=1e-12)
