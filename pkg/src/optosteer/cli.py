"""``optosteer`` command-line interface.

Parameter files are flat ``key = value`` text with ``#`` comments; keys are
the :class:`~optosteer.model.PhysicalParams` field names plus ``raw_coupling``
(the cavity coupling ``g``, converted to ``alpha``). Unknown keys are errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import conditioning as cond
from .gram import AssemblyError, QuadratureSchedule, TimeGrid, assemble
from .model import (HBAR, ParameterError, PhysicalParams, check, coupling_from_raw,
                    derive_scales, thermal_force_floor, zero_point, zeta_F)
from .statespace import Flavor, build_model, displacement_noise
from .trajectory import simulate, verify_ensemble
from .wienerhopf import analytic_vs, closed_form_S, closed_form_Sv, slowest_rate

DEFAULT_SAMPLES = 3000
WINDOW_RATES = 12.0
MAX_PHASE_STEP = 0.2
ANALYTIC_TOL = 0.05

_FIELDS = {f.name for f in fields(PhysicalParams)}


class CliError(Exception):
    pass


def parse_paramfile(text: str) -> PhysicalParams:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS and key != "raw_coupling":
            raise CliError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise CliError(f"line {lineno}: duplicate key {key!r}")
        if key == "window" and value.lower() in ("none", ""):
            values[key] = None
            continue
        try:
            values[key] = float(value)
        except ValueError:
            raise CliError(f"line {lineno}: {key} is not a number: {value!r}") from None
    if "raw_coupling" in values:
        if "coupling" in values:
            raise CliError("give either coupling or raw_coupling, not both")
        kappa = values.get("cavity_bandwidth", PhysicalParams.cavity_bandwidth)
        values["coupling"] = coupling_from_raw(values.pop("raw_coupling"), kappa)
    return PhysicalParams(**values)


def load_params(path: str, eta=None) -> PhysicalParams:
    try:
        with open(path) as fh:
            params = parse_paramfile(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if eta is not None:
        params = params.with_(efficiency=eta)
    try:
        check(params)
    except ParameterError as exc:
        raise CliError(f"invalid parameters: {exc}") from None
    if params.thermal_force < thermal_force_floor(params):
        print("optosteer: warning: thermal_force is below 2 m kappa_m hbar omega_m; "
              "conditional states may violate the uncertainty relation", file=sys.stderr)
    return params


def default_window(params: PhysicalParams) -> float:
    """``12 / slowest filter rate``, with fallbacks when no rate exists."""
    try:
        rate = slowest_rate(params)
    except ValueError:
        rate = math.nan
    if not (rate > 0 and math.isfinite(rate)):
        z = zeta_F(params)
        omega_q = math.sqrt(params.coupling ** 2 / (HBAR * params.mass))
        rate = 2 ** -0.25 * math.sqrt(z) * omega_q
    if not (rate > 0 and math.isfinite(rate)):
        rate = max(params.mech_freq, params.mech_damping, 1.0)
    return WINDOW_RATES / rate


def default_grid(params: PhysicalParams, tau=None, samples=None) -> TimeGrid:
    if tau is None:
        tau = params.window if params.window is not None else default_window(params)
    return TimeGrid(float(tau), int(samples or DEFAULT_SAMPLES))


def fastest_rate(params: PhysicalParams) -> float:
    """Largest oscillator time scale the grid has to resolve: ``max(omega_m, Omega_q)``."""
    omega_q = math.sqrt(params.coupling ** 2 / (HBAR * params.mass))
    return max(params.mech_freq, params.mech_damping, omega_q)


def resolved_samples(params: PhysicalParams, tau: float, phase_step=0.05) -> int:
    """Samples needed so that one step advances the fastest rate by ``phase_step``."""
    return int(math.ceil(tau * fastest_rate(params) / phase_step)) + 1


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{float(value):.8e}"


def write_csv(path, header, rows, stream=None) -> None:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([fmt(v) for v in row])
    if path is None or path == "-":
        (stream or sys.stdout).write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


def report(pairs) -> None:
    for key, value in pairs:
        print(f"{key} = {fmt(value)}")


def _setup(args):
    params = load_params(args.paramfile, args.eta)
    model = build_model(params, args.flavor)
    grid = default_grid(params, args.tau, args.samples)
    if grid.step * fastest_rate(params) > MAX_PHASE_STEP:
        print(f"optosteer: warning: grid step {grid.step:.3g} does not resolve the dynamics "
              f"(need about {resolved_samples(params, grid.window)} samples); "
              "conditional states may be unphysical", file=sys.stderr)
    return params, model, grid


def cmd_steer(args) -> int:
    params, model, grid = _setup(args)
    blocks = assemble(model, grid)
    Vs = cond.condition_joint(blocks)
    rep = cond.steering_report(Vs)
    ok = rep.wiseman_consistent
    pairs = [("tau", grid.window), ("samples", grid.samples),
             ("V_xx", Vs[0, 0]), ("V_xp", Vs[0, 1]), ("V_pp", Vs[1, 1]),
             ("S", rep.S), ("steerable", rep.steerable),
             ("wiseman_consistent", rep.wiseman_consistent)]
    row = [rep.S, Vs[0, 0], Vs[0, 1], Vs[1, 1], rep.steerable, rep.wiseman_consistent]
    deviation = math.nan
    if model.flavor is Flavor.ADIABATIC and params.coupling != 0.0:
        Va = analytic_vs(params)
        if np.linalg.det(Va) > 0:
            deviation = float(np.max(np.abs(Va - Vs)) / np.max(np.abs(Va)))
            ok = ok and deviation <= ANALYTIC_TOL
            pairs.append(("S_analytic", cond.steerability(Va)))
        pairs.append(("analytic_deviation", deviation if math.isfinite(deviation) else "skipped"))
        if params.free_mass and params.efficiency > 0 and zeta_F(params) > 0:
            pairs.append(("S_closed_form", closed_form_S(params)))
    row.append(deviation)
    report(pairs)
    if args.out:
        write_csv(args.out, ["S", "V_xx", "V_xp", "V_pp", "steerable", "wiseman_consistent",
                             "analytic_deviation"], [row])
    return 0 if ok else 1


def sweep_row(params: PhysicalParams, ratio: float):
    """Closed-form point at ``Omega_x / Omega_F = ratio`` with ``Omega_q`` held fixed."""
    if not (ratio > 0 and math.isfinite(ratio)):
        return [ratio] + [math.nan] * 6 + ["infeasible"]
    eta = ratio / (2.0 + ratio)
    p = params.with_(efficiency=eta, thermal_force=2.0 * params.coupling ** 2 / ratio)
    z = zeta_F(p)
    return [ratio, eta, p.thermal_force, z, closed_form_S(p), closed_form_Sv(p),
            -math.log(2.0 * z / eta), "ok"]


def cmd_sweep(args) -> int:
    params = load_params(args.paramfile)
    if params.coupling == 0.0:
        raise CliError("sweep needs a nonzero coupling (Omega_q > 0)")
    if args.points < 1:
        raise CliError("points must be positive")
    if args.rmin > 0 and args.rmax > 0:
        ratios = np.geomspace(args.rmin, args.rmax, args.points)
    else:
        ratios = np.linspace(args.rmin, args.rmax, args.points)
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        rows = list(pool.map(lambda r: sweep_row(params, float(r)), ratios))
    write_csv(args.out, ["ratio", "eta", "thermal_force", "zeta_F", "S", "S_v",
                         "S_v_comparator", "status"], rows)
    return 0 if all(r[-1] == "ok" for r in rows) else 1


def cmd_spectra(args) -> int:
    params = load_params(args.paramfile, args.eta)
    if not (args.wmin > 0 and args.wmax > args.wmin):
        raise CliError("frequency range must satisfy 0 < wmin < wmax")
    omega = np.geomspace(args.wmin, args.wmax, args.points)
    noise = displacement_noise(params, omega)
    rows = zip(omega, noise["sql"], noise["force_thermal"], noise["backaction"], noise["sensing"])
    write_csv(args.out, ["omega", "sql", "force_thermal", "backaction", "sensing"], rows)
    scales = derive_scales(params)
    print(f"# Omega_F = {fmt(scales.omega_F)}, Omega_q = {fmt(scales.omega_q)}, "
          f"Omega_x = {fmt(scales.omega_x)}", file=sys.stderr)
    return 0


def cmd_schedule(args) -> int:
    params, model, grid = _setup(args)
    blocks = assemble(model, grid)
    dx, dp = zero_point(params)
    schedule = cond.optimal_schedule(blocks, args.phi, dx, dp)
    state = cond.condition_single(blocks, schedule)
    v = cond.quadrature_vector(args.phi, dx, dp)
    achieved = float(v @ state.covariance @ v)
    target = cond.min_variance(blocks, args.phi, dx, dp)
    report([("phi", args.phi), ("min_variance", target), ("achieved_variance", achieved),
            ("degenerate_samples", int(schedule.degenerate.sum()))])
    if args.out:
        write_csv(args.out, ["t", "theta", "degenerate"],
                  zip(grid.times, schedule.angles, schedule.degenerate))
    return 0 if achieved <= target * 1.02 + 1e-300 else 1


def ensemble_bound(count: int) -> float:
    """Bound on the scaled covariance deviation: 5% at 10^4 trajectories, growing as 1/sqrt(count)."""
    return 0.05 * math.sqrt(max(1.0, 1e4 / count))


def cmd_simulate(args) -> int:
    params, model, grid = _setup(args)
    blocks = assemble(model, grid)
    if args.phi is not None:
        dx, dp = zero_point(params)
        schedule = cond.optimal_schedule(blocks, args.phi, dx, dp)
    else:
        schedule = QuadratureSchedule.constant(args.theta, grid.samples)
    state = cond.condition_single(blocks, schedule)
    rep = verify_ensemble(model, grid, schedule, args.count, args.seed,
                          workers=args.workers, state=state)
    bound = ensemble_bound(args.count)
    corr_bound = 4.0 / math.sqrt(args.count)
    ok = rep.deviation < bound and rep.max_outcome_corr < corr_bound
    report([("count", rep.count), ("seed", rep.seed),
            ("deviation", rep.deviation), ("deviation_bound", bound),
            ("deviation_corr", rep.deviation_corr),
            ("max_outcome_corr", rep.max_outcome_corr), ("corr_bound", corr_bound)])
    if args.out:
        E, V = rep.empirical, rep.predicted
        write_csv(args.out, ["count", "seed", "emp_xx", "emp_xp", "emp_pp", "pred_xx", "pred_xp",
                             "pred_pp", "deviation", "deviation_corr", "max_outcome_corr"],
                  [[rep.count, rep.seed, E[0, 0], E[0, 1], E[1, 1], V[0, 0], V[0, 1], V[1, 1],
                    rep.deviation, rep.deviation_corr, rep.max_outcome_corr]])
    if args.record:
        simulate(model, grid, schedule, args.seed).to_csv(args.record)
    return 0 if ok else 1


def cmd_tomo(args) -> int:
    params, model, grid = _setup(args)
    Vs = cond.condition_joint(assemble(model, grid))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", cond.ConvergenceWarning)
        Vv = cond.retrodict_Vv(model, grid)
    converged = not any(issubclass(w.category, cond.ConvergenceWarning) for w in caught)
    flipped = Vs * np.array([[1.0, -1.0], [-1.0, 1.0]])
    duality = float(np.max(np.abs(Vv - flipped)) / np.max(np.abs(Vs)))
    sv = cond.verifiable_steering(Vs, Vv, params)
    pairs = [("Vv_xx", Vv[0, 0]), ("Vv_xp", Vv[0, 1]), ("Vv_pp", Vv[1, 1]),
             ("duality_deviation", duality), ("S_v", sv.S_v), ("prior_converged", converged)]
    if sv.closed_form is not None and params.free_mass:
        pairs += [("S_v_closed_form", sv.closed_form), ("S_v_comparator", sv.comparator),
                  ("comparator_delta", sv.comparator_delta)]
    report(pairs)
    if args.out:
        write_csv(args.out, ["Vv_xx", "Vv_xp", "Vv_pp", "duality_deviation", "S_v"],
                  [[Vv[0, 0], Vv[0, 1], Vv[1, 1], duality, sv.S_v]])
    return 0 if converged else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("paramfile")
    common.add_argument("--out", help="CSV output path ('-' for stdout)")
    common.add_argument("--workers", type=int, default=1)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--flavor", choices=[f.value for f in Flavor], default="adiabatic")
    grid.add_argument("--eta", type=float, help="override the efficiency")
    grid.add_argument("--tau", type=float, help="record window (default 12 / slowest rate)")
    grid.add_argument("--samples", type=int, help=f"grid points (default {DEFAULT_SAMPLES})")

    parser = argparse.ArgumentParser(prog="optosteer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("steer", parents=[common, grid], help="conditional covariance and S")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("sweep", parents=[common], help="closed-form S and S_v versus Omega_x/Omega_F")
    p.add_argument("--rmin", type=float, default=0.1)
    p.add_argument("--rmax", type=float, default=100.0)
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("spectra", parents=[common], help="displacement noise spectra and SQL")
    p.add_argument("--eta", type=float)
    p.add_argument("--wmin", type=float, default=0.01)
    p.add_argument("--wmax", type=float, default=100.0)
    p.add_argument("--points", type=int, default=200)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("schedule", parents=[common, grid], help="optimal homodyne angle schedule")
    p.add_argument("--phi", type=float, default=0.0)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", parents=[common, grid], help="Monte Carlo check of V_m")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=0.0, help="constant homodyne angle")
    p.add_argument("--phi", type=float, help="use the optimal schedule for X_phi instead")
    p.add_argument("--record", help="also write one record (t, theta, y) as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tomo", parents=[common, grid], help="tomography error and S_v")
    p.set_defaults(func=cmd_tomo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ParameterError, AssemblyError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"optosteer: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
