import csv
import math

import numpy as np
import pytest

from optosteer.cli import CliError, default_grid, main, parse_paramfile
from optosteer.model import PhysicalParams


def write(tmp_path, text, name="params.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def fields(out):
    return dict(line.split(" = ") for line in out.strip().splitlines() if " = " in line)


def test_paramfile_parsing():
    p = parse_paramfile("# comment\nmass = 2\n\nefficiency=0.7  # trailing\nwindow = none\n")
    assert p == PhysicalParams(mass=2.0, efficiency=0.7)
    assert parse_paramfile("raw_coupling = 2\ncavity_bandwidth = 8").coupling == pytest.approx(2.0)
    for bad in ("temperature = 3", "mass", "mass = heavy", "mass = 1\nmass = 2",
                "coupling = 1\nraw_coupling = 1"):
        with pytest.raises(CliError):
            parse_paramfile(bad)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["steer", write(tmp_path, "bogus = 1")]) != 0
    assert "unknown key" in capsys.readouterr().err
    assert main(["steer", write(tmp_path, "efficiency = 1.5")]) != 0
    assert "efficiency out of [0,1]" in capsys.readouterr().err
    assert main(["steer", str(tmp_path / "missing.txt")]) != 0
    assert main(["spectra", write(tmp_path, ""), "--wmin", "0"]) != 0


@pytest.mark.parametrize("eta, expected, tol", [(0.75, 0.5 * math.log(3), 0.02 * 0.5493), (0.5, 0.0, 0.02)])
def test_steer_shot_noise_limited(tmp_path, capsys, eta, expected, tol):
    out_csv = tmp_path / "steer.csv"
    code = main(["steer", write(tmp_path, f"efficiency = {eta}\n"), "--out", str(out_csv)])
    out = fields(capsys.readouterr().out)
    assert code == 0
    assert float(out["S"]) == pytest.approx(expected, abs=tol)
    assert out["wiseman_consistent"] == "true"
    header, rows = read_csv(out_csv)
    assert header[0] == "S" and len(rows) == 1


def test_steer_without_coupling(tmp_path, capsys):
    code = main(["steer", write(tmp_path, "coupling = 0\ninitial_occupation = 10\n"), "--samples", "400"])
    out = fields(capsys.readouterr().out)
    assert code == 0
    assert out["steerable"] == "false"
    assert float(out["S"]) < -2.0


def test_default_grid():
    g = default_grid(PhysicalParams(efficiency=0.75))
    rate = 2 ** -0.25 * math.sqrt(math.sqrt(0.75 * 0.25 / 2))
    assert g.window == pytest.approx(12 / rate)
    assert g.samples == 3000
    assert default_grid(PhysicalParams(window=4.0), samples=10).window == 4.0


def test_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", write(tmp_path, "coupling = 1\n"), "--rmin", "0.1", "--rmax", "1000",
                 "--points", "37", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header == ["ratio", "eta", "thermal_force", "zeta_F", "S", "S_v", "S_v_comparator", "status"]
    assert len(rows) == 37
    sv = np.array([float(r[5]) for r in rows])
    assert np.all(np.diff(sv) > 0)
    assert sv[0] < 0 < sv[-1]
    # the sign change sits where 4 zeta_F / eta = 1, i.e. 1/r + (2+r)/r^2 = 1/16
    root = 16 + math.sqrt(16 ** 2 + 32)
    i = int(np.argmax(sv > 0))
    assert float(rows[i - 1][0]) < root < float(rows[i][0])
    assert all(len(r[4].split("e")[0].replace("-", "").replace(".", "")) == 9 for r in rows)


def test_sweep_infeasible_rows(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", write(tmp_path, ""), "--rmin", "-1", "--rmax", "1", "--points", "3",
                 "--out", str(out)])
    _, rows = read_csv(out)
    assert code != 0 and len(rows) == 3 and rows[0][-1] == "infeasible"


def test_spectra(tmp_path, capsys):
    out = tmp_path / "spectra.csv"
    assert main(["spectra", write(tmp_path, "coupling = 1.5\nthermal_force = 0.5\nefficiency = 0.7\n"),
                 "--wmin", "0.05", "--wmax", "20", "--points", "400", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header == ["omega", "sql", "force_thermal", "backaction", "sensing"]
    data = np.array([[float(v) for v in r] for r in rows])
    w = data[:, 0]

    def crossing(col):
        d = np.log(data[:, col]) - np.log(data[:, 1])
        i = int(np.nonzero(np.sign(d[1:]) != np.sign(d[:-1]))[0][0])
        return math.exp(np.interp(0.0, [d[i + 1], d[i]], [math.log(w[i + 1]), math.log(w[i])]))

    assert crossing(2) == pytest.approx(math.sqrt(0.5 / 2), rel=0.01)
    # back-action plus shot noise touches the SQL from above at Omega_q
    total = data[:, 3] / data[:, 1]
    assert w[np.argmin(total)] == pytest.approx(1.5, rel=0.02)
    assert total.min() == pytest.approx(1.0, rel=0.01)


def test_spectra_sql_value(tmp_path):
    out = tmp_path / "spectra.csv"
    main(["spectra", write(tmp_path, ""), "--wmin", "1", "--wmax", "2", "--points", "2", "--out", str(out)])
    _, rows = read_csv(out)
    assert float(rows[0][1]) == 2.0


def test_schedule(tmp_path, capsys):
    out = tmp_path / "sched.csv"
    assert main(["schedule", write(tmp_path, "efficiency = 0.8\n"), "--phi", "0.7",
                 "--samples", "600", "--out", str(out)]) == 0
    rep = fields(capsys.readouterr().out)
    assert float(rep["achieved_variance"]) == pytest.approx(float(rep["min_variance"]), rel=1e-6)
    header, rows = read_csv(out)
    assert header == ["t", "theta", "degenerate"] and len(rows) == 600


def test_simulate_and_tomo(tmp_path, capsys):
    pf = write(tmp_path, "efficiency = 0.8\n")
    out, rec = tmp_path / "mc.csv", tmp_path / "rec.csv"
    assert main(["simulate", pf, "--samples", "150", "--count", "400", "--seed", "3",
                 "--out", str(out), "--record", str(rec)]) == 0
    assert len(read_csv(rec)[1]) == 150
    capsys.readouterr()
    assert main(["tomo", pf, "--samples", "800"]) == 0
    rep = fields(capsys.readouterr().out)
    assert float(rep["duality_deviation"]) < 0.02
    assert float(rep["comparator_delta"]) == pytest.approx(math.log(2))


def test_byte_identical_across_workers(tmp_path):
    pf = write(tmp_path, "efficiency = 0.8\nthermal_force = 0.1\n")
    outputs = []
    for workers in ("1", "4", "1"):
        out = tmp_path / f"mc{len(outputs)}.csv"
        main(["simulate", pf, "--samples", "120", "--count", "600", "--seed", "21",
              "--workers", workers, "--out", str(out)])
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
