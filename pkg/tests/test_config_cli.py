import os

import pytest

from nonlocal_dispersion.cli import main
from nonlocal_dispersion.config import SCHEMA, RunConfig
from nonlocal_dispersion.errors import ConfigError

SPECTRUM = """\
# tent kernel on the torus
kernel.shape = tent
kernel.epsilon = 1.0
domain.kind = torus
domain.N = 256
spectrum.k_max = 8
"""

EVOLVE = """\
kernel.shape = tent
domain.N = 128
force.shape = zero
ic.kind = random
ic.low = 0
ic.high = 1
evolve.dt = 0.01
evolve.T = 10
evolve.record_every = 50
evolve.snapshots = 0.5, 1.0
"""

STEADY = """\
kernel.shape = tent
kernel.mode = general
kernel.norm_const = 12
kernel.m = 1
kernel.epsilon = {eps}
domain.kind = box
domain.box = -1, 1
domain.h = 0.01
force.shape = cubic
force.a = 1
force.b = 1
steady.R = 0.14
steady.noise = 1e-3
run.scenario = steady
"""

BIFURCATE = """\
kernel.shape = tent
domain.N = 128
force.shape = cubic
force.a = 0.96726
force.b = 1
branch.steps = 12
"""


def run(tmp_path, text, command, *extra, name="run"):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(text)
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def manifest(out):
    rows = {}
    for line in (out / "manifest").read_text().splitlines():
        k, v = line.split(" = ", 1)
        rows[k] = v
    return rows


# -- config ------------------------------------------------------------------


def test_parse_values_and_comments():
    cfg = RunConfig.parse("kernel.epsilon = 0.5  # half\n\ndomain.box = -1, 1; 0, 2\nevolve.gamma = 0, 1\n")
    assert cfg["kernel.epsilon"] == 0.5
    assert cfg["domain.box"] == [(-1.0, 1.0), (0.0, 2.0)]
    assert cfg["evolve.gamma"] == (0.0, 1.0)
    assert cfg["kernel.shape"] == SCHEMA["kernel.shape"][1]


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="kernel.epsilonn"):
        RunConfig.parse("kernel.epsilonn = 1\n")
    with pytest.raises(ConfigError, match="kernel.mode"):
        RunConfig.parse("kernel.mode = sideways\n")
    with pytest.raises(ConfigError, match="line 1"):
        RunConfig.parse("just words\n")


def test_manifest_round_trip(tmp_path):
    text = SPECTRUM + "domain.box = -1, 1; 0, 2\nevolve.snapshots = 0.1, 0.25\nspectrum.dump_matrix = true\n"
    cfg = RunConfig.parse(text)
    echoed = "".join(f"config.{ln}\n" for ln in cfg.to_text().splitlines())
    assert RunConfig.from_manifest("command = x\n" + echoed) == cfg


def test_relative_paths_resolve_against_config(tmp_path):
    (tmp_path / "t.cfg").write_text("kernel.table = data/k.csv\n")
    cfg = RunConfig.load(tmp_path / "t.cfg")
    assert cfg.path("kernel.table") == tmp_path / "data" / "k.csv"


# -- scenarios ---------------------------------------------------------------


def test_spectrum_scenario(tmp_path):
    code, out = run(tmp_path, SPECTRUM, "spectrum")
    assert code == 0
    m = manifest(out)
    assert float(m["result.max_abs_err"]) <= 1e-3
    assert m["command"] == "spectrum" and "config.domain.N = 256" in (out / "manifest").read_text()
    assert RunConfig.from_manifest((out / "manifest").read_text())["domain.N"] == 256
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header == "k,beta_analytic,beta_numeric,abs_err,class"


def test_evolve_conserves_and_is_deterministic(tmp_path):
    code, a = run(tmp_path, EVOLVE, "evolve", "--seed", "5", name="a")
    assert code == 0
    assert float(manifest(a)["result.mass_drift"]) <= 1e-12
    code, b = run(tmp_path, EVOLVE, "evolve", "--seed", "5", name="b")
    assert code == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs == ["snapshot_000.csv", "snapshot_001.csv", "trace.csv"]
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, c = run(tmp_path, EVOLVE, "evolve", "--seed", "6", name="c")
    assert (a / "trace.csv").read_bytes() != (c / "trace.csv").read_bytes()


def test_kernel_and_asymptotics(tmp_path):
    code, out = run(tmp_path, SPECTRUM, "kernel", name="k")
    assert code == 0 and (out / "kernel.csv").exists() and (out / "fourier.csv").exists()
    code, out = run(tmp_path, "kernel.m = 2\n", "asymptotics", name="asy")
    assert code == 0
    rows = (out / "asymptotics.csv").read_text().splitlines()
    assert len(rows) == 4
    ratios = [float(r.split(",")[5]) for r in rows[2:]]
    assert all(3 <= r <= 5.3 for r in ratios)


def test_steady_scenario(tmp_path):
    code, out = run(tmp_path, STEADY.format(eps=200), "steady")
    assert code == 0
    m = manifest(out)
    assert float(m["result.residual_inf"]) <= 1e-8
    assert float(m["result.gamma0"]) <= -1.2
    assert float(m["result.cond1_margin"]) > 0
    assert float(m["result.return_distance"]) <= 1e-6


def test_steady_without_certificate(tmp_path, capsys):
    code, _ = run(tmp_path, STEADY.format(eps=1), "steady")
    assert code == 2
    assert "cond1_margin" in capsys.readouterr().err


def test_bifurcate_scenario(tmp_path):
    code, out = run(tmp_path, BIFURCATE, "bifurcate")
    assert code == 0
    m = manifest(out)
    assert abs(float(m["result.lambda_c"])) <= 1e-3
    assert float(m["result.max_residual"]) <= 1e-8
    assert (out / "branch.csv").read_text().startswith("step,lambda,amplitude,residual\n")


def test_bifurcate_empty_window_is_numerical_failure(tmp_path):
    code, _ = run(tmp_path, BIFURCATE + "branch.k_min = 200\nbranch.k_max = 201\n", "bifurcate")
    assert code == 3


# -- validate ----------------------------------------------------------------


def test_validate_steady_flags_failure(tmp_path, capsys):
    code, out = run(tmp_path, STEADY.format(eps=1), "validate")
    assert code == 0
    m = manifest(out)
    assert float(m["result.cond1_margin"]) < 0
    assert m["result.certificate"] == "false"
    assert "certificate fails" in capsys.readouterr().err


def test_validate_torus_essential_range(tmp_path):
    code, out = run(tmp_path, EVOLVE + "run.scenario = evolve\nevolve.gamma = 0, 1\n", "validate")
    assert code == 0
    m = manifest(out)
    assert float(m["result.essential_width"]) == 0.0
    assert m["result.dt_ok"] == "true"
    assert "result.sigma" in m


def test_validate_rejects_large_dt(tmp_path, capsys):
    text = EVOLVE.replace("evolve.dt = 0.01", "evolve.dt = 5") + "run.scenario = evolve\n"
    code, _ = run(tmp_path, text, "validate")
    assert code == 2
    assert "stability bound" in capsys.readouterr().err


def test_validate_needs_scenario(tmp_path):
    assert run(tmp_path, SPECTRUM, "validate")[0] == 2


# -- errors and output hygiene ----------------------------------------------


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, "bogus.key = 1\n", "spectrum")[0] == 2
    assert "bogus.key" in capsys.readouterr().err
    code = main(["spectrum", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert run(tmp_path, "domain.kind = box\n", "spectrum", name="nobox")[0] == 2


def test_writes_stay_in_output_dir(tmp_path):
    before = set(os.listdir(tmp_path))
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        code, out = run(tmp_path, EVOLVE, "evolve")
    finally:
        os.chdir(cwd)
    assert code == 0
    assert set(os.listdir(tmp_path)) - before == {"run", "run.cfg"}
    assert {p.name for p in out.iterdir()} == {"manifest", "trace.csv", "snapshot_000.csv", "snapshot_001.csv"}
