"""Command-line front end.

    nonlocal-dispersion SCENARIO --config run.cfg [--out DIR] [--seed N] [--force]

Scenarios: kernel, spectrum, asymptotics, evolve, steady, bifurcate, and
``validate`` (dry run of the configured scenario).  Every run writes its
CSV tables and a flat ``manifest`` (``key = value``) into the output
directory.  Exit status: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCENARIOS, RunConfig, _fmt_value
from .domain import MaskedGrid, TorusGrid, fmt, read_field_csv, write_field_csv
from .dynamics import (
    ForceTerm,
    energy_monotone,
    evolve,
    force_interval,
    invariant_region_monitor,
    sigma_criterion,
    stability_bound,
)
from .equilibria import (
    JumpTemplate,
    bifurcation_scan,
    continue_branch,
    contraction_conditions,
    linear_stability,
    linearized_decay_test,
    solve_discontinuous,
    write_steady_csv,
)
from .errors import ConfigError, DispersionError, NumericalError
from .kernel import BaseKernel, ScaledKernel, eval_scaled, fourier_coefficient
from .operator import assemble, boundary_deficit, dump_matrix_csv
from .spectrum import asymptotic_scan, classify_spectrum, essential_range

log = logging.getLogger("nonlocal_dispersion")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# --------------------------------------------------------------------------
# builders


def build_kernel(cfg):
    table = cfg.path("kernel.table") if cfg["kernel.shape"] == "table" else None
    base = BaseKernel.from_name(cfg["kernel.shape"], cfg["kernel.n"], table)
    return ScaledKernel(
        base,
        cfg["kernel.epsilon"],
        cfg["kernel.m"],
        cfg["kernel.mode"],
        norm_const=cfg["kernel.norm_const"],
        quad_points=cfg["kernel.quad_points"],
    )


def build_grid(cfg):
    if cfg["domain.kind"] == "torus":
        return TorusGrid(cfg["domain.N"], cfg["kernel.n"])
    box, h = cfg["domain.box"], cfg["domain.h"]
    if box is None or h is None:
        raise ConfigError("box domains need domain.box and domain.h")
    mask = cfg["domain.mask"]
    if mask in ("all", "disk"):
        return MaskedGrid.from_predicate(box, h, mask)
    return MaskedGrid.from_mask_csv(box, h, cfg.path("domain.mask"))


def build_force(cfg):
    shape = cfg["force.shape"]
    if shape == "zero":
        return ForceTerm.zero()
    if shape == "logistic":
        return ForceTerm.logistic(cfg["force.r"])
    if shape == "cubic":
        return ForceTerm.cubic(cfg["force.a"], cfg["force.b"])
    if shape == "sine":
        return ForceTerm.sine(cfg["force.c"])
    path = cfg.path("force.table")
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    return ForceTerm.table(data[:, 0], data[:, 1])


def build_initial(cfg, grid, rng):
    kind = cfg["ic.kind"]
    if kind == "constant":
        return grid.constant(cfg["ic.value"])
    if kind == "cosine":
        k = cfg["ic.k"]
        return grid.sample(lambda x, *rest: cfg["ic.mean"] + cfg["ic.amplitude"] * np.cos(k * x))
    if kind == "random":
        return grid.field(rng.uniform(cfg["ic.low"], cfg["ic.high"], grid.size))
    return read_field_csv(grid, cfg.path("ic.path"))


# --------------------------------------------------------------------------
# scenarios; each returns a dict of headline numbers for the manifest


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (fmt(v) if isinstance(v, float) else v) for v in row])


def run_kernel(cfg, out, rng, force_flag):
    kernel = build_kernel(cfg)
    head = {"norm_const": kernel.norm_const, "sup_norm": kernel.sup_norm}
    if kernel.periodic:
        half = math.pi
    else:
        half = kernel.base.support_radius * kernel.epsilon
    if kernel.n == 1:
        z = np.linspace(-half, half, 2001)
        _write_rows(out / "kernel.csv", ["z", "J_eps"], zip(z.tolist(), eval_scaled(kernel, z).tolist()))
    if kernel.periodic:
        head["mass"] = kernel.mass
        if kernel.n == 1:
            kmax = cfg["kernel.k_max"]
            rows = [(k, fourier_coefficient(kernel, k)) for k in range(kmax + 1)]
            _write_rows(out / "fourier.csv", ["k", "J_hat"], rows)
            head["J_hat_1"] = rows[1][1] if kmax >= 1 else None
    return head


def run_spectrum(cfg, out, rng, force_flag):
    kernel, grid = build_kernel(cfg), build_grid(cfg)
    op = assemble(kernel, grid)
    if cfg["spectrum.dump_matrix"]:
        dump_matrix_csv(op, out / "matrix.csv")
    rep = classify_spectrum(op, cfg["spectrum.k_max"], cfg["spectrum.delta_class"])
    _write_rows(out / "spectrum.csv", ["k", "beta_analytic", "beta_numeric", "abs_err", "class"], rep.rows())
    head = {
        "essential_min": rep.essential_range[0],
        "essential_max": rep.essential_range[1],
        "delta_class": rep.delta_class,
        "isolated": len(rep.isolated),
    }
    if rep.matches:
        head["max_abs_err"] = rep.max_match_error()
        head["beta_1"] = max(b for k, b in rep.analytic if k != 0)
        head["beta_infinity"] = rep.beta_infinity
        head["rho"] = rep.rho
    return head


def run_asymptotics(cfg, out, rng, force_flag):
    kernel = build_kernel(cfg)
    m = cfg.get("asymptotics.m", cfg["kernel.m"])
    rows = asymptotic_scan(
        kernel.base, cfg["asymptotics.k"], m, cfg["asymptotics.epsilons"], cfg["kernel.quad_points"]
    )
    _write_rows(
        out / "asymptotics.csv",
        ["epsilon", "k", "beta", "predicted", "error", "ratio", "warning"],
        [(r.epsilon, r.k, r.beta, r.predicted, r.error, r.ratio, r.warning) for r in rows],
    )
    return {"rows": len(rows), "last_error": rows[-1].error if rows else None}


def run_evolve(cfg, out, rng, force_flag):
    kernel, grid, force = build_kernel(cfg), build_grid(cfg), build_force(cfg)
    op = assemble(kernel, grid)
    u0 = build_initial(cfg, grid, rng)
    tr = evolve(
        op,
        force,
        u0,
        cfg["evolve.dt"],
        cfg["evolve.T"],
        cfg["evolve.scheme"],
        cfg["evolve.record_every"],
        cfg["evolve.snapshots"],
    )
    tr.to_csv(out / "trace.csv")
    for i, (t, snap) in enumerate(sorted(tr.snapshots.items())):
        write_field_csv(snap, out / f"snapshot_{i:03d}.csv")
    _, inc = energy_monotone(tr)
    head = {
        "mass_drift": tr.mass_drift,
        "records": len(tr),
        "energy_final": float(tr.energy[-1]),
        "energy_max_increase": inc,
    }
    gamma = cfg["evolve.gamma"]
    if gamma is not None:
        head["invariant_violation"] = invariant_region_monitor(tr, gamma, force)
        rep = sigma_criterion(op, force, gamma, u0)
        head.update(beta_1=rep.beta_1, sigma=rep.sigma, a_1=rep.a_1, a_2=rep.a_2)
    return head


def _steady_setup(cfg):
    kernel, grid, force = build_kernel(cfg), build_grid(cfg), build_force(cfg)
    op = assemble(kernel, grid)
    tpl = JumpTemplate.split(grid, cfg["steady.u1"], cfg["steady.u2"], cfg["steady.R"], cfg["steady.threshold"])
    return op, force, tpl


def run_steady(cfg, out, rng, force_flag):
    op, force, tpl = _steady_setup(cfg)
    res = solve_discontinuous(op, force, tpl, cfg["steady.tol"], cfg["steady.max_iter"], force_override=force_flag)
    stab = linear_stability(op, force, res.U)
    res.gamma0 = stab.gamma0
    write_steady_csv(res, out / "steady.csv")
    head = dict(res.summary())
    head["rayleigh_bound"] = stab.rayleigh_bound
    noise = cfg["steady.noise"]
    if noise > 0 and stab.gamma0 < 0:
        psi0 = noise * rng.standard_normal(op.size)
        dec = linearized_decay_test(op, force, res.U, psi0)
        head.update(linear_bound_ratio=dec.worst_ratio, return_distance=dec.return_distance)
    if not res.converged:
        raise NumericalError(res.message)
    return head


def run_bifurcate(cfg, out, rng, force_flag):
    kernel, grid, force = build_kernel(cfg), build_grid(cfg), build_force(cfg)
    op = assemble(kernel, grid)
    u_star = cfg["branch.u_star"]
    crit = bifurcation_scan(op, force, u_star, (cfg["branch.k_min"], cfg["branch.k_max"]))
    _write_rows(
        out / "critical.csv",
        ["lambda_c", "beta", "multiplicity", "wavenumber"],
        [(c.lam, c.beta, c.multiplicity, c.wavenumber) for c in crit],
    )
    if not crit:
        raise NumericalError("no critical values in the requested window")
    c0 = min(crit, key=lambda c: abs(c.lam))
    br = continue_branch(
        op,
        force,
        u_star,
        c0,
        steps=cfg["branch.steps"],
        amplitude=cfg["branch.amplitude"],
        ds=cfg["branch.ds"],
        ds_max=cfg["branch.ds_max"],
    )
    br.to_csv(out / "branch.csv")
    head = {"lambda_c": c0.lam, "points": len(br), "truncated": br.truncated, "max_residual": br.max_residual}
    if len(br):
        head.update(final_amplitude=br.points[-1].amplitude, onset_r2=br.onset_r_squared())
    return head


def validate(cfg, out, rng, force_flag):
    """Check the configuration without running the scenario."""
    scenario = cfg.scenario
    head = {"scenario": scenario}
    kernel = build_kernel(cfg)
    head["norm_const"] = kernel.norm_const
    if scenario in ("kernel", "asymptotics"):
        return head
    grid = build_grid(cfg)
    lo, hi = essential_range(kernel, grid)
    head.update(essential_min=lo, essential_max=hi, essential_width=hi - lo)
    force = build_force(cfg)
    b = boundary_deficit(kernel, grid).values
    head["coupling"] = 2.0 * float(np.max(np.abs(b)))
    if scenario == "evolve":
        op = assemble(kernel, grid)
        u0 = build_initial(cfg, grid, rng)
        bound = stability_bound(op, force, cfg["evolve.scheme"], force_interval(force, u0.values))
        head["dt_bound"] = bound
        head["dt_ok"] = cfg["evolve.dt"] <= bound
        gamma = cfg["evolve.gamma"]
        if gamma is not None:
            head["sigma"] = sigma_criterion(op, force, gamma, u0).sigma
        if not head["dt_ok"]:
            raise ConfigError(f"evolve.dt={cfg['evolve.dt']:g} exceeds stability bound {bound:.6g}")
    if scenario == "steady":
        op, force, tpl = _steady_setup(cfg)
        cert = contraction_conditions(force, tpl, op)
        head.update(cond1_margin=cert.cond1_margin, cond2_margin=cert.cond2_margin, certificate=cert.positive)
        if not cert.positive:
            print(
                f"contraction certificate fails: cond1_margin={cert.cond1_margin:.6g}, "
                f"cond2_margin={cert.cond2_margin:.6g}",
                file=sys.stderr,
            )
    return head


RUNNERS = {
    "kernel": run_kernel,
    "spectrum": run_spectrum,
    "asymptotics": run_asymptotics,
    "evolve": run_evolve,
    "steady": run_steady,
    "bifurcate": run_bifurcate,
}


# --------------------------------------------------------------------------


def write_manifest(path, cfg, command, head, wall):
    lines = [f"command = {command}", f"version = {__version__}"]
    lines.append(f"python = {platform.python_version()}")
    lines.append(f"numpy = {np.__version__}")
    try:
        import scipy

        lines.append(f"scipy = {scipy.__version__}")
    except ImportError:  # pragma: no cover
        pass
    lines.append(f"wall_time = {wall:.3f}")
    for key, value in head.items():
        lines.append(f"result.{key} = {_fmt_value(value) if not isinstance(value, float) else fmt(value)}")
    lines.extend(f"config.{ln}" for ln in cfg.to_text().splitlines())
    Path(path).write_text("\n".join(lines) + "\n")


def parse_args(argv):
    p = argparse.ArgumentParser(prog="nonlocal-dispersion", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=[*SCENARIOS, "validate"])
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    p.add_argument("--force", action="store_true", help="run the fixed-point solver without a certificate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.set("run.seed", args.seed)
        if args.command != "validate":
            cfg.set("run.scenario", args.command)
        elif cfg.scenario is None:
            raise ConfigError("validate needs run.scenario in the config")
        out = Path(args.out if args.out else cfg["run.out"])
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(cfg.seed)
        runner = validate if args.command == "validate" else RUNNERS[args.command]
        head = runner(cfg, out, rng, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DispersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out / "manifest", cfg, args.command, head, time.perf_counter() - t0)
    for key, value in head.items():
        print(f"{key} = {value}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
