import numpy as np
import pytest

from conftest import tent_beta
from nonlocal_dispersion.domain import MaskedGrid, TorusGrid
from nonlocal_dispersion.dynamics import ForceTerm, lyapunov_energy
from nonlocal_dispersion.equilibria import (
    JumpTemplate,
    bifurcation_scan,
    continue_branch,
    contraction_conditions,
    linear_stability,
    linearized_decay_test,
    solve_discontinuous,
    steady_residual,
    write_steady_csv,
)
from nonlocal_dispersion.errors import CertificateError, ConfigError
from nonlocal_dispersion.kernel import ScaledKernel
from nonlocal_dispersion.operator import assemble

CUBIC = ForceTerm.cubic(1.0, 1.0)


@pytest.fixture(scope="module")
def box():
    return MaskedGrid([(-1.0, 1.0)], 0.01)


def _op(tent, box, eps, m=1.0, c=12.0):
    return assemble(ScaledKernel(tent, eps, m, "general", norm_const=c), box)


@pytest.fixture(scope="module")
def weak(tent, box):
    return _op(tent, box, 200.0)


@pytest.fixture(scope="module")
def template(box):
    return JumpTemplate.split(box, -1.0, 1.0, 0.14)


@pytest.fixture(scope="module")
def solved(weak, template):
    return solve_discontinuous(weak, CUBIC, template)


def test_template_validation(box):
    with pytest.raises(ConfigError):
        JumpTemplate.split(box, -1.0, 1.0, 0.1, threshold=5.0)
    with pytest.raises(ConfigError):
        JumpTemplate(box, np.ones(box.size - 1, bool), -1.0, 1.0, 0.1)
    tpl = JumpTemplate.split(box, -1.0, 1.0, 0.1)
    assert np.array_equal(np.unique(tpl.field().values), [-1.0, 1.0])


def test_certificate_examples(tent, box, weak, template):
    cert = contraction_conditions(CUBIC, template, weak)
    assert cert.positive
    assert 0 < cert.coupling <= 0.12
    strong = contraction_conditions(CUBIC, template, _op(tent, box, 1.0))
    assert strong.cond1_margin < 0
    flat = JumpTemplate.split(box, -1.0, 1.0, 0.0)
    c0 = contraction_conditions(CUBIC, flat, weak)
    assert c0.cond1_margin == pytest.approx(-0.5 * c0.coupling * 1.0, rel=1e-12)
    assert c0.cond1_margin < 0


def test_certificate_needs_nonzero_slopes(box, weak):
    f = ForceTerm(lambda u: u**2 * (u - 1), lambda u: 3 * u**2 - 2 * u, zeros=[0.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        contraction_conditions(f, JumpTemplate.split(box, 0.0, 1.0, 0.1), weak)


def test_certified_solve(solved, weak):
    assert solved.converged
    assert solved.residual_inf <= 1e-8
    assert solved.phi_inf <= 0.14
    assert solved.observed_ratio <= solved.certificate.contraction_constant
    assert steady_residual(weak, CUBIC, solved.U) == solved.residual_inf


def test_certificate_required(tent, box, template):
    with pytest.raises(CertificateError):
        solve_discontinuous(_op(tent, box, 1.0), CUBIC, template)
    with pytest.raises(CertificateError):
        solve_discontinuous(_op(tent, box, 200.0, m=0.0), CUBIC, template)


def test_override_reports_nonconvergence(tent, box, template):
    res = solve_discontinuous(_op(tent, box, 20.0), CUBIC, template, max_iter=3, force_override=True)
    assert not res.converged
    assert "no convergence" in res.message


def test_decoupled_limit(tent, box, template):
    op = assemble(ScaledKernel(tent, 200.0, 1.0, "general", norm_const=0.0), box)
    res = solve_discontinuous(op, CUBIC, template)
    assert res.iterations == 0
    assert np.array_equal(res.U.values, template.field().values)


def test_homogeneous_template(box, weak):
    tpl = JumpTemplate.split(box, 1.0, 1.0, 0.1)
    res = solve_discontinuous(weak, CUBIC, tpl)
    assert res.iterations == 0
    assert np.all(res.U.values == 1.0)


def test_stability_of_jump_state(solved, weak):
    rep = linear_stability(weak, CUBIC, solved.U)
    assert rep.rayleigh_ok
    assert rep.gamma0 <= rep.rayleigh_bound + 1e-10
    assert rep.rayleigh_bound <= 1 - 3 * 0.86**2
    assert rep.gamma0 <= -1.2


def test_stability_spectral_shift(op256):
    g = op256.grid
    c = -0.7
    lin = ForceTerm(lambda u: c * u, lambda u: np.full_like(np.asarray(u, float), c), zeros=[0.0])
    assert linear_stability(op256, lin, g.constant(0.0)).gamma0 == pytest.approx(c, abs=1e-10)
    rep = linear_stability(op256, CUBIC, g.constant(1.0))
    assert rep.gamma0 == pytest.approx(-2.0, abs=1e-10)


def test_linearized_decay(solved, weak, rng):
    psi0 = 1e-3 * rng.normal(size=weak.size)
    rep = linearized_decay_test(weak, CUBIC, solved.U, psi0)
    assert rep.holds
    assert rep.return_distance <= 1e-6
    zero = linearized_decay_test(weak, CUBIC, solved.U, np.zeros(weak.size), nonlinear=False)
    assert np.all(zero.norm_sq == 0.0)
    top = linear_stability(weak, CUBIC, solved.U).eigvec
    rep = linearized_decay_test(weak, CUBIC, solved.U, top, nonlinear=False)
    assert rep.fitted_rate == pytest.approx(rep.gamma0, rel=0.02)


def test_jump_state_is_local_energy_minimum(solved, weak):
    rng = np.random.default_rng(7)
    E0 = lyapunov_energy(weak, CUBIC, solved.U)
    for _ in range(50):
        d = rng.normal(size=weak.size)
        d /= np.max(np.abs(d))
        for s in (-1e-3, -1e-4, 1e-4, 1e-3):
            assert lyapunov_energy(weak, CUBIC, solved.U.values + s * d) >= E0 - 1e-10


def test_steady_csv(solved, tmp_path):
    write_steady_csv(solved, tmp_path / "steady.csv")
    lines = (tmp_path / "steady.csv").read_text().splitlines()
    assert lines[0] == "index,x,value"
    assert len(lines) == solved.U.grid.size + 1


# -- bifurcation -------------------------------------------------------------


def test_scan_detects_first_mode(op256):
    a = -tent_beta(1)
    crit = bifurcation_scan(op256, ForceTerm.cubic(a, 1.0), 0.0)
    assert crit[0].wavenumber == 1 and crit[0].multiplicity == 2
    assert abs(crit[0].lam) <= 1e-3


def test_scan_with_flat_slope_returns_eigenvalues(op256):
    crit = bifurcation_scan(op256, ForceTerm.cubic(0.0, 1.0), 0.0, k_window=(1, 4))
    assert [c.wavenumber for c in crit] == [1, 2, 3, 4]
    for c in crit:
        assert c.lam == pytest.approx(tent_beta(c.wavenumber), abs=1e-3)


def test_scan_second_mode(op256):
    crit = bifurcation_scan(op256, ForceTerm.cubic(-tent_beta(2), 1.0), 0.0, k_window=(2, 2))
    assert len(crit) == 1 and abs(crit[0].lam) <= 1e-3


def test_scan_rejects_non_zero(op256):
    with pytest.raises(ConfigError):
        bifurcation_scan(op256, CUBIC, 0.5)


@pytest.fixture(scope="module")
def branch(op256):
    f = ForceTerm.cubic(-tent_beta(1), 1.0)
    crit = bifurcation_scan(op256, f, 0.0)[0]
    return f, crit, continue_branch(op256, f, 0.0, crit)


def test_branch_approaches_onset(branch):
    f, crit, br = branch
    assert not br.truncated and len(br) >= 10
    assert br.max_residual <= 1e-8
    amps = br.amplitudes
    assert np.all(amps > 0)
    assert np.all(np.diff(amps) < 0)
    assert amps[-1] <= 1e-2
    assert abs(br.points[-1].lam - crit.lam) <= 1e-3
    assert br.onset_r_squared() >= 0.99


def test_branch_states_are_cosine_shaped(branch, op256):
    _, _, br = branch
    u = br.points[len(br) // 2].U.values
    x = op256.grid.coords[:, 0]
    c = np.dot(u, np.cos(x)) / np.dot(np.cos(x), np.cos(x))
    assert np.max(np.abs(u - c * np.cos(x))) <= 0.1 * abs(c)


def test_shifted_branch_state_is_a_solution(branch, op256):
    f, _, br = branch
    p = br.points[3]
    shifted = op256.grid.roll(p.U.values, 17)
    r0 = steady_residual(op256, f, p.U, p.lam)
    r1 = steady_residual(op256, f, shifted, p.lam)
    assert abs(r1 - r0) <= 1e-13


def test_constant_branch(op256):
    f = ForceTerm.logistic()
    u = op256.grid.constant(1.0)
    assert steady_residual(op256, f, u, 0.0) <= 1e-13
    g = ForceTerm.cubic(2.0, 1.0)
    u_star = 0.5
    lam = float(g.f(u_star)) / u_star
    assert steady_residual(op256, g, op256.grid.constant(u_star), lam) <= 1e-13


def test_branch_csv(branch, tmp_path):
    _, _, br = branch
    br.to_csv(tmp_path / "branch.csv")
    lines = (tmp_path / "branch.csv").read_text().splitlines()
    assert lines[0] == "step,lambda,amplitude,residual"
    assert len(lines) == len(br) + 1
