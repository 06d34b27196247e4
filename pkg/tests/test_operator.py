import math

import numpy as np
import pytest

from conftest import tent_beta
from nonlocal_dispersion.domain import MaskedGrid, TorusGrid
from nonlocal_dispersion.errors import ModeError, ShapeError
from nonlocal_dispersion.kernel import BaseKernel, ScaledKernel
from nonlocal_dispersion.operator import (
    apply,
    apply_fast,
    assemble,
    boundary_deficit,
    dirichlet_form,
    dump_matrix_csv,
    kernel_weights,
    operator_norm_bound,
    pairwise_energy,
)


@pytest.fixture(scope="module")
def tent_general_half(tent):
    return ScaledKernel(tent, 0.5, 0.0, "general")


def test_torus_deficit_constant(tent_periodic, torus256):
    b = boundary_deficit(tent_periodic, torus256).values
    assert np.allclose(b, -12.0, atol=1e-6)
    assert np.ptp(b) == 0.0


def test_masked_deficit_interior_and_edge(tent_general_half):
    g = MaskedGrid([(-1.0, 1.0)], 5e-4)
    b = boundary_deficit(tent_general_half, g).values
    centre = int(np.argmin(np.abs(g.coords[:, 0])))
    assert b[centre] == pytest.approx(-12.0, abs=1e-6)
    assert b[-1] == pytest.approx(-6.0, abs=1e-2)
    assert b[0] == pytest.approx(-6.0, abs=1e-2)
    assert np.all(b <= 0)


def test_deficit_matches_assembled_rows(tent_general_half):
    g = MaskedGrid([(-1, 1), (-1, 1)], 0.1, lambda x, y: x * x + y * y < 1)
    k = ScaledKernel(BaseKernel.tent(2), 0.5, 0.0, "general")
    op = assemble(k, g)
    assert np.allclose(op.deficit, boundary_deficit(k, g).values, rtol=1e-13, atol=0)


def test_constants_are_annihilated(op256):
    c = 3.7
    out = apply(op256, op256.grid.constant(c)).values
    assert np.max(np.abs(out)) <= 1e-12 * c * 12


def test_masked_rows_sum_to_zero(tent_general_half):
    op = assemble(tent_general_half, MaskedGrid([(-1.0, 1.0)], 0.01))
    rows = np.abs(op.matrix.sum(axis=1))
    assert np.all(rows <= 1e-12 * np.abs(op.matrix).sum(axis=1))


@pytest.mark.parametrize("k,phase", [(1, np.cos), (3, np.sin), (5, np.cos)])
def test_trigonometric_eigenfunctions(op256, k, phase):
    g = op256.grid
    u = g.sample(lambda x: phase(k * x))
    assert np.max(np.abs(apply(op256, u).values - tent_beta(k) * u.values)) <= 1e-4
    assert np.max(np.abs(apply_fast(op256.kernel, g, u).values - tent_beta(k) * u.values)) <= 1e-4


def test_beta_values_quoted():
    assert tent_beta(1) == pytest.approx(-0.96726, abs=1e-5)
    assert tent_beta(3) == pytest.approx(-6.6933, abs=1e-4)


def test_fast_path_matches_dense(op256, rng):
    u = rng.normal(size=256)
    diff = np.max(np.abs(op256.fast_matvec(u) - op256.matvec(u)))
    assert diff <= 1e-10 * np.max(np.abs(u))
    assert np.max(np.abs(apply_fast(op256.kernel, op256.grid, np.ones(256)))) <= 1e-12


def test_fast_path_torus_only(tent_general_half):
    g = MaskedGrid([(-1.0, 1.0)], 0.1)
    with pytest.raises(ModeError):
        apply_fast(tent_general_half, g, g.constant(1.0))


def test_mode_pairing_enforced(tent_periodic, tent_general_half):
    with pytest.raises(ModeError):
        assemble(tent_general_half, TorusGrid(16))
    with pytest.raises(ModeError):
        assemble(tent_periodic, MaskedGrid([(-1.0, 1.0)], 0.1))


def test_shape_mismatch(op256):
    with pytest.raises(ShapeError):
        apply(op256, TorusGrid(16).constant(1.0))


def test_operator_norm_bound_examples(op256, tent):
    assert operator_norm_bound(op256) == pytest.approx(24.0, abs=1e-6)
    k = ScaledKernel(tent, 200.0, 1.0, "general", norm_const=12.0)
    bound = operator_norm_bound(assemble(k, MaskedGrid([(-1.0, 1.0)], 0.01)))
    assert 0 < bound <= 0.12
    empty = ScaledKernel(tent, 1.0, 0.0, "periodic", norm_const=0.0)
    assert operator_norm_bound(assemble(empty, TorusGrid(16))) == 0.0


def test_norm_bound_dominates_sup_norm(tent_general_half, rng):
    op = assemble(tent_general_half, MaskedGrid([(-1.0, 1.0)], 0.02))
    induced = np.max(np.abs(op.matrix).sum(axis=1))
    assert induced <= operator_norm_bound(op) * (1 + 1e-12)


def test_dirichlet_identity(op256, rng):
    u = rng.normal(size=256)
    lhs = dirichlet_form(op256, u)
    assert lhs == pytest.approx(-2.0 * pairwise_energy(op256, u), rel=1e-10)
    assert lhs <= 0


def test_uncorrected_weights_are_plain_samples(tent_periodic):
    g = TorusGrid(64)
    w = kernel_weights(tent_periodic, g, corrected=False)
    assert w[0] == pytest.approx(g.h * 12.0)
    assert np.all(kernel_weights(tent_periodic, g) >= 0)


def test_matrix_dump(tmp_path, tent_periodic):
    op = assemble(tent_periodic, TorusGrid(4))
    dump_matrix_csv(op, tmp_path / "A.csv")
    rows = (tmp_path / "A.csv").read_text().splitlines()
    assert rows[0] == "row,col,value"
    assert len(rows) == 17
    assert float(rows[2].split(",")[2]) == op.matrix[0, 1]


def test_cos_residual_falls_with_resolution(tent_periodic):
    errs = []
    for N in (64, 128, 256):
        g = TorusGrid(N)
        u = g.sample(np.cos)
        errs.append(np.max(np.abs(apply(assemble(tent_periodic, g), u).values - tent_beta(1) * u.values)))
    assert errs[0] > errs[1] > errs[2]
    assert math.log2(errs[0] / errs[2]) / 2 > 1.5
