"""Spectrum of the dispersion operator: analytic torus eigenpairs, the
essential range of the boundary deficit, dense eigendecomposition with
classification, the limit eigenvalue and small-eps asymptotics."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import TorusGrid
from .errors import DomainError, ModeError, NumericalError
from .kernel import PERIODIC, ScaledKernel, _segments_midpoint, fourier_coefficient, moment_integrals
from .operator import boundary_deficit

log = logging.getLogger(__name__)

NEAR_ESSENTIAL = "near-essential"
ISOLATED = "isolated"


def _require_periodic(kernel):
    if kernel.mode != PERIODIC:
        raise ModeError("analytic eigenvalues need a periodic-mode kernel")


def wave_vectors(n, k_max):
    """Representatives of +-k pairs with max-norm <= k_max (k=0 first)."""
    if n == 1:
        return [(k,) for k in range(k_max + 1)]
    out = []
    for k in itertools.product(range(-k_max, k_max + 1), repeat=n):
        if k == (0,) * n or k > tuple(-c for c in k):
            out.append(k)
    return sorted(out, key=lambda k: (sum(c * c for c in k), k))


def beta(kernel, k):
    """``int J_eps(z) (cos(k.z) - 1) dz`` for one wave vector."""
    _require_periodic(kernel)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if not np.any(k):
        return 0.0
    phase = kernel.epsilon * (kernel.quadrature_nodes @ k)
    scale = kernel.norm_const * kernel.epsilon ** (-kernel.m)
    return scale * kernel.window_integral(np.cos(phase) - 1.0)


def analytic_eigenvalues(kernel, k_max):
    """List of ``(k, beta_k)`` for the torus; ``beta_0 = 0`` exactly."""
    _require_periodic(kernel)
    return [(k if kernel.n > 1 else k[0], beta(kernel, k)) for k in wave_vectors(kernel.n, k_max)]


def eigenfunction(grid, k, phase="cos"):
    """``cos(k.x)`` or ``sin(k.x)`` sampled on a torus grid."""
    if not isinstance(grid, TorusGrid):
        raise ModeError("trigonometric eigenfunctions live on the torus")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != grid.n:
        raise ModeError(f"wave vector {k} does not match dimension {grid.n}")
    arg = grid.coords @ k
    if phase == "cos":
        return grid.field(np.cos(arg))
    if phase == "sin":
        if not np.any(k):
            raise DomainError("sin(0.x) is the zero field")
        return grid.field(np.sin(arg))
    raise ValueError(f"phase must be 'cos' or 'sin', got {phase!r}")


def essential_range(kernel, grid, corrected=True):
    """``[min b, max b]`` over the grid nodes."""
    b = boundary_deficit(kernel, grid, corrected).values
    return float(np.min(b)), float(np.max(b))


@dataclass
class EigenMatch:
    k: object
    beta_analytic: float
    beta_numeric: float
    index: int

    @property
    def abs_err(self):
        return abs(self.beta_numeric - self.beta_analytic)


@dataclass
class SpectralReport:
    essential_range: tuple
    numeric: np.ndarray  # ascending
    classification: list
    delta_class: float
    analytic: list = None
    matches: list = field(default_factory=list)
    beta_infinity: float = None
    rho: float = None

    @property
    def isolated(self):
        return self.numeric[[c == ISOLATED for c in self.classification]]

    def class_of(self, value, tol=1e-8):
        i = int(np.argmin(np.abs(self.numeric - value)))
        if abs(self.numeric[i] - value) > tol:
            raise KeyError(value)
        return self.classification[i]

    def max_match_error(self, k_max=None):
        errs = [m.abs_err for m in self.matches if k_max is None or _kabs(m.k) <= k_max]
        return max(errs) if errs else 0.0

    def rows(self):
        """Rows ``(k, beta_analytic, beta_numeric, abs_err, class)``."""
        if self.matches:
            return [
                (m.k, m.beta_analytic, m.beta_numeric, m.abs_err, self.classification[m.index])
                for m in self.matches
            ]
        order = np.argsort(self.numeric)[::-1]
        return [(int(j), None, float(self.numeric[i]), None, self.classification[i]) for j, i in enumerate(order)]


def _kabs(k):
    return math.sqrt(sum(c * c for c in np.atleast_1d(k)))


def dense_eigh(matrix, vectors=False):
    """Symmetric eigensolve; failures surface with matrix diagnostics."""
    A = np.asarray(matrix)
    try:
        if not np.all(np.isfinite(A)):
            raise np.linalg.LinAlgError("matrix has non-finite entries")
        return np.linalg.eigh(A) if vectors else np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        finite = A[np.isfinite(A)]
        asym = float(np.max(np.abs(A - A.T))) if np.all(np.isfinite(A)) else float("nan")
        raise NumericalError(
            f"eigensolve failed ({exc}); size={A.shape[0]}, "
            f"max|A|={np.max(np.abs(finite)) if finite.size else float('nan'):.3e}, "
            f"asymmetry={asym:.3e}, non-finite={A.size - finite.size}"
        ) from exc


def _match(analytic, numeric):
    """Greedy nearest-distance matching; each k != 0 claims two eigenvalues."""
    slots = []
    for k, b in analytic:
        slots.extend([(k, b)] * (1 if not np.any(k) else 2))
    cand = sorted(
        (abs(numeric[i] - b), s, i) for s, (k, b) in enumerate(slots) for i in range(numeric.size)
    )
    used_s, used_i, out = set(), set(), {}
    for _, s, i in cand:
        if s in used_s or i in used_i:
            continue
        used_s.add(s)
        used_i.add(i)
        out[s] = i
        if len(out) == len(slots):
            break
    return [EigenMatch(slots[s][0], slots[s][1], float(numeric[i]), i) for s, i in sorted(out.items())]


def classify_spectrum(operator, k_max=8, delta_class=None):
    """Dense eigenvalues, classified against the essential range.

    An eigenvalue is near-essential when its distance to ``[min b, max b]``
    is at most ``delta_class`` (default ``10 * h * max|b|``), isolated
    otherwise.  On a torus with a periodic kernel the analytic ``beta_k``
    for ``|k| <= k_max`` are matched to numeric eigenvalues.
    """
    grid, kernel = operator.grid, operator.kernel
    b = operator.deficit
    lo, hi = float(np.min(b)), float(np.max(b))
    if delta_class is None:
        delta_class = 10.0 * grid.h * float(np.max(np.abs(b)))
    numeric = dense_eigh(operator.matrix)
    dist = np.maximum(0.0, np.maximum(lo - numeric, numeric - hi))
    classes = [NEAR_ESSENTIAL if d <= delta_class else ISOLATED for d in dist]
    report = SpectralReport((lo, hi), numeric, classes, delta_class)
    if isinstance(grid, TorusGrid) and kernel.mode == PERIODIC and kernel.norm_const > 0:
        k_max = min(k_max, grid.N // 2 - 1)
        report.analytic = analytic_eigenvalues(kernel, k_max)
        if grid.n == 1:
            report.matches = _match(report.analytic, numeric)
        lim = limit_eigenvalue(kernel)
        report.beta_infinity, report.rho = lim.beta_infinity, lim.rho
    return report


@dataclass
class LimitEigenvalue:
    beta_infinity: float
    rho: float
    identity_value: float  # -2 rho / eps^m
    upper_bound: float  # -eps^(2-m) / pi^2
    lower_bound: float  # -eps^-m, reported only

    @property
    def identity_rel_err(self):
        return abs(self.beta_infinity - self.identity_value) / abs(self.beta_infinity)

    @property
    def upper_ok(self):
        return self.beta_infinity <= self.upper_bound

    @property
    def lower_ok(self):
        return self.lower_bound <= self.beta_infinity


def _torus_mass(kernel, points):
    """``int_{T^n} J_eps(x) dx`` by quadrature in x (independent of the window grid)."""
    if kernel.n == 1:
        cuts = [p for p, _ in kernel.breakpoints_1d()]
        x, w = _segments_midpoint(-math.pi, math.pi, cuts, points)
        return float(np.dot(w, kernel(x)))
    dx = 2.0 * math.pi / points
    x = -math.pi + dx * (np.arange(points) + 0.5)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return float(np.sum(kernel(np.stack([X, Y], axis=-1))) * dx * dx)


def limit_eigenvalue(kernel):
    """``beta_inf = -J^(0)`` with the moment ratio ``rho`` and the bounds."""
    _require_periodic(kernel)
    eps, m = kernel.epsilon, kernel.m
    mass, moment = moment_integrals(kernel)
    rho = mass / moment
    beta_inf = -_torus_mass(kernel, kernel.quad_points)
    return LimitEigenvalue(
        beta_infinity=beta_inf,
        rho=rho,
        identity_value=-2.0 * rho / eps**m,
        upper_bound=-(eps ** (2.0 - m)) / math.pi**2,
        lower_bound=-(eps ** (-m)),
    )


@dataclass
class AsymptoticRow:
    epsilon: float
    k: object
    beta: float
    predicted: float
    ratio: float  # previous error / this error (nan for the first row)
    warning: str = ""

    @property
    def error(self):
        return abs(self.beta - self.predicted)


def asymptotic_scan(base, k, m, epsilons, quad_points=None):
    """``beta_k(eps)`` against the leading-order ``-eps^(2-m) |k|^2 / n``.

    Rows are ordered by decreasing eps; ``ratio`` is the successive ratio of
    errors, about 4 per halving of eps for m = 2.
    """
    kvec = np.atleast_1d(np.asarray(k, dtype=float))
    k2 = float(np.dot(kvec, kvec))
    rows, prev = [], None
    for eps in sorted(epsilons, reverse=True):
        warning = ""
        if eps * base.support_radius >= math.pi:
            warning = f"kernel support {eps * base.support_radius:.3g} exceeds half period"
            log.warning("eps=%g: %s", eps, warning)
        kernel = ScaledKernel(base, eps, m, PERIODIC, quad_points=quad_points)
        b = beta(kernel, kvec)
        pred = -(eps ** (2.0 - m)) * k2 / base.n
        err = abs(b - pred)
        ratio = prev / err if (prev is not None and err > 0) else float("nan")
        rows.append(AsymptoticRow(eps, k, b, pred, ratio, warning))
        prev = err
    return rows


def fourier_table(kernel, k_max):
    """``(k, J^_eps(k))`` for k = 0..k_max (1D)."""
    return [(k, fourier_coefficient(kernel, k)) for k in range(k_max + 1)]
