"""Heterogeneous steady states.

Two constructions:

* jump equilibria ``L U + f(U) = 0`` near a piecewise-constant template
  whose values are zeros of ``f``, found by a certified fixed-point
  iteration when the coupling is weak;
* branches of ``L U + f(U) = lam U`` emanating from a constant zero
  ``u*`` where ``L + f'(u*) - lam`` becomes singular, traced by
  pseudo-arclength continuation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Field, TorusGrid, fmt
from .dynamics import evolve, fit_rate, force_interval
from .errors import CertificateError, ConfigError, NumericalError
from .operator import operator_norm_bound
from .spectrum import dense_eigh

log = logging.getLogger(__name__)


def _vals(u, grid):
    return u.values if isinstance(u, Field) else grid.check(u)


# --------------------------------------------------------------------------
# jump equilibria


@dataclass
class JumpTemplate:
    """Piecewise-constant field: ``u1`` where ``labels`` is False, ``u2`` where True."""

    grid: object
    labels: np.ndarray
    u1: float
    u2: float
    R: float

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=bool)
        if lab.shape != (self.grid.size,):
            raise ConfigError("template labels must cover every grid node")
        if lab.all() or not lab.any():
            raise ConfigError("both template regions must be non-empty")
        if not self.R >= 0:
            raise ConfigError("template radius R must be non-negative")
        self.labels = lab

    @classmethod
    def split(cls, grid, u1, u2, R, threshold=0.0, axis=0):
        """``u1`` for ``x[axis] < threshold``, ``u2`` otherwise."""
        return cls(grid, grid.coords[:, axis] >= threshold, float(u1), float(u2), float(R))

    def field(self):
        return Field(self.grid, np.where(self.labels, self.u2, self.u1))

    def interval(self):
        lo, hi = min(self.u1, self.u2), max(self.u1, self.u2)
        return lo - self.R, hi + self.R


@dataclass
class ContractionCertificate:
    cond1_margin: float
    cond2_margin: float
    coupling: float  # C(L) = 2 max |b|
    inv_fprime: float  # max 1/|f'| over the template values
    fprime_bound: float
    fsecond_bound: float

    @property
    def positive(self):
        return self.cond1_margin > 0 and self.cond2_margin > 0

    @property
    def contraction_constant(self):
        return 1.0 - self.cond2_margin


def _template_slopes(force, template):
    d = np.array([float(force.f_prime(np.float64(template.u1))), float(force.f_prime(np.float64(template.u2)))])
    for z in (template.u1, template.u2):
        if abs(float(force.f(np.float64(z)))) > 1e-10:
            raise ConfigError(f"template value {z} is not a zero of f")
    if np.any(d == 0):
        raise ZeroDivisionError("f' vanishes at a template value")
    return d


def contraction_conditions(force, template, operator):
    """Margins of the two inequalities that certify the fixed-point map.

    ``cond1 = R - |1/f'(U~)| (C (|U~| + R) + |f''| R^2)`` makes the map send
    the R-ball into itself; ``cond2 = 1 - |1/f'(U~)| (C + 2 |f'| R)`` makes it
    a contraction.  ``C = 2 max|b|`` is the computed norm bound of the
    operator, and the derivative bounds are sampled (with margin) on
    ``[min(u1,u2) - R, max(u1,u2) + R]``.
    """
    slopes = _template_slopes(force, template)
    inv = float(np.max(1.0 / np.abs(slopes)))
    C = operator_norm_bound(operator)
    interval = template.interval()
    f1 = force.derivative_bound(interval)
    f2 = force.second_derivative_bound(interval)
    R = template.R
    u_sup = max(abs(template.u1), abs(template.u2))
    cond1 = R - inv * (C * (u_sup + R) + f2 * R * R)
    cond2 = 1.0 - inv * (C + 2.0 * f1 * R)
    return ContractionCertificate(cond1, cond2, C, inv, f1, f2)


@dataclass
class SteadyStateResult:
    U: Field
    residual_inf: float
    iterations: int
    certificate: ContractionCertificate
    observed_ratio: float
    converged: bool
    phi_inf: float
    gamma0: float = None
    message: str = ""

    @property
    def contraction(self):
        c = self.certificate
        return {"cond1_margin": c.cond1_margin, "cond2_margin": c.cond2_margin, "observed_ratio": self.observed_ratio}

    def summary(self):
        c = self.certificate
        return {
            "residual_inf": self.residual_inf,
            "iterations": self.iterations,
            "converged": self.converged,
            "observed_ratio": self.observed_ratio,
            "cond1_margin": c.cond1_margin,
            "cond2_margin": c.cond2_margin,
            "coupling": c.coupling,
            "phi_inf": self.phi_inf,
            "gamma0": self.gamma0,
        }


def steady_residual(operator, force, U, lam=0.0):
    v = _vals(U, operator.grid)
    return float(np.max(np.abs(operator.matvec(v) + force.f(v) - lam * v)))


def solve_discontinuous(operator, force, template, tol=1e-12, max_iter=500, force_override=False):
    """Fixed-point iteration ``phi <- F(phi)`` around a jump template.

    ``F(phi) = -(L(U~ + phi) + f(U~ + phi) - f(U~) - f'(U~) phi) / f'(U~)``;
    a fixed point gives ``U = U~ + phi`` with ``L U + f(U) = 0``.

    Raises
    ------
    CertificateError
        Certificate not positive (or ``m = 0``) and no override given.
    """
    grid = operator.grid
    cert = contraction_conditions(force, template, operator)
    if not force_override:
        if not cert.positive:
            raise CertificateError(cert.cond1_margin, cert.cond2_margin)
        if operator.kernel.m <= 0 and operator.kernel.norm_const > 0:
            raise CertificateError(cert.cond1_margin, cert.cond2_margin)
    Ut = template.field().values
    fp = force.f_prime(Ut)
    fU = force.f(Ut)
    phi = np.zeros(grid.size)
    if np.max(np.abs(operator.matvec(Ut) + fU)) <= tol:
        return SteadyStateResult(Field(grid, Ut), steady_residual(operator, force, Ut), 0, cert, 0.0, True, 0.0)

    def F(p):
        v = Ut + p
        return -(operator.matvec(v) + force.f(v) - fU - fp * p) / fp

    prev_step, ratio, converged, it = None, 0.0, False, 0
    for it in range(1, max_iter + 1):
        new = F(phi)
        step = float(np.max(np.abs(new - phi)))
        if prev_step is not None and prev_step > 1e3 * np.finfo(float).eps and step > 0:
            ratio = max(ratio, step / prev_step)
        phi, prev_step = new, step
        if not np.all(np.isfinite(phi)):
            raise NumericalError(f"fixed-point iterate became non-finite at iteration {it}")
        if step <= tol:
            converged = True
            break
    U = Field(grid, Ut + phi)
    res = steady_residual(operator, force, U)
    msg = "" if converged else f"no convergence in {max_iter} iterations (last step {prev_step:.3e})"
    if msg:
        log.warning(msg)
    return SteadyStateResult(U, res, it, cert, ratio, converged, float(np.max(np.abs(phi))), message=msg)


@dataclass
class StabilityReport:
    gamma0: float
    rayleigh_bound: float  # max_i f'(U_i)
    eigvec: np.ndarray

    @property
    def rayleigh_ok(self):
        return self.gamma0 <= self.rayleigh_bound + 1e-10 * max(1.0, abs(self.rayleigh_bound))


def _linearization(operator, force, U):
    v = _vals(U, operator.grid)
    return operator.matrix + np.diag(force.f_prime(v)), force.f_prime(v)


def linear_stability(operator, force, U):
    """Top eigenvalue ``gamma0`` of ``A + diag(f'(U))`` and the bound ``max f'(U)``."""
    J, fp = _linearization(operator, force, U)
    vals, vecs = dense_eigh(J, vectors=True)
    rep = StabilityReport(float(vals[-1]), float(np.max(fp)), vecs[:, -1])
    if not rep.rayleigh_ok:
        raise NumericalError(f"gamma0={rep.gamma0:.6g} exceeds max f'(U)={rep.rayleigh_bound:.6g}")
    return rep


@dataclass
class LinearDecayReport:
    times: np.ndarray
    norm_sq: np.ndarray
    gamma0: float
    worst_ratio: float  # max |psi|^2 / (|psi0|^2 e^{gamma0 t})
    worst_ratio_sharp: float  # same against e^{2 gamma0 t}
    fitted_rate: float  # of |psi|
    return_distance: float
    tol: float

    @property
    def holds(self):
        return self.worst_ratio <= 1.0 + self.tol


def linearized_decay_test(operator, force, U, psi0, T=None, dt=None, tol=1e-6, nonlinear=True):
    """Integrate ``psi_t = (L + f'(U)) psi`` and check ``|psi|^2 <= |psi0|^2 e^{gamma0 t}``.

    With ``nonlinear`` the full flow from ``U + psi0`` is also run and its
    distance to ``U`` at time ``T`` reported.  Default ``T = 10/|gamma0|``.
    """
    grid = operator.grid
    Uv = _vals(U, grid)
    p = _vals(psi0, grid).astype(float).copy()
    J, fp = _linearization(operator, force, Uv)
    gamma0 = float(dense_eigh(J)[-1])
    if not gamma0 < 0:
        raise ConfigError(f"linearization is not stable (gamma0={gamma0:.6g})")
    if T is None:
        T = 10.0 / abs(gamma0)
    spread = 2.0 * float(np.max(np.abs(operator.deficit))) + float(np.max(np.abs(fp)))
    if dt is None:
        dt = min(0.5 * 2.7 * 0.9 / spread, T / 400.0)
    n = int(math.ceil(T / dt - 1e-9))
    h = T / n
    times = np.linspace(0.0, T, n + 1)
    norms = np.empty(n + 1)
    norms[0] = grid.inner(p, p)
    for j in range(1, n + 1):
        k1 = J @ p
        k2 = J @ (p + 0.5 * h * k1)
        k3 = J @ (p + 0.5 * h * k2)
        k4 = J @ (p + h * k3)
        p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        norms[j] = grid.inner(p, p)
    n0 = norms[0]
    if n0 == 0:
        worst = sharp = 0.0
    else:
        worst = float(np.max(norms / (n0 * np.exp(gamma0 * times))))
        sharp = float(np.max(norms / (n0 * np.exp(2.0 * gamma0 * times))))
    rate = 0.5 * fit_rate(times, norms, floor=1e-300) if n0 > 0 else float("nan")
    dist = float("nan")
    if nonlinear:
        start = Uv + _vals(psi0, grid)
        tr = evolve(operator, force, start, h, T, "rk4", record_every=10**9, interval=force_interval(force, start))
        dist = grid.norm(tr.final.values - Uv)
    return LinearDecayReport(times, norms, gamma0, worst, sharp, rate, dist, tol)


def write_steady_csv(result, path):
    """Field dump ``index, coords..., value`` of the equilibrium."""
    g = result.U.grid
    names = ["x", "y"][: g.n]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *names, "value"])
        for i in range(g.size):
            w.writerow([i, *(fmt(c) for c in g.coords[i]), fmt(result.U.values[i])])


# --------------------------------------------------------------------------
# bifurcation


@dataclass
class CriticalValue:
    lam: float
    beta: float
    multiplicity: int
    wavenumber: object  # dominant torus wave number, None on masked grids
    vectors: np.ndarray  # (size, multiplicity) orthonormal eigenvectors


def _wavenumber(grid, vec):
    if not isinstance(grid, TorusGrid):
        return None
    spec = np.abs(np.fft.fftn(vec.reshape(grid.shape)))
    idx = np.unravel_index(int(np.argmax(spec)), spec.shape)
    k = tuple(int(i if i <= grid.N // 2 else i - grid.N) for i in idx)
    k = tuple(-c for c in k) if k < tuple(-c for c in k) else k
    return k[0] if grid.n == 1 else k


def bifurcation_scan(operator, force, u_star, k_window=(1, 8), rel_tol=1e-8):
    """Parameters ``lam`` where ``L + f'(u*) - lam`` is singular.

    Eigenvalues of ``A`` are grouped into clusters (relative gap
    ``rel_tol``); each cluster gives ``lam_c = beta + f'(u*)``.  On the
    torus clusters are filtered by their dominant wave number ``|k|`` in
    ``k_window``; on masked grids ``k_window`` selects cluster ranks below
    the top one.  Results are ordered by decreasing ``lam_c``.
    """
    if abs(float(force.f(np.float64(u_star)))) > 1e-10:
        raise ConfigError(f"u*={u_star} is not a zero of f")
    shift = float(force.f_prime(np.float64(u_star)))
    vals, vecs = dense_eigh(operator.matrix, vectors=True)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    scale = max(1.0, float(np.max(np.abs(vals))))
    groups, start = [], 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[start] - vals[i] > rel_tol * scale:
            groups.append((start, i))
            start = i
    out = []
    for rank, (a, b) in enumerate(groups):
        beta_val = float(np.mean(vals[a:b]))
        V = vecs[:, a:b]
        wn = _wavenumber(operator.grid, V[:, 0])
        key = rank if wn is None else max(abs(c) for c in np.atleast_1d(wn))
        if k_window[0] <= key <= k_window[1]:
            out.append(CriticalValue(beta_val + shift, beta_val, b - a, wn, V))
    return out


@dataclass
class BranchPoint:
    lam: float
    U: Field
    amplitude: float
    residual: float
    step: int = 0

    @property
    def lambda_(self):
        return self.lam


@dataclass
class Branch:
    points: list
    lambda_c: float
    u_star: float
    truncated: bool = False
    message: str = ""
    newton_iterations: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def amplitudes(self):
        return np.array([p.amplitude for p in self.points])

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    @property
    def max_residual(self):
        return max((p.residual for p in self.points), default=0.0)

    def onset_r_squared(self, max_amplitude=None):
        """R^2 of the linear fit ``amplitude^2 ~ lam`` (points with amplitude <= max_amplitude)."""
        a, lam = self.amplitudes, self.lambdas
        if max_amplitude is not None:
            keep = a <= max_amplitude
            a, lam = a[keep], lam[keep]
        if a.size < 3:
            return float("nan")
        y = a**2
        coef = np.polyfit(lam, y, 1)
        ss_res = float(np.sum((y - np.polyval(coef, lam)) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        return 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "lambda", "amplitude", "residual"])
            for i, p in enumerate(self.points):
                w.writerow([i, fmt(p.lam), fmt(p.amplitude), fmt(p.residual)])


def _branch_directions(operator, critical):
    """Even (cos-like) direction of the critical eigenspace and, for a pair, its partner."""
    V = critical.vectors
    if V.shape[1] == 1:
        return V[:, 0], None
    grid = operator.grid
    if isinstance(grid, TorusGrid) and critical.wavenumber is not None:
        kv = np.atleast_1d(critical.wavenumber).astype(float)
        probe = np.cos(grid.coords @ kv)
    else:
        probe = V[:, 0]
    v = V @ (V.T @ probe)
    v /= np.linalg.norm(v)
    w = V[:, 1] - v * (v @ V[:, 1])
    if np.linalg.norm(w) < 1e-8:
        w = V[:, 0] - v * (v @ V[:, 0])
    return v, w / np.linalg.norm(w)


def continue_branch(
    operator,
    force,
    u_star,
    critical,
    steps=20,
    amplitude=1e-2,
    ds=0.05,
    ds_max=0.25,
    ds_min=1e-5,
    tol=1e-11,
    max_newton=25,
):
    """Trace non-constant solutions of ``L U + f(U) = lam U`` from ``(u*, lam_c)``.

    The first two points are fixed by the projection of ``U - u*`` on the
    critical eigenvector (``amplitude`` and twice it); later points use
    pseudo-arclength steps with secant tangents.  Newton solves the
    bordered system by least squares, with an extra phase row when the
    critical eigenvalue is double, so the shift degeneracy on the torus
    does not stall it.  Failed steps are halved down to ``ds_min``; below
    that the branch is truncated.  Points are returned ordered towards the
    bifurcation point, so the tail approaches ``(u*, lam_c)``.
    """
    grid = operator.grid
    A = operator.matrix
    M = grid.size
    lam_c = critical.lam
    v, w = _branch_directions(operator, critical)
    base = np.full(M, float(u_star))

    def G(U, lam):
        return A @ U + force.f(U) - lam * U

    def newton(U, lam, extra_row, extra_rhs):
        for it in range(1, max_newton + 1):
            r = G(U, lam)
            rows = [np.hstack([A + np.diag(force.f_prime(U) - lam), -U[:, None]])]
            rhs = [r]
            rows.append(extra_row[None, :])
            rhs.append([extra_rhs(U, lam)])
            if w is not None:
                rows.append(np.hstack([w, 0.0])[None, :])
                rhs.append([w @ (U - base)])
            J = np.vstack(rows)
            delta = np.linalg.lstsq(J, -np.concatenate([np.ravel(x) for x in rhs]), rcond=None)[0]
            U = U + delta[:M]
            lam = lam + delta[M]
            if not np.all(np.isfinite(U)):
                return None
            if float(np.max(np.abs(G(U, lam)))) <= tol and float(np.max(np.abs(delta))) <= 1e-8:
                return U, lam, it
        return None

    points, iters = [], []
    for s in (amplitude, 2 * amplitude):
        row = np.hstack([v, 0.0])
        sol = newton(base + s * v, lam_c, row, lambda U, lam, s=s: v @ (U - base) - s)
        if sol is None:
            return Branch([], lam_c, u_star, True, f"Newton failed at initial amplitude {s:g}")
        points.append((sol[0], sol[1]))
        iters.append(sol[2])

    truncated, message = False, ""
    h = ds
    while len(points) < steps:
        X1 = np.hstack(points[-1])
        X0 = np.hstack(points[-2])
        tau = X1 - X0
        tau /= np.linalg.norm(tau)
        pred = X1 + h * tau
        sol = newton(pred[:M].copy(), pred[M], tau, lambda U, lam: tau @ (np.hstack([U, lam]) - pred))
        if sol is None:
            h *= 0.5
            if h < ds_min:
                truncated, message = True, f"step size fell below {ds_min:g} after {len(points)} points"
                log.warning(message)
                break
            continue
        points.append((sol[0], sol[1]))
        iters.append(sol[2])
        h = min(1.5 * h, ds_max)

    out = []
    for i, (U, lam) in enumerate(points):
        out.append(
            BranchPoint(
                float(lam),
                Field(grid, U),
                grid.norm(U - base),
                float(np.max(np.abs(G(U, lam)))),
                i,
            )
        )
    out.reverse()
    return Branch(out, lam_c, float(u_star), truncated, message, iters[::-1])
