"""Time integration of ``u_t = L u + f(u)`` and trajectory diagnostics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .domain import Field, TorusGrid, fmt
from .errors import BlowUpError, ConfigError, StabilityError
from .kernel import ScaledKernel
from .operator import operator_norm_bound, pairwise_energy
from .spectrum import beta, dense_eigh, wave_vectors

log = logging.getLogger(__name__)

SAMPLES = 2**12
MARGIN = 1.1
ZERO_TOL = 1e-10
SIMPSON_PANELS = 64


class ForceTerm:
    """Reaction term ``f`` with its derivatives and declared zeros.

    ``derivative_bound`` samples ``|f'|`` at 2**12 points of a closed
    interval and adds a 10% safety margin; ``max_abs_derivative`` is the
    same sample maximum without margin.  ``lipschitz`` is a global bound on
    ``|f'|`` when one exists (None means unbounded).
    """

    def __init__(self, f, f_prime, f_second=None, zeros=(), name="custom", lipschitz=None, params=None):
        self.f = f
        self.f_prime = f_prime
        self.f_second = f_second
        self.zeros = sorted(float(z) for z in zeros)
        self.name = name
        self.lipschitz = lipschitz
        self.params = dict(params or {})
        for z in self.zeros:
            val = float(f(np.float64(z)))
            if not abs(val) <= ZERO_TOL:
                raise ConfigError(f"declared zero {z} of force {name!r} has f(z)={val:.3e}")

    # factories -----------------------------------------------------------
    @classmethod
    def zero(cls):
        return cls(
            lambda u: np.zeros_like(np.asarray(u, dtype=float)),
            lambda u: np.zeros_like(np.asarray(u, dtype=float)),
            lambda u: np.zeros_like(np.asarray(u, dtype=float)),
            zeros=(),
            name="zero",
            lipschitz=0.0,
        )

    @classmethod
    def logistic(cls, r=1.0):
        """``f(u) = r u (1 - u)``, zeros 0 and 1."""
        r = float(r)
        return cls(
            lambda u: r * u * (1.0 - u),
            lambda u: r * (1.0 - 2.0 * np.asarray(u, dtype=float)),
            lambda u: np.full_like(np.asarray(u, dtype=float), -2.0 * r),
            zeros=(0.0, 1.0),
            name="logistic",
            params={"r": r},
        )

    @classmethod
    def cubic(cls, a=1.0, b=1.0):
        """``f(u) = a u - b u^3``."""
        a, b = float(a), float(b)
        zeros = [0.0]
        if b != 0 and a / b > 0:
            s = math.sqrt(a / b)
            zeros = [-s, 0.0, s]
        return cls(
            lambda u: a * u - b * u**3,
            lambda u: a - 3.0 * b * np.asarray(u, dtype=float) ** 2,
            lambda u: -6.0 * b * np.asarray(u, dtype=float),
            zeros=zeros,
            name="cubic",
            params={"a": a, "b": b},
        )

    @classmethod
    def sine(cls, c=1.0):
        """``f(u) = c sin(u)``; globally Lipschitz with constant ``|c|``."""
        c = float(c)
        return cls(
            lambda u: c * np.sin(u),
            lambda u: c * np.cos(u),
            lambda u: -c * np.sin(u),
            zeros=(0.0,),
            name="sine",
            lipschitz=abs(c),
            params={"c": c},
        )

    @classmethod
    def table(cls, u, values):
        """Cubic-spline interpolant of tabulated ``(u, f(u))`` pairs.

        Zeros are the real roots of the spline inside the table range.
        """
        u = np.asarray(u, dtype=float)
        values = np.asarray(values, dtype=float)
        order = np.argsort(u)
        u, values = u[order], values[order]
        if u.size < 4 or np.any(np.diff(u) <= 0):
            raise ConfigError("force table needs at least 4 distinct abscissae")
        spline = CubicSpline(u, values, bc_type="natural", extrapolate=True)
        d1, d2 = spline.derivative(1), spline.derivative(2)
        roots = [float(r) for r in spline.roots(extrapolate=False)]
        zeros = sorted({round(r, 14) for r in roots})
        return cls(
            lambda x: spline(x),
            lambda x: d1(x),
            lambda x: d2(x),
            zeros=[z for z in zeros if abs(float(spline(z))) <= ZERO_TOL],
            name="table",
        )

    # derivative envelopes ------------------------------------------------
    @staticmethod
    def _samples(interval):
        a, b = float(min(interval)), float(max(interval))
        return np.array([a]) if a == b else np.linspace(a, b, SAMPLES)

    def max_abs_derivative(self, interval):
        return float(np.max(np.abs(self.f_prime(self._samples(interval)))))

    def derivative_bound(self, interval):
        return MARGIN * self.max_abs_derivative(interval)

    def second_derivative_bound(self, interval):
        x = self._samples(interval)
        if self.f_second is not None:
            vals = self.f_second(x)
        else:
            vals = np.gradient(self.f_prime(x), x) if x.size > 1 else np.zeros(1)
        return MARGIN * float(np.max(np.abs(vals)))

    # energy density ------------------------------------------------------
    @property
    def anchor(self):
        """Base point of the antiderivative: the smallest declared zero, else 0."""
        return self.zeros[0] if self.zeros else 0.0

    def antiderivative(self, u):
        """``F(u) = int_anchor^u f`` by composite Simpson (exact for cubics)."""
        u = np.asarray(u, dtype=float)
        a = self.anchor
        n = SIMPSON_PANELS
        s = np.linspace(0.0, 1.0, 2 * n + 1)
        w = np.ones(2 * n + 1)
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        pts = a + np.multiply.outer(u - a, s)
        return (u - a) / (6.0 * n) * np.sum(self.f(pts) * w, axis=-1)

    def __repr__(self):
        return f"ForceTerm({self.name}, {self.params})"


# --------------------------------------------------------------------------
# time stepping


def _matvec(operator):
    if isinstance(operator.grid, TorusGrid):
        return operator.fast_matvec
    return operator.matvec


def force_interval(force, *arrays):
    """Hull of the given values and the declared zeros."""
    vals = [float(np.min(a)) for a in arrays] + [float(np.max(a)) for a in arrays] + list(force.zeros)
    return min(vals), max(vals)


def stability_bound(operator, force, scheme="rk4", interval=None):
    """Largest admissible ``dt``: ``0.9 / (2 max|b| + L_f)``, times 2.7 for RK4."""
    lf = 0.0 if force.lipschitz == 0.0 else force.derivative_bound(interval if interval else (0.0, 0.0))
    bound = 0.9 / (2.0 * float(np.max(np.abs(operator.deficit))) + lf)
    if scheme == "rk4":
        return 2.7 * bound
    if scheme == "euler":
        return bound
    raise ConfigError(f"unknown scheme {scheme!r}")


@dataclass
class EvolutionTrace:
    grid: object
    times: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    argmax: np.ndarray
    argmin: np.ndarray
    mean: np.ndarray
    deviation: np.ndarray
    dirichlet: np.ndarray
    energy: np.ndarray
    final: Field = None
    snapshots: dict = field(default_factory=dict)
    scheme: str = "rk4"
    dt: float = 0.0

    COLUMNS = ("t", "mu", "nu", "mean", "deviation", "dirichlet", "energy")

    def __len__(self):
        return self.times.size

    @property
    def mass_drift(self):
        return float(np.max(np.abs(self.mean - self.mean[0])))

    def rows(self):
        cols = [self.times, self.mu, self.nu, self.mean, self.deviation, self.dirichlet, self.energy]
        return list(zip(*cols))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([fmt(v) for v in row])


class _Recorder:
    def __init__(self, operator, force, matvec):
        self.op, self.force, self.matvec = operator, force, matvec
        self.grid = operator.grid
        self.rows = []
        self.last = None

    def __call__(self, t, u):
        g = self.grid
        Lu = self.matvec(u)
        m = g.mean(u)
        dirichlet = g.inner(Lu, u)
        energy = -0.5 * dirichlet - g.integrate(self.force.antiderivative(u))
        i_max, i_min = int(np.argmax(u)), int(np.argmin(u))
        self.rows.append((t, u[i_max], u[i_min], i_max, i_min, m, g.norm(u - m), dirichlet, energy))

    def trace(self, **extra):
        cols = list(zip(*self.rows)) if self.rows else [()] * 9
        arr = [np.asarray(c, dtype=float) for c in cols]
        return EvolutionTrace(
            self.grid, arr[0], arr[1], arr[2], arr[3].astype(int), arr[4].astype(int), *arr[5:], **extra
        )


def evolve(operator, force, u0, dt, T, scheme="rk4", record_every=1, snapshots=(), interval=None, check=True):
    """Integrate ``u_t = L u + f(u)`` on ``[0, T]`` with explicit Euler or RK4.

    The final step is shortened when ``T`` is not a multiple of ``dt``.
    ``interval`` fixes the range on which ``|f'|`` is bounded for the step
    size check (default: hull of ``u0`` and the zeros of ``f``).

    Raises
    ------
    StabilityError
        ``dt`` exceeds :func:`stability_bound`.
    BlowUpError
        A non-finite value appeared; carries the last valid time and the
        partial trace.
    """
    if scheme not in ("euler", "rk4"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    if not (dt > 0 and T >= 0):
        raise ConfigError("need dt > 0 and T >= 0")
    grid = operator.grid
    u = (u0.values if isinstance(u0, Field) else grid.check(u0)).astype(float).copy()
    if not np.all(np.isfinite(u)):
        raise ConfigError("initial data is not finite")
    if check:
        bound = stability_bound(operator, force, scheme, interval or force_interval(force, u))
        if dt > bound:
            raise StabilityError(dt, bound)
    L = _matvec(operator)
    f = force.f

    def rhs(v):
        return L(v) + f(v)

    nsteps = max(0, int(math.ceil(T / dt - 1e-9)))
    pending = sorted(float(s) for s in snapshots)
    snaps = {}
    rec = _Recorder(operator, force, L)
    rec(0.0, u)
    while pending and pending[0] <= 0.0:
        snaps[pending.pop(0)] = Field(grid, u)
    with np.errstate(over="ignore", invalid="ignore"):
        _march(rec, snaps, pending, rhs, u, nsteps, dt, T, scheme, record_every, grid)
    return rec.trace(final=Field(grid, rec.last), snapshots=snaps, scheme=scheme, dt=dt)


def _march(rec, snaps, pending, rhs, u, nsteps, dt, T, scheme, record_every, grid):
    t = 0.0
    rec.last = u
    for j in range(1, nsteps + 1):
        t_new = T if j == nsteps else j * dt
        h = t_new - t
        if scheme == "euler":
            u_new = u + h * rhs(u)
        else:
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u_new = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u_new)):
            raise BlowUpError(t, rec.trace(final=Field(grid, u), snapshots=snaps, scheme=scheme, dt=dt))
        u, t = u_new, t_new
        rec.last = u
        if j % record_every == 0 or j == nsteps:
            rec(t, u)
        while pending and pending[0] <= t + 1e-12:
            snaps[pending.pop(0)] = Field(grid, u)


# --------------------------------------------------------------------------
# well-posedness diagnostics


def gronwall_constant(operator, force, T, interval=None):
    """``exp(T (sqrt(2) sup J_eps |Omega|^(1/2) + L_f))``.

    ``L_f`` is the global Lipschitz constant of ``f`` when declared, else
    :meth:`ForceTerm.derivative_bound` on ``interval``.
    """
    if force.lipschitz is not None:
        lf = force.lipschitz
    elif interval is not None:
        lf = force.derivative_bound(interval)
    else:
        raise ConfigError(f"force {force.name!r} has no global bound on f'; pass an interval")
    k_sup = operator.kernel.sup_norm
    return math.exp(T * (math.sqrt(2.0) * k_sup * math.sqrt(operator.grid.volume) + lf))


@dataclass
class DependenceReport:
    distance0: float
    distance_T: float
    constant: float

    @property
    def bound(self):
        return self.constant * self.distance0

    @property
    def holds(self):
        return self.distance_T <= self.bound * (1 + 1e-12) + 1e-15

    @property
    def ratio(self):
        return self.distance_T / self.distance0 if self.distance0 > 0 else 0.0

    @property
    def slack(self):
        return self.bound / self.distance_T if self.distance_T > 0 else math.inf


def continuous_dependence_check(operator, force, u0, v0, T, dt=1e-2, scheme="rk4"):
    """Integrate two solutions and compare ``|u(T) - v(T)|`` with ``C(T) |u0 - v0|``."""
    grid = operator.grid
    a = u0.values if isinstance(u0, Field) else grid.check(u0)
    b = v0.values if isinstance(v0, Field) else grid.check(v0)
    interval = force_interval(force, a, b)
    ua = evolve(operator, force, a, dt, T, scheme, record_every=10**9, interval=interval).final
    ub = evolve(operator, force, b, dt, T, scheme, record_every=10**9, interval=interval).final
    return DependenceReport(
        grid.norm(a - b), grid.norm(ua.values - ub.values), gronwall_constant(operator, force, T, interval)
    )


def invariant_region_monitor(trace, gamma, force):
    """Largest excursion of ``[nu, mu]`` outside ``gamma`` over the trace."""
    u1, u2 = float(gamma[0]), float(gamma[1])
    if not u1 < u2:
        raise ConfigError(f"invariant region needs u1 < u2, got {gamma}")
    for z in (u1, u2):
        if abs(float(force.f(np.float64(z)))) > ZERO_TOL:
            raise ConfigError(f"region endpoint {z} is not a zero of f")
    viol = np.maximum(np.maximum(u1 - trace.nu, trace.mu - u2), 0.0)
    return float(np.max(viol))


def extremum_comparison(trace, force):
    """Worst violations of ``mu' <= f(mu)`` and ``nu' >= f(nu)`` by forward differences."""
    dt = np.diff(trace.times)
    dmu = np.diff(trace.mu) / dt
    dnu = np.diff(trace.nu) / dt
    return (
        float(np.max(dmu - force.f(trace.mu[1:]), initial=0.0)),
        float(np.max(force.f(trace.nu[1:]) - dnu, initial=0.0)),
    )


# --------------------------------------------------------------------------
# convergence to the mean mass


@dataclass
class SigmaReport:
    beta_1: float
    force_bound: float
    sigma: float
    a_1: float = 0.0
    a_2: float = 0.0
    gamma: tuple = None
    norm_bound: float = 0.0

    @property
    def converges(self):
        return self.sigma < 0


def _beta1(source):
    """Largest non-trivial eigenvalue and the operator-norm bound."""
    if isinstance(source, ScaledKernel):
        kmax = 64
        b1 = max(beta(source, k) for k in wave_vectors(source.n, kmax)[1:])
        return b1, 2.0 * source.mass
    op = source
    if isinstance(op.grid, TorusGrid) and op.kernel.mode == "periodic":
        kmax = op.grid.N // 2
        b1 = max(beta(op.kernel, k) for k in wave_vectors(op.grid.n, kmax)[1:])
        return b1, operator_norm_bound(op)
    M = op.size
    shift = 2.0 * float(np.max(np.abs(op.deficit)))
    # push the constant mode to the bottom of the spectrum
    vals = dense_eigh(op.matrix - shift * np.ones((M, M)) / M)
    return float(vals[-1]), operator_norm_bound(op)


def sigma_criterion(source, force, gamma, u0=None):
    """``sigma = 2 (beta_1 + max_gamma |f'|)`` with the decay constants.

    ``source`` is a :class:`DiscreteOperator` or a periodic-mode kernel.
    On the torus ``beta_1`` comes from the analytic eigenvalues, elsewhere
    from the mean-zero part of the dense spectrum.  ``max |f'|`` is the
    sampled maximum over ``gamma`` (no safety margin).
    """
    b1, norm_bound = _beta1(source)
    fb = force.max_abs_derivative(gamma)
    a1 = 0.0
    if u0 is not None:
        grid = u0.grid if isinstance(u0, Field) else source.grid
        v = u0.values if isinstance(u0, Field) else grid.check(u0)
        a1 = grid.norm(v - grid.mean(v))
    return SigmaReport(b1, fb, 2.0 * (b1 + fb), a1, norm_bound * a1 * a1, tuple(gamma), norm_bound)


def fit_rate(times, values, floor=1e-12):
    """Least-squares slope of ``log(values)`` where ``values > floor``."""
    times, values = np.asarray(times), np.abs(np.asarray(values))
    keep = values > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(times[keep], np.log(values[keep]), 1)[0])


@dataclass
class DecayReport:
    worst_ratio: float  # max deviation / (a1 e^{sigma t})
    worst_ratio_half: float  # same against a1 e^{sigma t / 2}
    fitted_rate: float
    tol: float

    @property
    def holds(self):
        return self.worst_ratio <= 1.0 + self.tol

    @property
    def holds_half(self):
        return self.worst_ratio_half <= 1.0 + self.tol


def _ratio(values, bound, floor):
    values = np.abs(values)
    ok_floor = values <= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(ok_floor, 0.0, values / bound)
    return float(np.max(r))


def deviation_decay_check(trace, report, tol=1e-6, floor=1e-12):
    """Compare ``|u - mean|`` with ``a1 e^{sigma t}`` and with ``a1 e^{sigma t/2}``.

    The second envelope is what the energy estimate for the deviation
    actually yields; both are reported.
    """
    t = trace.times
    full = report.a_1 * np.exp(report.sigma * t)
    half = report.a_1 * np.exp(0.5 * report.sigma * t)
    return DecayReport(
        _ratio(trace.deviation, full, floor),
        _ratio(trace.deviation, half, floor),
        fit_rate(t, trace.deviation, floor),
        tol,
    )


def _derivative(times, values):
    """Fourth-order finite differences on a uniform record grid."""
    t = np.asarray(times)
    y = np.asarray(values)
    if t.size < 5:
        raise ConfigError("need at least 5 trace records for the derivative")
    d = np.diff(t)
    if np.max(np.abs(d - d[0])) > 1e-9 * d[0] + 1e-12:
        raise ConfigError("trace records must be uniformly spaced")
    h = d[0]
    out = np.empty_like(y)
    out[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    out[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    out[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    out[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    out[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return out


@dataclass
class MassODEReport:
    residual: np.ndarray
    K: float
    worst_ratio: float  # max residual / (K e^{sigma t}) outside the noise floor
    fitted_rate: float
    sigma: float
    tol: float

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    @property
    def holds(self):
        return self.worst_ratio <= 1.0 + self.tol

    @property
    def rate_ok(self):
        return math.isnan(self.fitted_rate) or self.fitted_rate <= self.sigma + 0.1 * abs(self.sigma)


def mean_mass_ode_residual(trace, force, report, fit_fraction=0.1, tol=1e-6, floor=1e-10):
    """Residual ``|m' - f(m)|`` of the mean-mass ODE along a trace.

    ``K`` is fitted on the first ``fit_fraction`` of the records as the
    largest ``residual e^{-sigma t}``; the envelope ``K e^{sigma t}`` is then
    checked on every record (residuals below ``floor`` count as noise).
    """
    t = trace.times
    res = np.abs(_derivative(t, trace.mean) - force.f(trace.mean))
    n_fit = max(1, int(math.ceil(fit_fraction * t.size)))
    K = float(np.max(res[:n_fit] * np.exp(-report.sigma * t[:n_fit])))
    env = K * np.exp(report.sigma * t)
    worst = _ratio(res, env, floor) if K > 0 else (0.0 if np.all(res <= floor) else math.inf)
    return MassODEReport(res, K, worst, fit_rate(t, res, floor), report.sigma, tol)


@dataclass
class DirichletReport:
    worst_ratio: float
    tol: float

    @property
    def holds(self):
        return self.worst_ratio <= 1.0 + self.tol


def dirichlet_form_check(trace, report, tol=1e-6, floor=1e-14):
    """``|<L u, u>| <= a2 e^{2 sigma t}`` along the trace."""
    env = report.a_2 * np.exp(2.0 * report.sigma * trace.times)
    return DirichletReport(_ratio(trace.dirichlet, env, floor), tol)


# --------------------------------------------------------------------------
# energy


def lyapunov_energy(operator, force, u):
    """``E(u) = 1/4 sum_ij h^n A_ij (u_j - u_i)^2 - sum_i h^n F(u_i)``."""
    v = u.values if isinstance(u, Field) else operator.grid.check(u)
    return pairwise_energy(operator, v) - operator.grid.integrate(force.antiderivative(v))


def energy_gradient_fd(operator, force, u, step=1e-6):
    """Central-difference gradient of :func:`lyapunov_energy`, per unit cell volume.

    Dividing by ``h**n`` makes it comparable node-wise with ``-(L u + f(u))``.
    """
    v = (u.values if isinstance(u, Field) else operator.grid.check(u)).astype(float)
    g = np.empty_like(v)
    for i in range(v.size):
        old = v[i]
        v[i] = old + step
        ep = lyapunov_energy(operator, force, v)
        v[i] = old - step
        em = lyapunov_energy(operator, force, v)
        v[i] = old
        g[i] = (ep - em) / (2 * step)
    return g / operator.grid.cell_volume


def energy_monotone(trace, tol=1e-10):
    """Largest increase of the recorded energy between consecutive records."""
    inc = np.diff(trace.energy)
    return float(np.max(inc, initial=-math.inf)) <= tol, float(np.max(inc, initial=0.0))
