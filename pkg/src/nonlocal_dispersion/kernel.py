"""Dispersal kernels and their scaled/periodized variants.

A :class:`BaseKernel` is a radially symmetric profile ``J(z) = p(|z|)`` with
``J >= 0`` and ``J(0) > 0``.  :class:`ScaledKernel` applies the scaling

    J_eps(z) = C * eps**-(m + n) * J(z / eps)

either on all of R^n (``mode="general"``) or periodized onto the torus
(-pi, pi)^n (``mode="periodic"``), where the normalization ``C`` is the
inverse of half the second moment over the relevant window.

All kernel integrals use composite midpoint quadrature on a dedicated fine
grid that is independent of any simulation grid.  In 1D the grid is split at
the kernel's breakpoints (kinks) so each panel sees a smooth integrand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidKernelError, ModeError

GAUSSIAN_TRUNCATION = 8.0  # standard deviations; tail mass ~1e-15
DEFAULT_QUAD_POINTS = 2**14  # per dimension, 1D
DEFAULT_QUAD_POINTS_2D = 2**10  # per dimension, 2D

GENERAL = "general"
PERIODIC = "periodic"
MODES = (GENERAL, PERIODIC)
SHAPES = ("tent", "gaussian", "tabulated")


class BaseKernel:
    """Radial kernel profile in dimension ``n`` (1 or 2).

    Use the constructors :meth:`tent`, :meth:`gaussian`, :meth:`tabulated`
    or :meth:`from_csv` rather than calling ``__init__`` directly.
    """

    def __init__(self, shape, n, radii, values, support_radius, breakpoints, smooth=None):
        if n not in (1, 2):
            raise InvalidKernelError(f"dimension n={n} not supported (1 or 2)")
        self.shape = shape
        self.n = int(n)
        self._radii = radii
        self._values = values
        self._smooth = smooth
        self.support_radius = float(support_radius)
        # (s, jump) pairs: kink of the profile at radius s with derivative
        # jump J'(s+) - J'(s-) along a ray; s = 0 uses the two-sided jump.
        self.breakpoints = tuple(breakpoints)
        self._validate()

    # -- constructors -------------------------------------------------------

    @classmethod
    def tent(cls, n=1):
        """``J(z) = c_n * max(0, 1 - |z|)`` with unit mass."""
        c = 1.0 if n == 1 else 3.0 / math.pi
        radii = np.array([0.0, 1.0])
        values = np.array([c, 0.0])
        return cls("tent", n, radii, values, 1.0, [(0.0, -2.0 * c), (1.0, c)])

    @classmethod
    def gaussian(cls, n=1):
        """Standard normal density, truncated at ``GAUSSIAN_TRUNCATION``."""
        c = (2.0 * math.pi) ** (-n / 2.0)
        R = GAUSSIAN_TRUNCATION

        def smooth(r):
            return np.where(r <= R, c * np.exp(-0.5 * r * r), 0.0)

        return cls("gaussian", n, None, None, R, [], smooth=smooth)

    @classmethod
    def tabulated(cls, z, values, n=1):
        """Piecewise-linear kernel from samples ``(z_i, J(z_i))``.

        ``z`` must be strictly increasing.  The table is symmetrized by
        averaging ``J(z)`` and ``J(-z)``; values outside the table are zero.
        """
        z = np.asarray(z, dtype=float)
        values = np.asarray(values, dtype=float)
        if z.ndim != 1 or z.shape != values.shape or z.size < 2:
            raise InvalidKernelError("tabulated kernel needs two equal-length columns")
        if np.any(np.diff(z) <= 0):
            raise InvalidKernelError("tabulated z must be strictly increasing")
        if np.any(values < 0):
            raise InvalidKernelError("tabulated kernel has negative values")

        def sym(r):
            return 0.5 * (
                np.interp(r, z, values, left=0.0, right=0.0)
                + np.interp(-r, z, values, left=0.0, right=0.0)
            )

        radii = np.unique(np.concatenate([[0.0], np.abs(z)]))
        prof = sym(radii)
        slopes = np.diff(prof) / np.diff(radii)
        breaks = [(0.0, 2.0 * slopes[0])]
        for k in range(1, radii.size - 1):
            jump = slopes[k] - slopes[k - 1]
            if jump != 0.0:
                breaks.append((float(radii[k]), float(jump)))
        # drop to zero beyond the table: kink only if the end value is zero
        breaks.append((float(radii[-1]), -float(slopes[-1])))
        return cls("tabulated", n, radii, prof, radii[-1], breaks)

    @classmethod
    def from_csv(cls, path, n=1):
        """Load a two-column CSV ``z, J(z)`` (an optional header row is skipped)."""
        zs, js = [], []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    zs.append(float(row[0]))
                    js.append(float(row[1]))
                except (ValueError, IndexError):
                    if zs:
                        raise InvalidKernelError(f"bad kernel table row: {row!r}")
        return cls.tabulated(zs, js, n=n)

    @classmethod
    def from_name(cls, shape, n=1, table=None):
        if shape == "tent":
            return cls.tent(n)
        if shape == "gaussian":
            return cls.gaussian(n)
        if shape == "tabulated":
            if table is None:
                raise InvalidKernelError("tabulated kernel needs a table path")
            return cls.from_csv(table, n)
        raise InvalidKernelError(f"unknown kernel shape {shape!r}")

    # -- evaluation -------------------------------------------------------------

    def profile(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if self._smooth is not None:
            return self._smooth(r)
        return np.interp(r, self._radii, self._values, right=0.0)

    def __call__(self, z):
        """Evaluate at points ``z`` of shape ``(..., n)``; for n=1 elementwise."""
        z = np.asarray(z, dtype=float)
        if self.n == 1:
            return self.profile(z)
        return self.profile(np.sqrt(np.sum(z * z, axis=-1)))

    def _validate(self):
        r = np.linspace(0.0, self.support_radius * 1.1, 4097)
        vals = self.profile(r)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidKernelError(f"{self.shape} kernel takes negative values")
        if not self.profile(0.0) > 0:
            raise InvalidKernelError(f"{self.shape} kernel has J(0) <= 0")

    def __repr__(self):
        return f"BaseKernel({self.shape!r}, n={self.n})"


# -- fine-grid quadrature -------------------------------------------------------


def _segments_midpoint(a, b, cuts, M):
    """Composite midpoint nodes/weights on [a, b], panels aligned with ``cuts``.

    One Richardson step (rules with k and 2k panels per segment, combined as
    (4*I_2k - I_k)/3) removes the h^2 error term, so smooth pieces integrate
    to O(h^4) and cubic pieces exactly.
    """
    edges = np.unique(np.concatenate([[a, b], [c for c in cuts if a < c < b]]))
    total = b - a
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(2, int(round(M * (hi - lo) / total)))
        for panels, factor in ((k, -1.0 / 3.0), (2 * k, 4.0 / 3.0)):
            dx = (hi - lo) / panels
            nodes.append(lo + dx * (np.arange(panels) + 0.5))
            weights.append(np.full(panels, factor * dx))
    return np.concatenate(nodes), np.concatenate(weights)


def _periodized(base, w, period):
    """Sum of lattice images of ``base`` at points ``w`` (shape (..., n))."""
    R = base.support_radius
    L = int(math.ceil((R + 0.5 * period) / period))
    shifts = np.arange(-L, L + 1) * period
    out = np.zeros(w.shape[:-1])
    if base.n == 1:
        for s in shifts:
            out += base.profile(w[..., 0] + s)
        return out
    # images whose support misses the sample window contribute nothing
    lo, hi = w.min(axis=tuple(range(w.ndim - 1))), w.max(axis=tuple(range(w.ndim - 1)))

    def gap(s, d):
        return max(lo[d] + s, -(hi[d] + s), 0.0)

    for s1 in shifts:
        for s2 in shifts:
            if math.hypot(gap(s1, 0), gap(s2, 1)) > R:
                continue
            out += base.profile(np.hypot(w[..., 0] + s1, w[..., 1] + s2))
    return out


@dataclass(frozen=True)
class _Quadrature:
    nodes: np.ndarray  # (Q, n) in kernel units (z / eps for periodic mode)
    weights: np.ndarray  # (Q,)
    values: np.ndarray  # base (or periodized base) at nodes

    def integrate(self, g=None):
        if g is None:
            return float(np.dot(self.weights, self.values))
        return float(np.dot(self.weights, self.values * g))


def _build_quadrature(base, mode, epsilon, points):
    n = base.n
    if mode == GENERAL:
        half = base.support_radius
        period = None
    else:
        period = 2.0 * math.pi / epsilon
        half = 0.5 * period
    if n == 1:
        cuts = []
        for s, _ in base.breakpoints:
            for p in (s, -s):
                if period is None:
                    cuts.append(p)
                else:
                    L = int(math.ceil((abs(p) + half) / period))
                    cuts.extend(p + l * period for l in range(-L, L + 1))
        x, wts = _segments_midpoint(-half, half, cuts, points)
        nodes = x[:, None]
    else:
        dx = 2.0 * half / points
        x = -half + dx * (np.arange(points) + 0.5)
        X, Y = np.meshgrid(x, x, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
        wts = np.full(nodes.shape[0], dx * dx)
    if period is None:
        values = base(nodes[:, 0] if n == 1 else nodes)
    else:
        values = _periodized(base, nodes, period)
    return _Quadrature(nodes, wts, values)


def normalization_constant(base, mode=GENERAL, epsilon=1.0, points=None):
    """Inverse of half the second moment of ``base``.

    In general mode the moment is over R^n (the kernel support) and does not
    depend on ``epsilon``; in periodic mode it is over the window
    (-pi/eps, pi/eps)^n of the periodized kernel.
    """
    if mode not in MODES:
        raise ModeError(f"unknown kernel mode {mode!r}")
    if points is None:
        points = DEFAULT_QUAD_POINTS if base.n == 1 else DEFAULT_QUAD_POINTS_2D
    q = _build_quadrature(base, mode, epsilon, points)
    moment = q.integrate(np.sum(q.nodes**2, axis=-1))
    if not moment > 0:
        raise InvalidKernelError("kernel has zero second moment")
    return 2.0 / moment


@dataclass(frozen=True)
class ScaledKernel:
    """Scaled kernel ``J_eps``; immutable once built."""

    base: BaseKernel
    epsilon: float
    m: float
    mode: str = GENERAL
    norm_const: float = None
    quad_points: int = None
    _q: _Quadrature = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidKernelError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.m <= 2.0:
            raise InvalidKernelError(f"m must lie in [0, 2], got {self.m}")
        if self.mode not in MODES:
            raise ModeError(f"unknown kernel mode {self.mode!r}")
        pts = self.quad_points
        if pts is None:
            pts = DEFAULT_QUAD_POINTS if self.base.n == 1 else DEFAULT_QUAD_POINTS_2D
            object.__setattr__(self, "quad_points", pts)
        q = _build_quadrature(self.base, self.mode, self.epsilon, pts)
        object.__setattr__(self, "_q", q)
        if self.norm_const is None:
            moment = q.integrate(np.sum(q.nodes**2, axis=-1))
            if not moment > 0:
                raise InvalidKernelError("kernel has zero second moment")
            object.__setattr__(self, "norm_const", 2.0 / moment)
        elif self.norm_const < 0:
            raise InvalidKernelError("norm_const must be non-negative")

    @property
    def n(self):
        return self.base.n

    @property
    def periodic(self):
        return self.mode == PERIODIC

    @property
    def amplitude(self):
        """Prefactor ``C * eps**-(m+n)`` in front of ``J(z/eps)``."""
        return self.norm_const * self.epsilon ** (-(self.m + self.n))

    def __call__(self, z):
        return eval_scaled(self, z)

    @cached_property
    def sup_norm(self):
        """``max J_eps`` sampled on the fine quadrature grid and at 0."""
        at0 = float(self(np.zeros(self.n) if self.n > 1 else 0.0))
        return max(at0, self.amplitude * float(np.max(self._q.values)))

    @cached_property
    def mass(self):
        """Integral of ``J_eps`` over R^n (general) or the torus (periodic)."""
        return self.norm_const * self.epsilon ** (-self.m) * self._q.integrate()

    def breakpoints_1d(self):
        """Kinks of ``J_eps`` in x-space as ``(position, derivative jump)``.

        Periodic mode wraps positions into [-pi, pi).  1D only.
        """
        if self.n != 1:
            return []
        jump_scale = self.amplitude / self.epsilon
        out = []
        for s, jump in self.base.breakpoints:
            positions = (0.0,) if s == 0 else (s * self.epsilon, -s * self.epsilon)
            for p in positions:
                if self.periodic:
                    p = math.remainder(p, 2.0 * math.pi)
                    if p >= math.pi:
                        p -= 2.0 * math.pi
                out.append((p, jump * jump_scale))
        return out

    def window_integral(self, g=None):
        """Integral over the quadrature window (kernel units) of J (or J_per) times g.

        ``g`` is either an array on the quadrature nodes or a callable of the
        nodes (shape (Q, n)).
        """
        if callable(g):
            g = g(self._q.nodes)
        return self._q.integrate(g)

    @property
    def quadrature_nodes(self):
        return self._q.nodes


def wrap_torus(z):
    """Reduce coordinates into [-pi, pi]; exact and odd in z."""
    period = 2.0 * math.pi
    r = np.fmod(np.asarray(z, dtype=float), period)
    r = np.where(r > math.pi, r - period, r)
    return np.where(r < -math.pi, r + period, r)


def eval_scaled(kernel, z):
    """Evaluate ``J_eps`` at ``z``; periodic mode wraps z into (-pi, pi]^n."""
    z = np.asarray(z, dtype=float)
    if kernel.norm_const == 0:
        return np.zeros(z.shape if kernel.n == 1 else z.shape[:-1])
    eps = kernel.epsilon
    if kernel.mode == GENERAL:
        vals = kernel.base(z / eps)
    else:
        w = wrap_torus(z) / eps
        if kernel.n == 1:
            vals = _periodized(kernel.base, w[..., None], 2.0 * math.pi / eps)
        else:
            vals = _periodized(kernel.base, w, 2.0 * math.pi / eps)
    return kernel.amplitude * vals


def fourier_coefficient(kernel, k, tol=1e-9):
    """``int_{T^n} J_eps(z) exp(i k.z) dz`` for a periodic kernel (real by symmetry)."""
    if kernel.mode != PERIODIC:
        raise ModeError("Fourier coefficients need a periodic-mode kernel")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.size != kernel.n:
        raise ModeError(f"wave vector {k} does not match dimension {kernel.n}")
    phase = kernel.epsilon * (kernel.quadrature_nodes @ k)
    scale = kernel.norm_const * kernel.epsilon ** (-kernel.m)
    re = scale * kernel.window_integral(np.cos(phase))
    im = scale * kernel.window_integral(np.sin(phase))
    if abs(im) > tol * max(1.0, abs(re), kernel.mass):
        raise InvalidKernelError(f"imaginary part {im:.3e} of Fourier coefficient exceeds tolerance")
    return re


def moment_integrals(kernel):
    """``(int J_per, int J_per |z|^2)`` over the kernel window, in kernel units."""
    q = kernel._q
    return q.integrate(), q.integrate(np.sum(q.nodes**2, axis=-1))
