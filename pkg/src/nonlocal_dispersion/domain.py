"""Uniform grids on the torus and masked boxes, fields, and quadrature.

Nodes are stored in row-major order (last coordinate fastest).  Every
included node carries the cell weight ``h**n``; integrals are midpoint sums.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError


class Grid:
    """Common interface of :class:`TorusGrid` and :class:`MaskedGrid`."""

    kind = None
    n: int
    h: float
    coords: np.ndarray  # (size, n) node coordinates
    index: np.ndarray  # (size, n) integer lattice indices

    @property
    def size(self):
        return self.coords.shape[0]

    @property
    def cell_volume(self):
        return self.h**self.n

    @property
    def volume(self):
        return self.size * self.cell_volume

    def _key(self):
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, Grid) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    # quadrature on raw arrays; the Field-level functions below wrap these
    def check(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise ShapeError(f"field has {values.shape[0]} values, grid has {self.size} nodes")
        return values

    def integrate(self, values):
        return float(np.sum(self.check(values), axis=0) * self.cell_volume)

    def mean(self, values):
        return self.integrate(values) / self.volume

    def inner(self, a, b):
        return float(np.dot(self.check(a), self.check(b)) * self.cell_volume)

    def norm(self, values):
        v = self.check(values)
        scale = float(np.max(np.abs(v))) if v.size else 0.0
        if scale == 0.0 or not math.isfinite(scale):
            return scale
        w = v / scale  # avoids under/overflow of the squares
        return scale * math.sqrt(float(np.dot(w, w)) * self.cell_volume)

    def field(self, values):
        return Field(self, np.asarray(values, dtype=float))

    def sample(self, func):
        """Field from ``func(x)`` (1D: x is an array of coordinates) or ``func(x, y)``."""
        cols = [self.coords[:, d] for d in range(self.n)]
        return self.field(np.broadcast_to(func(*cols), (self.size,)).astype(float))

    def constant(self, c):
        return self.field(np.full(self.size, float(c)))


class TorusGrid(Grid):
    """``N`` points per dimension on (-pi, pi)^n, spacing ``2*pi/N``.

    Node coordinates are ``-pi + j*h`` for ``j = 0..N-1``; for even ``N`` the
    origin is a node.
    """

    kind = "torus"

    def __init__(self, N, n=1):
        if N < 2:
            raise DomainError("torus grid needs N >= 2")
        if n not in (1, 2):
            raise DomainError(f"dimension n={n} not supported")
        self.N = int(N)
        self.n = int(n)
        self.h = 2.0 * math.pi / self.N
        axes = [np.arange(self.N)] * self.n
        idx = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
        self.index = idx
        self.coords = -math.pi + self.h * idx.astype(float)

    @property
    def volume(self):
        return (2.0 * math.pi) ** self.n

    @property
    def shape(self):
        return (self.N,) * self.n

    def _key(self):
        return ("torus", self.N, self.n)

    def roll(self, values, shift):
        """Circular shift of a field by ``shift`` nodes (int or per-axis tuple)."""
        v = self.check(values).reshape(self.shape)
        axes = tuple(range(self.n))
        shift = (shift,) * self.n if np.isscalar(shift) else tuple(shift)
        return np.roll(v, shift, axis=axes).ravel()

    def __repr__(self):
        return f"TorusGrid(N={self.N}, n={self.n})"


class MaskedGrid(Grid):
    """Cell-centred grid on a box, restricted to the nodes inside a domain."""

    kind = "box"

    def __init__(self, box, h, mask=None):
        box = [tuple(map(float, b)) for b in box]
        if not box or len(box) > 2:
            raise DomainError("box must have 1 or 2 axes")
        counts = []
        for a, b in box:
            if not b > a:
                raise DomainError(f"degenerate box axis ({a}, {b})")
            c = int(round((b - a) / h))
            if c < 1 or abs(c * h - (b - a)) > 1e-9 * (b - a):
                raise DomainError(f"spacing h={h} does not divide box axis ({a}, {b})")
            counts.append(c)
        self.box = tuple(box)
        self.n = len(box)
        self.h = float(h)
        self.shape = tuple(counts)
        axes = [np.arange(c) for c in counts]
        full = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
        lower = np.array([a for a, _ in box])
        full_coords = lower + self.h * (full + 0.5)
        if mask is None:
            keep = np.ones(full.shape[0], dtype=bool)
        elif callable(mask):
            keep = np.asarray(mask(*[full_coords[:, d] for d in range(self.n)]), dtype=bool)
            keep = np.broadcast_to(keep, (full.shape[0],))
        else:
            keep = np.asarray(mask, dtype=bool).ravel()
            if keep.size != full.shape[0]:
                raise DomainError("mask size does not match box grid")
        if not keep.any():
            raise DomainError("mask excludes every node")
        self.mask = keep.copy()
        self.index = full[keep]
        self.coords = full_coords[keep]

    @classmethod
    def from_predicate(cls, box, h, name="all"):
        """Named masks: ``all`` (whole box) or ``disk`` (inscribed ball)."""
        if name == "all":
            return cls(box, h)
        if name == "disk":
            centre = [0.5 * (a + b) for a, b in box]
            radius = 0.5 * min(b - a for a, b in box)

            def inside(*xs):
                return sum((x - c) ** 2 for x, c in zip(xs, centre)) < radius**2

            return cls(box, h, inside)
        raise DomainError(f"unknown mask predicate {name!r}")

    @classmethod
    def from_mask_csv(cls, box, h, path):
        """Mask CSV rows: ``index..., [coords...,] include`` (0/1); the first n columns index the box node."""
        probe = cls(box, h)
        keep = np.zeros(int(np.prod(probe.shape)), dtype=bool)
        strides = np.cumprod((1,) + probe.shape[::-1])[:-1][::-1]
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip().lstrip("-").isdigit():
                    continue
                idx = np.array([int(v) for v in row[: probe.n]])
                keep[int(np.dot(idx, strides))] = bool(int(float(row[-1])))
        return cls(box, h, keep)

    def _key(self):
        return ("box", self.box, self.h, self.mask.tobytes())

    def __repr__(self):
        return f"MaskedGrid(box={self.box}, h={self.h}, nodes={self.size})"


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on the included nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.grid.size:
            raise ShapeError(f"field of shape {v.shape} does not match {self.grid!r}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("field contains non-finite values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ShapeError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __len__(self):
        return self.values.shape[0]

    def max_abs(self):
        return float(np.max(np.abs(self.values)))


def _values(field, grid=None):
    if isinstance(field, Field):
        if grid is not None and field.grid != grid:
            raise ShapeError("field lives on a different grid")
        return field.grid, field.values
    if grid is None:
        raise ShapeError("raw arrays need an explicit grid")
    return grid, grid.check(field)


def integrate(field, grid=None):
    """Midpoint-rule integral: sum of node values times ``h**n``."""
    g, v = _values(field, grid)
    return g.integrate(v)


def mean_mass(field, grid=None):
    """Spatial average ``|Omega|^-1 * integral``."""
    g, v = _values(field, grid)
    return g.mean(v)


def l2_norm(field, grid=None):
    g, v = _values(field, grid)
    return g.norm(v)


def l2_inner(a, b, grid=None):
    ga, va = _values(a, grid)
    gb, vb = _values(b, grid if grid is not None else ga)
    if ga != gb:
        raise ShapeError("fields live on different grids")
    return ga.inner(va, vb)


def fmt(x):
    """17 significant digits: round-trips 64-bit floats exactly."""
    return format(float(x), ".17g")


def write_field_csv(field, path):
    """One row per node: ``index, coords..., value``."""
    g = field.grid
    names = ["x", "y"][: g.n]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", *names, "value"])
        for i in range(g.size):
            w.writerow([i, *(fmt(c) for c in g.coords[i]), fmt(field.values[i])])


def read_field_csv(grid, path):
    vals = np.empty(grid.size)
    seen = np.zeros(grid.size, dtype=bool)
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows, None)
        for row in rows:
            if not row:
                continue
            i = int(row[0])
            if not 0 <= i < grid.size:
                raise ShapeError(f"node index {i} out of range")
            vals[i] = float(row[-1])
            seen[i] = True
    if not seen.all():
        raise ShapeError(f"field CSV covers {seen.sum()} of {grid.size} nodes")
    return Field(grid, vals)
