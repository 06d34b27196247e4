"""Flat ``section.key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Every key must be in
:data:`SCHEMA`, otherwise parsing fails naming the key.  Lists are comma
separated; box axes are separated by ``;``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _pair(s):
    vals = _floats(s)
    if len(vals) != 2:
        raise ValueError(f"expected two numbers, got {s!r}")
    return tuple(vals)


def _box(s):
    return [_pair(axis) for axis in s.split(";")]


def _str(s):
    return s.strip()


def _choice(*options):
    def parse(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, list):
        if v and isinstance(v[0], tuple):
            return ";".join(_fmt_value(x) for x in v)
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


SCENARIOS = ("kernel", "spectrum", "asymptotics", "evolve", "steady", "bifurcate")

# key -> (parser, default)
SCHEMA = {
    "run.scenario": (_choice(*SCENARIOS), None),
    "run.seed": (int, 0),
    "run.out": (_str, "out"),
    "kernel.shape": (_choice("tent", "gaussian", "table"), "tent"),
    "kernel.table": (_str, None),
    "kernel.n": (int, 1),
    "kernel.epsilon": (float, 1.0),
    "kernel.m": (float, 0.0),
    "kernel.mode": (_choice("periodic", "general"), "periodic"),
    "kernel.norm_const": (float, None),
    "kernel.quad_points": (int, None),
    "kernel.k_max": (int, 8),
    "domain.kind": (_choice("torus", "box"), "torus"),
    "domain.N": (int, 256),
    "domain.box": (_box, None),
    "domain.h": (float, None),
    "domain.mask": (_str, "all"),
    "force.shape": (_choice("zero", "logistic", "cubic", "sine", "table"), "zero"),
    "force.r": (float, 1.0),
    "force.a": (float, 1.0),
    "force.b": (float, 1.0),
    "force.c": (float, 1.0),
    "force.table": (_str, None),
    "ic.kind": (_choice("constant", "cosine", "random", "csv"), "cosine"),
    "ic.value": (float, 0.0),
    "ic.mean": (float, 0.0),
    "ic.amplitude": (float, 1.0),
    "ic.k": (int, 1),
    "ic.low": (float, 0.0),
    "ic.high": (float, 1.0),
    "ic.path": (_str, None),
    "evolve.dt": (float, 1e-3),
    "evolve.T": (float, 1.0),
    "evolve.scheme": (_choice("euler", "rk4"), "rk4"),
    "evolve.snapshots": (_floats, []),
    "evolve.record_every": (int, 1),
    "evolve.gamma": (_pair, None),
    "spectrum.k_max": (int, 8),
    "spectrum.delta_class": (float, None),
    "spectrum.dump_matrix": (_bool, False),
    "asymptotics.epsilons": (_floats, [0.2, 0.1, 0.05]),
    "asymptotics.k": (int, 1),
    "asymptotics.m": (float, None),
    "steady.u1": (float, -1.0),
    "steady.u2": (float, 1.0),
    "steady.R": (float, 0.14),
    "steady.threshold": (float, 0.0),
    "steady.tol": (float, 1e-12),
    "steady.max_iter": (int, 500),
    "steady.noise": (float, 0.0),
    "branch.u_star": (float, 0.0),
    "branch.k_min": (int, 1),
    "branch.k_max": (int, 1),
    "branch.steps": (int, 20),
    "branch.amplitude": (float, 1e-2),
    "branch.ds": (float, 0.05),
    "branch.ds_max": (float, 0.25),
}


@dataclass
class RunConfig:
    """Parsed configuration; ``explicit`` holds the keys set in the source text."""

    explicit: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self.explicit.get(key, SCHEMA[key][1])

    def get(self, key, default=None):
        v = self[key]
        return default if v is None else v

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.explicit[key] = value

    def path(self, key):
        """Config-relative path for a file-valued key."""
        v = self[key]
        if v is None:
            raise ConfigError(f"{key} must be set")
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def scenario(self):
        return self["run.scenario"]

    @property
    def seed(self):
        return self["run.seed"]

    @classmethod
    def parse(cls, text, base_dir=None):
        explicit = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r} (line {lineno})")
            try:
                explicit[key] = SCHEMA[key][0](value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r} (line {lineno}): {exc}") from None
        return cls(explicit, Path(base_dir) if base_dir else Path.cwd())

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text, path.parent)

    def to_text(self):
        return "".join(f"{k} = {_fmt_value(self.explicit[k])}\n" for k in SCHEMA if k in self.explicit)

    @classmethod
    def from_manifest(cls, text, base_dir=None):
        """Recover the configuration echoed into a run manifest."""
        prefix = "config."
        lines = [ln[len(prefix) :] for ln in text.splitlines() if ln.startswith(prefix)]
        return cls.parse("\n".join(lines), base_dir)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.explicit == other.explicit
