"""Flat ``section.key = value`` run configuration.

Layering: built-in defaults < experiment recipe defaults < config file < CLI.
The canonical text (sorted keys, shortest round-trip floats) is hashed for replay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coefficients import builtin_drift, builtin_sigma
from .errors import ConfigError, UsageError
from .noise import build_diagonal, build_positivity_preserving
from .solver import Problem, SolverConfig, check_dqp, default_u0
from .spectral import SpectralGrid

EXPERIMENTS = ("solve", "tangent-oracle", "isometry", "comparison", "cauchy", "moments", "smooth-noise-limit")

_FLOATS = "floats"

SCHEMA = {
    "domain.K": (int, 64),
    "domain.N_x": (int, 256),
    "time.T": (float, 0.5),
    "time.N_t": (int, 256),
    "exponents.p": (float, 4.0),
    "exponents.q": (float, 4.0),
    "exponents.d": (int, 1),
    "drift.name": (str, "cubic"),
    "drift.m": (float, 3.0),
    "drift.ladder": (str, "yosida"),
    "drift.lambdas": (_FLOATS, (0.1, 0.05, 0.025, 0.0125)),
    "drift.levels": (_FLOATS, (2.0, 4.0, 8.0, 16.0)),
    "diffusion.name": (str, "bounded_smooth"),
    "diffusion.c": (float, 1.0),
    "diffusion.rho": (float, 0.1),
    "covariance.variant": (str, "diagonal"),
    "covariance.s": (float, 2.0),
    "covariance.ell": (float, 0.2),
    "covariance.c": (float, 1.0),
    "covariance.M": (int, 16),
    "mc.N_paths": (int, 200),
    "mc.seed": (int, 20240601),
    "mc.threads": (int, 1),
    "experiment.name": (str, "solve"),
    "experiment.lambda": (float, 0.05),
    "experiment.ps": (_FLOATS, (2.0, 4.0)),
    "experiment.eps": (_FLOATS, (0.1, 0.01, 0.001)),
    "experiment.alpha": (float, 1.0),
    "experiment.directions": (int, 20),
    "experiment.fd_eps": (float, 1e-2),
    "experiment.resolutions": (_FLOATS, (256.0, 512.0)),
    "output.dir": (str, "mspde-out"),
}

# recipe defaults: what each named experiment means when run "with defaults"
RECIPES = {
    "solve": {},
    "tangent-oracle": {},
    "isometry": {
        "drift.name": "zero",
        "diffusion.name": "constant",
        "diffusion.c": 1.0,
        "time.N_t": 2048,
        "mc.N_paths": 10_000,
    },
    "comparison": {
        "covariance.variant": "kernel",
        "diffusion.name": "nonneg_smooth",
        "diffusion.rho": 0.5,
        "mc.N_paths": 200,
    },
    "cauchy": {"mc.N_paths": 50},
    "moments": {"mc.N_paths": 200, "drift.lambdas": (0.025, 0.0125), "drift.levels": (8.0, 16.0)},
    "smooth-noise-limit": {
        "covariance.variant": "kernel",
        "diffusion.name": "nonneg_smooth",
        "diffusion.rho": 0.5,
        "mc.N_paths": 4,
    },
}


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw):
    kind = SCHEMA[key][0]
    try:
        if kind is _FLOATS:
            if isinstance(raw, (tuple, list)):
                return tuple(float(x) for x in raw)
            return tuple(float(x) for x in str(raw).split(",") if x.strip())
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from exc


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


@dataclass(frozen=True)
class RunConfig:
    values: tuple  # sorted (key, value) pairs

    def __getitem__(self, key):
        return dict(self.values)[key]

    @property
    def experiment(self) -> str:
        return self["experiment.name"]

    def canonical_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        vals = dict(self.values)
        for k, v in changes.items():
            key = k.replace("__", ".")
            vals[key] = _coerce(key, v)
        return build_config(vals, layered=False)

    # -- builders ---------------------------------------------------------

    def solver_config(self, N_t: int | None = None) -> SolverConfig:
        return SolverConfig(
            T=self["time.T"],
            N_t=self["time.N_t"] if N_t is None else N_t,
            K=self["domain.K"],
            N_x=self["domain.N_x"],
            M=self["covariance.M"],
            p=self["exponents.p"],
            q=self["exponents.q"],
            seed=self["mc.seed"],
            d=self["exponents.d"],
        )

    def grid(self) -> SpectralGrid:
        return SpectralGrid(self["domain.K"], self["domain.N_x"])

    def problem(self) -> Problem:
        grid = self.grid()
        variant = self["covariance.variant"]
        if variant == "diagonal":
            cov = build_diagonal(grid, self["covariance.M"], self["covariance.s"])
        else:
            cov = build_positivity_preserving(grid, self["covariance.ell"], self["covariance.c"], self["covariance.M"])
        drift = builtin_drift(self["drift.name"], m=self["drift.m"])
        sigma = builtin_sigma(self["diffusion.name"], c=self["diffusion.c"], rho=self["diffusion.rho"])
        return Problem(grid, cov, drift, sigma, default_u0(grid))


def validate(vals: dict) -> None:
    if vals["experiment.name"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {vals['experiment.name']!r}; choose from {', '.join(EXPERIMENTS)}")
    check_dqp(vals["exponents.p"], vals["exponents.q"], vals["exponents.d"])
    K, N_x, M = vals["domain.K"], vals["domain.N_x"], vals["covariance.M"]
    if K < 1 or N_x < 2 * K:
        raise ConfigError(f"need K >= 1 and N_x >= 2K, got K={K}, N_x={N_x}")
    if vals["covariance.variant"] not in ("diagonal", "kernel"):
        raise ConfigError(f"unknown covariance variant {vals['covariance.variant']!r}")
    if vals["covariance.variant"] == "diagonal" and not 1 <= M <= K:
        raise ConfigError(f"diagonal covariance needs 1 <= M <= K, got M={M}")
    if vals["drift.ladder"] not in ("yosida", "cutoff"):
        raise ConfigError("drift.ladder must be 'yosida' or 'cutoff'")
    if vals["time.T"] <= 0 or vals["time.N_t"] < 8 or vals["time.N_t"] % 8:
        raise ConfigError("need T > 0 and N_t a positive multiple of 8")
    if vals["mc.N_paths"] < 1 or vals["mc.threads"] < 1:
        raise ConfigError("mc.N_paths and mc.threads must be positive")
    try:
        builtin_drift(vals["drift.name"], m=vals["drift.m"])
        builtin_sigma(vals["diffusion.name"], c=vals["diffusion.c"], rho=vals["diffusion.rho"])
    except UsageError as exc:
        raise ConfigError(str(exc)) from exc


def build_config(user: dict, experiment: str | None = None, layered: bool = True) -> RunConfig:
    vals = {k: v for k, (_, v) in SCHEMA.items()}
    if layered:
        name = experiment or user.get("experiment.name", vals["experiment.name"])
        if name not in RECIPES:
            raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        vals.update({k: _coerce(k, v) for k, v in RECIPES[name].items()})
        vals.update(user)
        vals["experiment.name"] = name
    else:
        vals.update(user)
    validate(vals)
    return RunConfig(tuple(sorted(vals.items())))


def load_config(path, experiment: str | None = None, out: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    user = parse_text(text)
    if out is not None:
        user["output.dir"] = out
    return build_config(user, experiment)


def from_canonical(text: str) -> RunConfig:
    return build_config(parse_text(text), layered=False)


def panel_times(cfg: RunConfig) -> np.ndarray:
    from .lab import panel_steps

    sc = cfg.solver_config()
    return np.array(panel_steps(sc.N_t)) * sc.dt
