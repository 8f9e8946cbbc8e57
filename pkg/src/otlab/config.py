"""Strict experiment-configuration parsing and object building.

Configs are TOML with nested sections (manifold, mu, nu, solver,
ledger, outputs, wasserstein, verify).  Parsing fails closed: unknown
keys are rejected by their full dotted name, values are type-checked,
and physics-relevant keys have no silent defaults (solver tolerances do
have documented defaults, mirrored from the solver configuration).
Dotted-path overrides (``section.key=value``) are applied before
validation, so overridden configs obey the same rules.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

try:
    import tomllib as _toml
except ImportError:                               # Python < 3.11
    import tomli as _toml

from .errors import ConfigError, OtLabError, ValidationError
from .estimates import assemble_torus_constants, make_ledger
from .fields import load_density_csv, make_density, normalize_density
from .geometry import SphereChartGrid, TorusGrid, normalize_manifold
from .solver import SolverConfig
from .transport import TransportPair


# -- leaf specifications -------------------------------------------------


@dataclass(frozen=True)
class _Leaf:
    types: tuple
    required: bool = False
    default: object = None
    choices: tuple = None

    def coerce(self, name, value):
        # bool is an int subclass; never accept it for numeric leaves.
        if isinstance(value, bool) and bool not in self.types:
            raise ConfigError(f"key {name} must not be a boolean")
        if float in self.types and isinstance(value, int) \
                and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, self.types):
            expect = "/".join(t.__name__ for t in self.types)
            raise ConfigError(
                f"key {name} has type {type(value).__name__}, expected "
                f"{expect}")
        if self.choices is not None and value not in self.choices:
            raise ConfigError(
                f"key {name} must be one of {list(self.choices)}, "
                f"got {value!r}")
        return value


def _solver_leaves():
    kinds = {"float": (float,), "int": (int,)}
    return {f.name: _Leaf(kinds[f.type], default=f.default)
            for f in dataclasses.fields(SolverConfig)}


_DENSITY_LEAVES = {
    "family": _Leaf((str,), choices=("uniform", "cosine_bump",
                                     "gaussian_bump", "harmonic")),
    "csv": _Leaf((str,)),
    "center": _Leaf((list,)),
    "width": _Leaf((float,)),
    "amplitude": _Leaf((float,)),
    "wavevector": _Leaf((list,)),
    "phase": _Leaf((float,)),
}

_SCHEMA = {
    "seed": _Leaf((int,), default=0),
    "manifold": {
        "kind": _Leaf((str,), required=True,
                      choices=("torus", "sphere_band")),
        "dimension": _Leaf((int,)),
        "period": _Leaf((float, list)),
        "resolution": _Leaf((int, list), required=True),
        "chart_margin": _Leaf((float,)),
        "radius": _Leaf((float,), default=1.0),
        "normalize": _Leaf((bool,), default=True),
    },
    "mu": _DENSITY_LEAVES,
    "nu": _DENSITY_LEAVES,
    "solver": _solver_leaves(),
    "ledger": {
        "cbar": _Leaf((float,), required=True),
        "grad_budget": _Leaf((float, str), required=True),
        "mode": _Leaf((str,), default="analytic",
                      choices=("analytic", "explicit")),
        "poly_c1": _Leaf((float,)),
        "poly_c2": _Leaf((float,)),
        "poly_degree": _Leaf((int,)),
    },
    "outputs": {
        "directory": _Leaf((str,), required=True),
        "formats": _Leaf((list,), default=["csv", "json", "svg"]),
    },
    "wasserstein": {
        "method": _Leaf((str,), default="exact",
                        choices=("exact", "sinkhorn")),
        "epsilon": _Leaf((float,), default=0.01),
        "quantize": _Leaf((int,)),
    },
    "verify": {
        "delta0": _Leaf((float,)),
        "lambdas": _Leaf((list,)),
        "semiconvexity": _Leaf((float,)),
    },
}

_OPTIONAL_SECTIONS = ("ledger", "wasserstein", "verify")


@dataclass
class ExperimentConfig:
    """Validated run description; sections are plain dicts."""

    seed: int
    manifold: dict
    mu: dict
    nu: dict
    solver: SolverConfig
    outputs: dict
    ledger: dict = None
    wasserstein: dict = None
    verify: dict = None

    def to_dict(self):
        out = {"seed": self.seed, "manifold": dict(self.manifold),
               "mu": dict(self.mu), "nu": dict(self.nu),
               "solver": dataclasses.asdict(self.solver),
               "outputs": dict(self.outputs)}
        for name in _OPTIONAL_SECTIONS:
            value = getattr(self, name)
            if value is not None:
                out[name] = dict(value)
        return out


# -- parsing -------------------------------------------------------------


def _validate_section(name, raw, leaves, defaults=True):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be a table")
    out = {}
    for key, value in raw.items():
        if key not in leaves:
            raise ConfigError(f"unknown key {name}.{key}")
        out[key] = leaves[key].coerce(f"{name}.{key}", value)
    for key, leaf in leaves.items():
        if key in out:
            continue
        if leaf.required:
            raise ConfigError(f"missing required key {name}.{key}")
        if defaults and leaf.default is not None:
            out[key] = leaf.default
    return out


def _parse_override_value(text):
    try:
        return _toml.loads(f"v = {text}")["v"]
    except _toml.TOMLDecodeError:
        return text                               # bare string convenience


def apply_overrides(raw, assignments):
    """Apply ``a.b.c=value`` strings onto the raw nested dict."""
    for item in assignments:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like key=value")
        parts = key.split(".")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(
                    f"override {item!r} descends through non-table {part}")
        node[parts[-1]] = _parse_override_value(value.strip())
    return raw


def validate_config(raw):
    """Strictly validate a raw nested dict into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key}")
    for section in ("manifold", "mu", "nu", "outputs"):
        if section not in raw:
            raise ConfigError(f"missing required section {section}")
    seed = _SCHEMA["seed"].coerce("seed", raw.get("seed", 0))
    manifold = _validate_section("manifold", raw["manifold"],
                                 _SCHEMA["manifold"])
    _validate_manifold(manifold)
    mu = _validate_density("mu", raw["mu"])
    nu = _validate_density("nu", raw["nu"])
    solver_map = _validate_section("solver", raw.get("solver", {}),
                                   _SCHEMA["solver"])
    solver = SolverConfig(**solver_map)
    try:
        solver.validate()
    except ValidationError as err:
        raise ConfigError(f"solver: {err}") from err
    outputs = _validate_section("outputs", raw["outputs"],
                                _SCHEMA["outputs"])
    for fmt in outputs["formats"]:
        if fmt not in ("csv", "json", "svg"):
            raise ConfigError(f"unknown output format {fmt!r}")
    optional = {}
    for name in _OPTIONAL_SECTIONS:
        if name in raw:
            optional[name] = _validate_section(name, raw[name],
                                               _SCHEMA[name])
    if "ledger" in optional:
        _validate_ledger(optional["ledger"])
    return ExperimentConfig(seed=seed, manifold=manifold, mu=mu, nu=nu,
                            solver=solver, outputs=outputs, **optional)


def _validate_manifold(manifold):
    kind = manifold["kind"]
    if kind == "torus":
        for key in ("dimension", "period"):
            if key not in manifold:
                raise ConfigError(f"torus manifold needs manifold.{key}")
        if manifold.get("chart_margin") is not None:
            raise ConfigError("manifold.chart_margin is sphere-band only")
        if not 1 <= manifold["dimension"] <= 3:
            raise ConfigError("manifold.dimension must be 1, 2 or 3")
    else:
        if "chart_margin" not in manifold:
            raise ConfigError("sphere band needs manifold.chart_margin")
        if "period" in manifold or "dimension" in manifold:
            raise ConfigError(
                "manifold.period/dimension are torus only; the sphere "
                "band is two-dimensional with its own chart keys")


def _validate_density(name, raw):
    out = _validate_section(name, raw, _DENSITY_LEAVES, defaults=False)
    has_family = "family" in out
    has_csv = "csv" in out
    if has_family == has_csv:
        raise ConfigError(
            f"section {name} needs exactly one of family or csv")
    if has_csv and len(out) > 1:
        raise ConfigError(
            f"section {name}: csv densities take no family parameters")
    return out


def _validate_ledger(ledger):
    budget = ledger["grad_budget"]
    if isinstance(budget, str) and budget != "auto":
        raise ConfigError(
            "ledger.grad_budget must be a number or the string 'auto'")
    if ledger["mode"] == "explicit":
        for key in ("poly_c1", "poly_c2"):
            if key not in ledger:
                raise ConfigError(
                    f"explicit ledger mode needs ledger.{key}")
    elif "poly_c1" in ledger or "poly_c2" in ledger:
        raise ConfigError(
            "analytic ledger mode assembles poly_c1/poly_c2 itself; "
            "switch ledger.mode to 'explicit' to pin them")


def load_config(path, overrides=()):
    """Read, override and validate a TOML config file."""
    try:
        with open(path, "rb") as handle:
            raw = _toml.load(handle)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except _toml.TOMLDecodeError as err:
        raise ConfigError(f"config file {path} is not valid TOML: "
                          f"{err}") from err
    apply_overrides(raw, overrides)
    return validate_config(raw)


# -- building domain objects ---------------------------------------------


def build_grid(cfg):
    m = cfg.manifold
    if m["kind"] == "torus":
        n = m["dimension"]
        period = m["period"]
        periods = tuple(period) if isinstance(period, list) else (period,) * n
        if len(periods) != n:
            raise ConfigError("manifold.period length must match dimension")
        res = m["resolution"]
        resolution = tuple(res) if isinstance(res, list) else (res,) * n
        if len(resolution) != n:
            raise ConfigError(
                "manifold.resolution length must match dimension")
        grid = TorusGrid(periods=periods, resolution=resolution)
    else:
        theta_max = np.pi / 2.0 - m["chart_margin"]
        if not 0 < theta_max < np.pi / 2.0:
            raise ConfigError(
                "manifold.chart_margin must lie in (0, pi/2) so the band "
                "has positive width")
        res = m["resolution"]
        resolution = tuple(res) if isinstance(res, list) else (res, res)
        grid = SphereChartGrid(radius=m["radius"], theta_max=theta_max,
                               resolution=resolution)
    if m["normalize"]:
        grid = normalize_manifold(grid)
    return grid


def build_density(grid, density_cfg, base_dir=None):
    if "csv" in density_cfg:
        path = density_cfg["csv"]
        if base_dir is not None:
            import os
            path = os.path.join(base_dir, path) if not os.path.isabs(path) \
                else path
        return normalize_density(load_density_csv(grid, path))
    kwargs = {k: v for k, v in density_cfg.items() if k != "family"}
    for key in ("center", "wavevector"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return make_density(grid, density_cfg["family"], **kwargs)


def build_pair(cfg, base_dir=None):
    grid = build_grid(cfg)
    mu = build_density(grid, cfg.mu, base_dir)
    nu = build_density(grid, cfg.nu, base_dir)
    cbar = cfg.ledger["cbar"] if cfg.ledger else None
    return TransportPair(mu, nu, cbar=cbar)


def _auto_grad_budget(dimension, cbar, poly_c1, poly_c2, degree,
                      max_cost_hessian, det_lower_bound):
    """Largest power-of-two-scaled budget with a valid dichotomy split."""
    budget = 1.0
    for _ in range(80):
        ledger = make_ledger(
            dimension=dimension, cbar=cbar, grad_budget=budget,
            poly_c1=poly_c1, poly_c2=poly_c2, degree=degree,
            max_cost_hessian=max_cost_hessian,
            det_lower_bound=det_lower_bound)
        if ledger.split_valid:
            return budget
        budget *= 0.5
    raise ConfigError(
        "ledger.grad_budget auto search failed: no budget down to "
        f"{budget:.3g} yields a valid dichotomy split")


def build_ledger(cfg, pair):
    """Realize the constants ledger for a pair, or None without one."""
    if cfg.ledger is None:
        return None
    spec = cfg.ledger
    dimension = pair.grid.dimension
    max_d2c = pair.grid.max_cost_hessian()
    if spec["mode"] == "analytic":
        consts = assemble_torus_constants(pair)
        poly_c1 = consts["poly_c1"]
        poly_c2 = consts["poly_c2"]
        det_lower = consts["det_lower_bound"]
        degree = spec.get("poly_degree", 3 * dimension - 1)
    else:
        poly_c1 = spec["poly_c1"]
        poly_c2 = spec["poly_c2"]
        det_lower = None
        degree = spec.get("poly_degree", 3 * dimension - 1)
    budget = spec["grad_budget"]
    if budget == "auto":
        budget = _auto_grad_budget(dimension, spec["cbar"], poly_c1,
                                   poly_c2, degree, max_d2c, det_lower)
    kwargs = dict(dimension=dimension, cbar=spec["cbar"],
                  grad_budget=budget, poly_c1=poly_c1, poly_c2=poly_c2,
                  degree=degree, max_cost_hessian=max_d2c)
    if det_lower is not None:
        kwargs["det_lower_bound"] = det_lower
    return make_ledger(**kwargs)
