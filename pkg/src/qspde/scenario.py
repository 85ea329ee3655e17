"""Scenario files: strict JSON parsing, validation and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .domain import SpatialGrid, make_grid, shape_from_config
from .noise import NoiseSpectrum, build_spectrum, kernel_from_config
from .nonlin import build_coefficients, _parse_preset
from .operators import CoefficientField, coefficient_from_config
from .solver import Problem

HARNESSES = (
    "trajectory", "green", "energy", "picard", "comparison", "max_principle",
    "positive_part", "lp_uniform", "l2_estimate", "apriori",
)

_ALLOWED = {
    "": {"name", "description", "domain", "grid", "time", "coefficient", "noise", "nonlinear",
         "initial", "harness", "seed", "tolerances"},
    "domain": {"type", "length", "lx", "ly", "size", "notch"},
    "grid": {"h"},
    "time": {"dt", "T"},
    "coefficient": {"preset", "lam", "Lam", "M", "time_constant", "scale", "diag"},
    "noise": {"kernel", "n_modes"},
    "nonlinear": {"f", "g", "h", "f0", "g0", "h0", "C", "alpha", "beta"},
    "initial": {"preset", "k", "amp", "center", "width", "value"},
    "harness": {"type", "theta", "p", "paths", "calibration", "evaluation", "headroom", "y", "s",
                "envelope_C", "envelope_rho", "t_min", "expect_point", "f_shift", "xi_shift", "m", "b",
                "sigma", "identity", "snapshot_every"},
    "tolerances": {"amplitude", "envelope", "point", "residual", "comparison", "null", "picard", "agreement"},
}

_F_PRESETS = ("zero", "linear-reaction", "sine-reaction")
_G_PRESETS = ("zero", "gradient-flux")
_H_PRESETS = ("zero", "multiplicative-noise", "gradient-noise")
_COEF_PRESETS = ("identity", "scalar-sine", "step", "anisotropic")
_INITIAL = ("zero", "sine", "gaussian", "constant")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: dict
    h: float
    dt: float
    T: float
    coefficient: dict
    noise: dict | None
    nonlinear: dict
    initial: dict
    harness: dict
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    description: str = ""

    @property
    def harness_type(self) -> str:
        return self.harness["type"]

    @property
    def theta(self) -> float:
        return float(self.harness.get("theta", 0.0))

    @property
    def p(self) -> float:
        return float(self.harness.get("p", 2.0))

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def refined(self) -> "Scenario":
        """Same scenario at twice the resolution in space and time."""
        return replace(self, h=self.h / 2, dt=self.dt / 2)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ScenarioError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def _check_keys(obj: dict, section: str) -> None:
    allowed = _ALLOWED[section]
    for k in obj:
        if k not in allowed:
            where = f"{section}.{k}" if section else k
            raise ScenarioError(f"unknown key {where!r}")


def _require(obj: dict, key: str, section: str):
    if key not in obj:
        raise ScenarioError(f"missing required key {section + '.' if section else ''}{key}")
    return obj[key]


def _positive(val, path: str) -> float:
    try:
        v = float(val)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path} must be a number") from None
    if not v > 0:
        raise ScenarioError(f"{path} must be positive")
    return v


def parse_scenario_text(text: str) -> Scenario:
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    _check_keys(raw, "")
    for sec in ("domain", "grid", "time", "coefficient", "noise", "nonlinear", "initial", "harness", "tolerances"):
        if sec in raw:
            if not isinstance(raw[sec], dict):
                raise ScenarioError(f"{sec} must be an object")
            _check_keys(raw[sec], sec)

    domain = _require(raw, "domain", "")
    try:
        shape = shape_from_config(domain)
    except ValueError as exc:
        raise ScenarioError(f"domain.type: {exc}") from None
    h = _positive(_require(_require(raw, "grid", ""), "h", "grid"), "grid.h")
    time = _require(raw, "time", "")
    dt = _positive(_require(time, "dt", "time"), "time.dt")
    T = _positive(_require(time, "T", "time"), "time.T")

    coef = dict(raw.get("coefficient", {"preset": "identity"}))
    preset = coef.get("preset", "identity")
    if preset not in _COEF_PRESETS and not str(preset).startswith("tabulated:"):
        raise ScenarioError(f"coefficient.preset: unknown preset {preset!r}")
    if preset == "anisotropic" and shape.dim != 2:
        raise ScenarioError("coefficient.preset: anisotropic needs a 2D domain")

    noise = raw.get("noise")
    if noise is not None:
        kern = str(_require(noise, "kernel", "noise"))
        if not (kern.startswith("sine-modes") or kern == "rank-one" or kern.startswith("tabulated:")):
            raise ScenarioError(f"noise.kernel: unknown preset {kern!r}")
        if kern.startswith("sine-modes("):
            try:
                float(kern[len("sine-modes"):].strip("() "))
            except ValueError:
                raise ScenarioError(f"noise.kernel: malformed preset {kern!r}") from None
        n_modes = noise.get("n_modes", 1)
        if not isinstance(n_modes, int) or n_modes < 1:
            raise ScenarioError("noise.n_modes must be a positive integer")

    nl = dict(raw.get("nonlinear", {}))
    for key, allowed in (("f", _F_PRESETS), ("g", _G_PRESETS), ("h", _H_PRESETS)):
        try:
            name = _parse_preset(str(nl.get(key, "zero")))[0]
        except ValueError:
            raise ScenarioError(f"nonlinear.{key}: malformed preset {nl.get(key)!r}") from None
        if name not in allowed:
            raise ScenarioError(f"nonlinear.{key}: unknown preset {nl.get(key)!r}")
    if nl.get("h", "zero") != "zero" or nl.get("h0") is not None:
        if noise is None:
            raise ScenarioError("nonlinear.h needs a noise section")

    init = dict(raw.get("initial", {"preset": "zero"}))
    if init.get("preset", "zero") not in _INITIAL:
        raise ScenarioError(f"initial.preset: unknown preset {init.get('preset')!r}")

    harness = dict(_require(raw, "harness", ""))
    htype = _require(harness, "type", "harness")
    if htype not in HARNESSES:
        raise ScenarioError(f"harness.type: unknown harness {htype!r}")
    harness.setdefault("theta", 0.0)
    harness.setdefault("p", 2.0)
    if not 0 <= float(harness["theta"]) < 1:
        raise ScenarioError("harness.theta must lie in [0, 1)")
    if float(harness["p"]) < 2:
        raise ScenarioError("harness.p must be >= 2")
    for key in ("paths", "calibration", "evaluation"):
        if key in harness and (not isinstance(harness[key], int) or harness[key] < 1):
            raise ScenarioError(f"harness.{key} must be a positive integer")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed must be an integer")
    return Scenario(
        name=str(raw.get("name", "scenario")),
        domain=domain,
        h=h,
        dt=dt,
        T=T,
        coefficient=coef,
        noise=noise,
        nonlinear=nl,
        initial=init,
        harness=harness,
        seed=seed,
        tolerances=dict(raw.get("tolerances", {})),
        description=str(raw.get("description", "")),
    )


def parse_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return parse_scenario_text(fh.read())


@dataclass(frozen=True, eq=False)
class Built:
    grid: SpatialGrid
    a: CoefficientField
    spectrum: NoiseSpectrum | None
    problem: Problem
    xi: np.ndarray


def initial_field(cfg: dict, grid: SpatialGrid) -> np.ndarray:
    preset = cfg.get("preset", "zero")
    x = grid.interior_nodes
    lo, hi = grid.shape.lower, grid.shape.upper
    amp = float(cfg.get("amp", 1.0))
    if preset == "zero":
        return np.zeros(grid.n_interior)
    if preset == "sine":
        k = int(cfg.get("k", 1))
        return amp * np.prod(np.sin(k * np.pi * (x - lo) / (hi - lo)), axis=1)
    if preset == "gaussian":
        c = np.asarray(cfg.get("center", 0.5 * (lo + hi)), dtype=float)
        w = float(cfg.get("width", 0.1))
        return amp * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * w * w))
    if preset == "constant":
        return np.full(grid.n_interior, float(cfg.get("value", 0.0)))
    raise ScenarioError(f"initial.preset: unknown preset {preset!r}")


def build(s: Scenario) -> Built:
    shape = shape_from_config(s.domain)
    try:
        grid = make_grid(shape, s.h)
    except ValueError as exc:
        raise ScenarioError(f"grid.h: {exc}") from None
    a = coefficient_from_config(s.coefficient, grid.dim)
    spectrum = None
    if s.noise is not None:
        spectrum = build_spectrum(kernel_from_config(s.noise["kernel"], grid), grid, int(s.noise.get("n_modes", 1)))
    nl = s.nonlinear
    h0 = nl.get("h0")
    if isinstance(h0, list) and h0 and isinstance(h0[0], str):
        h0 = tuple(h0)
    coeffs = build_coefficients(
        grid, spectrum,
        f=nl.get("f", "zero"), g=nl.get("g", "zero"), h=nl.get("h", "zero"),
        f0=nl.get("f0"), g0=nl.get("g0"), h0=h0,
        C=nl.get("C"), alpha=nl.get("alpha"), beta=nl.get("beta"),
    )
    xi = initial_field(s.initial, grid)
    return Built(grid, a, spectrum, Problem(grid, a, coeffs, spectrum), xi)


def scenario_dict(s: Scenario) -> dict[str, Any]:
    return {
        "name": s.name, "domain": s.domain, "grid": {"h": s.h}, "time": {"dt": s.dt, "T": s.T},
        "coefficient": s.coefficient, "noise": s.noise, "nonlinear": s.nonlinear, "initial": s.initial,
        "harness": s.harness, "seed": s.seed, "tolerances": s.tolerances,
    }
