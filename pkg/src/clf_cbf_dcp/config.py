"""Run configuration and scenario files in a flat ``[section] key = value`` format.

The parser keeps the line number of every key so that validation errors can point
at the offending line. ``#`` starts a comment, both on its own line and after a value.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certificates import (
    CBF,
    SCENARIOS,
    CertificateFunction,
    Polynomial,
    Scenario,
    linear_class_k,
    linear_system,
    quadratic_clf,
)
from .controllers import CONTROLLER_NAMES, NAIVE, NULL_SPACE_MODIFIED, DcpControllerConfig
from .simulation import IntegratorConfig

OUTPUT_DIR_ENV = "DCP_OUTPUT_DIR"


class ConfigError(ValueError):
    """A configuration problem, located by source and line when known."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line


@dataclass
class Entry:
    value: str
    line: int


def parse_sections(text: str, source: str = "<config>",
                   allowed: tuple[str, ...] | None = None) -> dict[str, dict[str, Entry]]:
    """Split ``text`` into ``{section: {key: Entry}}``; names and keys are lower-cased."""
    sections: dict[str, dict[str, Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", source, lineno)
            current = line[1:-1].strip().lower()
            if allowed is not None and current not in allowed:
                raise ConfigError(f"unknown section [{current}]; expected one of "
                                  + ", ".join(f"[{a}]" for a in allowed), source, lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", source, lineno)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        if current is None:
            raise ConfigError("key outside of any [section]", source, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not key:
            raise ConfigError("empty key", source, lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", source, lineno)
        sections[current][key] = Entry(value, lineno)
    return sections


# --------------------------------------------------------------------------
# Value parsers shared by config files and command-line flags


def parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"not a number: {text!r}") from None


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_points(text: str) -> list[np.ndarray]:
    """``"0,7; 1,7"`` -> two points. Components may be separated by commas or spaces."""
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.replace(",", " ").split()
        points.append(np.array([parse_float(p) for p in parts]))
    if not points:
        raise ValueError("no points given")
    dims = {len(p) for p in points}
    if len(dims) != 1:
        raise ValueError(f"points have differing dimensions: {text!r}")
    return points


def parse_matrix(text: str) -> np.ndarray:
    """Rows separated by ``;``, entries by spaces or commas."""
    rows = parse_points(text)
    return np.array(rows, dtype=float)


def parse_name_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_polynomial(text: str) -> Polynomial:
    """``"1: 2 0; 1: 0 2; -4: 0 0"`` is ``x1^2 + x2^2 - 4``."""
    terms = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ValueError(f"polynomial term {chunk!r} must read 'coef: e1 e2 ...'")
        coef, exps = chunk.split(":", 1)
        try:
            exps_int = [int(e) for e in exps.replace(",", " ").split()]
        except ValueError:
            raise ValueError(f"exponents in {chunk!r} must be integers") from None
        terms.append((parse_float(coef.strip()), exps_int))
    return Polynomial.from_terms(terms)


# --------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI command needs.

    ``k = None`` means the scenario's default gain. An empty
    ``initial_conditions`` means the scenario's default initial conditions.
    ``seed`` is kept for randomized sampling; the current commands are deterministic.
    """

    scenario: str = "case1"
    controllers: tuple[str, ...] = CONTROLLER_NAMES
    initial_conditions: tuple[np.ndarray, ...] = ()
    k: float | None = None
    wp_sign: int = 1
    wh_mode: str = NULL_SPACE_MODIFIED
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    penalty: float = 10.0
    output_dir: str = "output"
    emit_svg: bool = False
    seed: int = 0
    # "section.key" names set explicitly in the config file.
    explicit_keys: frozenset[str] = frozenset()

    def dcp_config(self, scenario: Scenario) -> DcpControllerConfig:
        k = scenario.default_k if self.k is None else self.k
        return DcpControllerConfig(k=k, wp_sign=self.wp_sign, wh_mode=self.wh_mode)

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


_RUN_KEYS = {"scenario", "controllers", "init", "penalty", "output_dir", "emit_svg", "seed"}
_DCP_KEYS = {"k", "wp_sign", "wh_mode"}
_INTEGRATOR_KEYS = {"dt", "t_max", "origin_tol", "equilibrium_speed_tol", "equilibrium_dwell_steps"}


def _convert(entry: Entry, fn, source: str):
    try:
        return fn(entry.value)
    except ValueError as exc:
        raise ConfigError(str(exc), source, entry.line) from None


def _check_keys(section: dict[str, Entry], allowed: set[str], name: str, source: str) -> None:
    for key, entry in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{name}]; expected one of {sorted(allowed)}",
                              source, entry.line)


def run_config_from_text(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    sections = parse_sections(text, source, allowed=("run", "dcp", "integrator"))
    run = sections.get("run", {})
    dcp = sections.get("dcp", {})
    integ = sections.get("integrator", {})
    _check_keys(run, _RUN_KEYS, "run", source)
    _check_keys(dcp, _DCP_KEYS, "dcp", source)
    _check_keys(integ, _INTEGRATOR_KEYS, "integrator", source)

    kwargs = {}
    if "scenario" in run:
        value = run["scenario"].value
        if value not in SCENARIOS and base_dir is not None and not Path(value).is_absolute():
            value = str(base_dir / value)
        kwargs["scenario"] = value
    if "controllers" in run:
        kwargs["controllers"] = tuple(parse_name_list(run["controllers"].value))
    if "init" in run:
        kwargs["initial_conditions"] = tuple(_convert(run["init"], parse_points, source))
    if "penalty" in run:
        kwargs["penalty"] = _convert(run["penalty"], parse_float, source)
    if "output_dir" in run:
        kwargs["output_dir"] = run["output_dir"].value
    if "emit_svg" in run:
        kwargs["emit_svg"] = _convert(run["emit_svg"], parse_bool, source)
    if "seed" in run:
        kwargs["seed"] = _convert(run["seed"], int, source)
    if "k" in dcp:
        kwargs["k"] = _convert(dcp["k"], parse_float, source)
    if "wp_sign" in dcp:
        kwargs["wp_sign"] = _convert(dcp["wp_sign"], int, source)
    if "wh_mode" in dcp:
        kwargs["wh_mode"] = dcp["wh_mode"].value

    integ_kwargs = {}
    for key, entry in integ.items():
        conv = int if key == "equilibrium_dwell_steps" else parse_float
        integ_kwargs[key] = _convert(entry, conv, source)
    try:
        kwargs["integrator"] = IntegratorConfig(**integ_kwargs)
    except ValueError as exc:
        line = min((e.line for e in integ.values()), default=None)
        raise ConfigError(str(exc), source, line) from None

    kwargs["explicit_keys"] = frozenset(f"{name}.{key}" for name, sec in sections.items()
                                        for key in sec)
    cfg = RunConfig(**kwargs)
    _validate_static(cfg, source, {**run, **dcp})
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return run_config_from_text(text, str(path), path.parent)


def _validate_static(cfg: RunConfig, source: str, entries: dict[str, Entry]) -> None:
    def fail(msg, key):
        entry = entries.get(key)
        raise ConfigError(msg, source, entry.line if entry else None)

    if not cfg.controllers:
        fail("controllers list is empty; expected a subset of " + ", ".join(CONTROLLER_NAMES),
             "controllers")
    for name in cfg.controllers:
        if name not in CONTROLLER_NAMES:
            fail(f"unknown controller {name!r}; expected one of {', '.join(CONTROLLER_NAMES)}",
                 "controllers")
    if len(set(cfg.controllers)) != len(cfg.controllers):
        fail("controllers list has duplicates", "controllers")
    if not cfg.penalty > 0:
        fail(f"penalty must be positive, got {cfg.penalty}", "penalty")
    if cfg.wp_sign not in (1, -1):
        fail(f"wp_sign must be 1 or -1, got {cfg.wp_sign}", "wp_sign")
    if cfg.wh_mode not in (NAIVE, NULL_SPACE_MODIFIED):
        fail(f"wh_mode must be {NAIVE!r} or {NULL_SPACE_MODIFIED!r}", "wh_mode")
    if cfg.k is not None and not cfg.k >= 0:
        fail(f"k must be nonnegative, got {cfg.k}", "k")


def validate_run_config(cfg: RunConfig, source: str = "<config>") -> Scenario:
    """Full validation including the scenario; returns the resolved scenario."""
    _validate_static(cfg, source, {})
    scenario = resolve_scenario(cfg.scenario)
    for x0 in cfg.initial_conditions or scenario.inits:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (scenario.system.state_dim,):
            raise ConfigError(f"initial condition {x0.tolist()} has dimension {x0.size}, "
                              f"expected {scenario.system.state_dim}", source)
        h0 = float(scenario.cbf.value(x0))
        if h0 < 0:
            raise ConfigError(f"initial condition {x0.tolist()} is unsafe: h = {h0:.6g} < 0", source)
        if not scenario.in_domain(x0):
            raise ConfigError(f"initial condition {x0.tolist()} lies outside the domain box", source)
    if not (cfg.initial_conditions or scenario.inits):
        raise ConfigError("no initial conditions given and the scenario has no defaults", source)
    return scenario


def resolve_output_dir(cli_value: str | None, cfg: RunConfig) -> Path:
    """Command-line flag, then ``DCP_OUTPUT_DIR``, then the config value."""
    if cli_value:
        return Path(cli_value)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)


# --------------------------------------------------------------------------
# Custom scenario files

_SCENARIO_KEYS = {"name", "a", "g", "p", "h", "alpha_l", "alpha_h", "domain", "seeds", "inits",
                  "default_k"}
_SCENARIO_REQUIRED = {"a", "g", "p", "h", "seeds"}


def resolve_scenario(name: str) -> Scenario:
    """A built-in scenario name or the path of a scenario file."""
    if name in SCENARIOS:
        return SCENARIOS[name]()
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"unknown scenario {name!r}: not one of {sorted(SCENARIOS)} "
                          "and no such file")
    return load_scenario_file(path)


def load_scenario_file(path: str | Path) -> Scenario:
    """Linear system ``xdot = A x + G u``, ``V = 0.5 x^T P x`` and a polynomial ``h``."""
    path = Path(path)
    source = str(path)
    sections = parse_sections(path.read_text(), source, allowed=("scenario",))
    if "scenario" not in sections:
        raise ConfigError("a scenario file needs a [scenario] section", source)
    sec = sections["scenario"]
    _check_keys(sec, _SCENARIO_KEYS, "scenario", source)
    missing = _SCENARIO_REQUIRED - set(sec)
    if missing:
        raise ConfigError(f"missing keys: {sorted(missing)}", source)

    A = _convert(sec["a"], parse_matrix, source)
    G = _convert(sec["g"], parse_matrix, source)
    P = _convert(sec["p"], parse_matrix, source)
    poly = _convert(sec["h"], parse_polynomial, source)
    n = A.shape[0]

    def located(key, build):
        try:
            return build()
        except ValueError as exc:
            raise ConfigError(str(exc), source, sec[key].line) from None

    system = located("a", lambda: linear_system(A, G))
    if P.shape != (n, n):
        raise ConfigError(f"P has shape {P.shape}, expected ({n}, {n})", source, sec["p"].line)
    if poly.exponents.shape[1] != n:
        raise ConfigError(f"h terms need {n} exponents each", source, sec["h"].line)
    alpha_l = linear_class_k(1.0, extended=False)
    if "alpha_l" in sec:
        gain = _convert(sec["alpha_l"], parse_float, source)
        alpha_l = located("alpha_l", lambda: linear_class_k(gain, extended=False))
    alpha_h = linear_class_k(1.0, extended=True)
    if "alpha_h" in sec:
        gain = _convert(sec["alpha_h"], parse_float, source)
        alpha_h = located("alpha_h", lambda: linear_class_k(gain, extended=True))
    clf = located("p", lambda: quadratic_clf(P, alpha_l))
    cbf = CertificateFunction(value=poly, class_k=alpha_h, kind=CBF, gradient=poly.gradient,
                              name="h")

    if "domain" in sec:
        domain = _convert(sec["domain"], parse_matrix, source)
        if domain.shape != (n, 2) or np.any(domain[:, 0] >= domain[:, 1]):
            raise ConfigError("domain must list one 'lower upper' pair per state", source,
                              sec["domain"].line)
    else:
        domain = np.tile([-10.0, 10.0], (n, 1))
    seeds = tuple(_convert(sec["seeds"], parse_points, source))
    inits = tuple(_convert(sec["inits"], parse_points, source)) if "inits" in sec else ()
    for key, pts in (("seeds", seeds), ("inits", inits)):
        if any(p.size != n for p in pts):
            raise ConfigError(f"{key} must have {n} components", source, sec[key].line)
    default_k = _convert(sec["default_k"], parse_float, source) if "default_k" in sec else 15.0
    name = sec["name"].value if "name" in sec else path.stem
    return Scenario(name, system, clf, cbf, domain, seeds, default_k, inits)
