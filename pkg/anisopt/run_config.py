"""Run configuration: one TOML file per run plus ``section.key=value`` overrides."""

import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .config import (
    DEFAULT_BUDGET,
    DEFAULT_KERNEL_SIGMA,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SAMPLES,
    DEFAULT_SCHEDULE_STEPS,
    DEFAULT_SEED,
    DEFAULT_TV_PENALTY,
    HAMMERSTEIN_TOLERANCE,
    MAX_OUTER_ITERATIONS,
    STATE_TOLERANCE,
)
from .conv_lab import SweepSchedule, default_schedule
from .control_set import NAMED_CONTROLS, SCHEME_LENGTHS, ControlBounds
from .exceptions import ConfigurationError
from .hammerstein import KERNEL_IDS
from .ocp import METHODS
from .plap import RegParams

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("solve-state", "solve-hammerstein", "optimize", "sweep", "check-inequalities")

# Allowed keys per section, with None marking a required key.
SECTION_KEYS: Dict[str, Dict[str, Any]] = {
    "mesh": {"dim": None, "n": None},
    "problem": {"p": None, "f": 1.0},
    "bounds": {"xi1": None, "xi2": None, "alpha": None, "gamma": None},
    "regularization": {"epsilon": None, "k": None, "delta": 0.5},
    "control": {"name": "", "scheme": "", "theta": [], "file": ""},
    "kernel": {"id": None, "c": None, "sigma": DEFAULT_KERNEL_SIGMA},
    "schedule": {"steps": DEFAULT_SCHEDULE_STEPS, "epsilons": [], "ks": []},
    "optimize": {
        "method": "nelder-mead",
        "budget": DEFAULT_BUDGET,
        "theta0": None,
        "target_theta": [],
        "target": 0.0,
        "tv_penalty_weight": DEFAULT_TV_PENALTY,
        "regularized": True,
        "value_convergence": False,
    },
    "solver": {
        "tol": STATE_TOLERANCE,
        "max_iter": MAX_OUTER_ITERATIONS,
        "hammerstein_tol": HAMMERSTEIN_TOLERANCE,
    },
    "inequalities": {"samples": DEFAULT_SAMPLES},
}
TOP_LEVEL_KEYS = {"subcommand", "seed", "output_dir"}
# None defaults that are optional rather than required
OPTIONAL_NONE_KEYS = {("kernel", "c"), ("optimize", "theta0")}

REQUIRED_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "solve-state": ("mesh", "problem", "bounds", "regularization", "control"),
    "solve-hammerstein": ("mesh", "problem", "bounds", "regularization", "control", "kernel"),
    "optimize": ("mesh", "problem", "bounds", "control", "kernel", "optimize"),
    "sweep": ("mesh", "problem", "bounds", "control"),
    "check-inequalities": (),
}


@dataclass(frozen=True)
class MeshConfig:
    dim: int
    n: int


@dataclass(frozen=True)
class ProblemConfig:
    p: float
    f: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p) and self.p >= 2.0):
            raise ConfigurationError(f"problem.p={self.p} violates the constraint 2 ≤ p < ∞")
        if not math.isfinite(self.f):
            raise ConfigurationError("problem.f must be finite")


@dataclass(frozen=True)
class ControlConfig:
    """A named fixture, an explicit scheme with parameters, or a control CSV."""

    name: str = ""
    scheme: str = ""
    theta: Tuple[float, ...] = ()
    file: str = ""

    def __post_init__(self) -> None:
        if self.name and self.name not in NAMED_CONTROLS:
            raise ConfigurationError(
                f"unknown control '{self.name}'; expected one of {list(NAMED_CONTROLS)}"
            )
        if self.scheme and self.scheme not in SCHEME_LENGTHS:
            raise ConfigurationError(
                f"unknown control scheme '{self.scheme}'; expected one of {sorted(SCHEME_LENGTHS)}"
            )
        if self.scheme and self.theta and len(self.theta) != SCHEME_LENGTHS[self.scheme]:
            raise ConfigurationError(
                f"control.theta has {len(self.theta)} entries; scheme '{self.scheme}' "
                f"takes {SCHEME_LENGTHS[self.scheme]}"
            )
        if not (self.name or self.scheme or self.file):
            raise ConfigurationError("control needs one of 'name', 'scheme' or 'file'")


@dataclass(frozen=True)
class KernelConfig:
    id: str
    c: Optional[float] = None
    sigma: float = DEFAULT_KERNEL_SIGMA

    def __post_init__(self) -> None:
        if self.id not in KERNEL_IDS:
            raise ConfigurationError(
                f"unknown kernel.id '{self.id}'; expected one of {list(KERNEL_IDS)}"
            )
        if self.c is not None and self.c < 0.0:
            raise ConfigurationError(f"kernel.c must be >= 0, got {self.c}")
        if not self.sigma > 0.0:
            raise ConfigurationError(f"kernel.sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class OptimizeConfig:
    method: str = "nelder-mead"
    budget: int = DEFAULT_BUDGET
    theta0: Tuple[float, ...] = ()
    target_theta: Tuple[float, ...] = ()
    target: float = 0.0
    tv_penalty_weight: float = DEFAULT_TV_PENALTY
    regularized: bool = True
    value_convergence: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown optimize.method '{self.method}'; expected one of {list(METHODS)}"
            )
        if self.budget < 10:
            raise ConfigurationError(f"optimize.budget must be >= 10, got {self.budget}")
        if self.tv_penalty_weight < 0.0:
            raise ConfigurationError("optimize.tv_penalty_weight must be >= 0")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = STATE_TOLERANCE
    max_iter: int = MAX_OUTER_ITERATIONS
    hammerstein_tol: float = HAMMERSTEIN_TOLERANCE

    def __post_init__(self) -> None:
        if not (self.tol > 0.0 and self.hammerstein_tol > 0.0):
            raise ConfigurationError("solver tolerances must be > 0")
        if self.max_iter < 1:
            raise ConfigurationError("solver.max_iter must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one run."""

    subcommand: str
    seed: int
    output_dir: Path
    raw: Dict[str, Any]
    mesh: Optional[MeshConfig] = None
    problem: Optional[ProblemConfig] = None
    bounds: Optional[ControlBounds] = None
    regularization: Optional[RegParams] = None
    control: Optional[ControlConfig] = None
    kernel: Optional[KernelConfig] = None
    schedule: Optional[SweepSchedule] = None
    optimize: Optional[OptimizeConfig] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    samples: int = DEFAULT_SAMPLES

    def canonical_json(self) -> str:
        """Sorted, whitespace-free JSON of the raw config, the hashing input."""
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` (or top-level ``key=value``) overrides.

    Values are read as TOML literals, falling back to plain strings.
    """
    for override in overrides:
        if "=" not in override:
            raise ConfigurationError(f"override '{override}' must look like section.key=value")
        path, text = override.split("=", 1)
        keys = [part.strip() for part in path.strip().split(".") if part.strip()]
        if not 1 <= len(keys) <= 2:
            raise ConfigurationError(f"override key '{path}' must be 'key' or 'section.key'")
        target = data
        for key in keys[:-1]:
            section = target.setdefault(key, {})
            if not isinstance(section, dict):
                raise ConfigurationError(f"'{key}' is not a section")
            target = section
        target[keys[-1]] = _parse_value(text.strip())
        logger.debug(f"override {'.'.join(keys)} = {target[keys[-1]]!r}")
    return data


def _section(data: Mapping[str, Any], name: str) -> Dict[str, Any]:
    """Merge a section with its defaults, rejecting unknown and missing keys."""
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigurationError(f"'{name}' must be a table")
    allowed = SECTION_KEYS[name]
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    merged = dict(allowed)
    merged.update(raw)
    missing = [key for key, value in merged.items() if value is None and key not in raw]
    missing = [key for key in missing if (name, key) not in OPTIONAL_NONE_KEYS]
    if missing:
        raise ConfigurationError(f"missing required key '{name}.{missing[0]}'")
    return merged


def _floats(values: Any, key: str) -> Tuple[float, ...]:
    if values is None:
        return ()
    if not isinstance(values, (list, tuple)):
        raise ConfigurationError(f"'{key}' must be an array of numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"'{key}' must be an array of numbers") from exc


def _number(section: Mapping[str, Any], name: str, key: str, kind: type = float) -> Any:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"'{name}.{key}' must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigurationError(f"'{name}.{key}' must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _build_schedule(section: Mapping[str, Any]) -> SweepSchedule:
    epsilons = _floats(section["epsilons"], "schedule.epsilons")
    ks = _floats(section["ks"], "schedule.ks")
    if epsilons or ks:
        if len(epsilons) != len(ks):
            raise ConfigurationError("schedule.epsilons and schedule.ks must have equal length")
        return SweepSchedule(tuple(zip(epsilons, ks)))
    steps = _number(section, "schedule", "steps", int)
    if steps < 1:
        raise ConfigurationError("schedule.steps must be >= 1")
    return default_schedule(steps)


def validate_config(data: Dict[str, Any], subcommand: Optional[str] = None) -> RunConfig:
    """Turn a raw mapping into a RunConfig.

    Raises:
        ConfigurationError: On unknown sections or keys, missing keys, or
            out-of-range values.
    """
    unknown = sorted(set(data) - TOP_LEVEL_KEYS - set(SECTION_KEYS))
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    command = subcommand or data.get("subcommand")
    if command is None:
        raise ConfigurationError("missing required key 'subcommand'")
    if command not in SUBCOMMANDS:
        raise ConfigurationError(
            f"unknown subcommand '{command}'; expected one of {list(SUBCOMMANDS)}"
        )
    data = dict(data)
    data["subcommand"] = command
    data.setdefault("seed", DEFAULT_SEED)

    for name in REQUIRED_SECTIONS[command]:
        if name not in data:
            raise ConfigurationError(f"missing required section [{name}] for '{command}'")

    settings: Dict[str, Any] = {}
    if "mesh" in data:
        mesh = _section(data, "mesh")
        settings["mesh"] = MeshConfig(
            dim=_number(mesh, "mesh", "dim", int), n=_number(mesh, "mesh", "n", int)
        )
        if settings["mesh"].dim not in (1, 2) or settings["mesh"].n < 2:
            raise ConfigurationError("mesh needs dim in {1, 2} and n >= 2")
    if "problem" in data:
        problem = _section(data, "problem")
        settings["problem"] = ProblemConfig(
            p=_number(problem, "problem", "p"), f=_number(problem, "problem", "f")
        )
    if "bounds" in data:
        bounds = _section(data, "bounds")
        settings["bounds"] = ControlBounds(
            **{key: _number(bounds, "bounds", key) for key in ("xi1", "xi2", "alpha", "gamma")}
        )
    if "regularization" in data:
        reg = _section(data, "regularization")
        settings["regularization"] = RegParams(
            **{key: _number(reg, "regularization", key) for key in ("epsilon", "k", "delta")}
        )
    if "control" in data:
        control = _section(data, "control")
        settings["control"] = ControlConfig(
            name=str(control["name"]),
            scheme=str(control["scheme"]),
            theta=_floats(control["theta"], "control.theta"),
            file=str(control["file"]),
        )
    if "kernel" in data:
        kernel = _section(data, "kernel")
        settings["kernel"] = KernelConfig(
            id=str(kernel["id"]),
            c=None if kernel["c"] is None else _number(kernel, "kernel", "c"),
            sigma=_number(kernel, "kernel", "sigma"),
        )
    if command == "sweep" or "schedule" in data:
        settings["schedule"] = _build_schedule(_section(data, "schedule"))
    if "optimize" in data:
        opt = _section(data, "optimize")
        settings["optimize"] = OptimizeConfig(
            method=str(opt["method"]),
            budget=_number(opt, "optimize", "budget", int),
            theta0=_floats(opt["theta0"], "optimize.theta0"),
            target_theta=_floats(opt["target_theta"], "optimize.target_theta"),
            target=_number(opt, "optimize", "target"),
            tv_penalty_weight=_number(opt, "optimize", "tv_penalty_weight"),
            regularized=bool(opt["regularized"]),
            value_convergence=bool(opt["value_convergence"]),
        )
    solver = _section(data, "solver")
    settings["solver"] = SolverConfig(
        tol=_number(solver, "solver", "tol"),
        max_iter=_number(solver, "solver", "max_iter", int),
        hammerstein_tol=_number(solver, "solver", "hammerstein_tol"),
    )
    inequalities = _section(data, "inequalities")
    settings["samples"] = _number(inequalities, "inequalities", "samples", int)
    if settings["samples"] < 1:
        raise ConfigurationError("inequalities.samples must be >= 1")

    if command == "optimize":
        _check_optimize(settings)
    if command in ("solve-state", "solve-hammerstein") and not (
        settings["control"].name or settings["control"].theta or settings["control"].file
    ):
        raise ConfigurationError("control.theta is required when control.scheme is used")

    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigurationError(f"seed must be a nonnegative integer, got {seed!r}")

    return RunConfig(
        subcommand=command,
        seed=seed,
        output_dir=Path(data.get("output_dir", str(DEFAULT_OUTPUT_DIR))),
        raw=data,
        **settings,
    )


def _check_optimize(settings: Dict[str, Any]) -> None:
    control: ControlConfig = settings["control"]
    opt: OptimizeConfig = settings["optimize"]
    if not control.scheme:
        raise ConfigurationError("optimize needs control.scheme")
    length = SCHEME_LENGTHS[control.scheme]
    candidates = (("optimize.theta0", opt.theta0), ("optimize.target_theta", opt.target_theta))
    for key, values in candidates:
        if values and len(values) != length:
            raise ConfigurationError(
                f"'{key}' has {len(values)} entries; scheme '{control.scheme}' takes {length}"
            )
    if not (opt.theta0 or control.theta):
        raise ConfigurationError("missing required key 'optimize.theta0'")
    if opt.regularized and "regularization" not in settings:
        raise ConfigurationError(
            "missing required section [regularization] for a regularized optimize run"
        )
    if not opt.regularized and settings["problem"].p != 2.0:
        raise ConfigurationError("optimize.regularized = false needs p = 2")
    if opt.value_convergence and control.scheme != "constant-diagonal":
        raise ConfigurationError("optimize.value_convergence needs the constant-diagonal scheme")


def parse_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    subcommand: Optional[str] = None,
) -> RunConfig:
    """Read, override and validate a run configuration.

    Args:
        path: TOML file; ``None`` starts from an empty mapping.
        overrides: ``section.key=value`` strings applied after reading.
        subcommand: Subcommand forced by the CLI (wins over the file).

    Raises:
        ConfigurationError: If the file is missing or malformed (duplicate
            keys report the line number) or validation fails.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"failed to parse {path}: {e}") from e
    data = apply_overrides(data, overrides)
    config = validate_config(data, subcommand)
    logger.info(f"Loaded {config.subcommand} config (seed={config.seed})")
    return config


def example_config_lines() -> List[str]:
    """Minimal solve-state configuration, used by ``--help`` and the docs."""
    return [
        'subcommand = "solve-state"',
        "[mesh]",
        "dim = 1",
        "n = 32",
        "[problem]",
        "p = 4.0",
        "f = 1.0",
        "[bounds]",
        "xi1 = 0.5",
        "xi2 = 2.0",
        "alpha = 0.5",
        "gamma = 10.0",
        "[regularization]",
        "epsilon = 1e-3",
        "k = 8.0",
        "[control]",
        'name = "identity"',
    ]
