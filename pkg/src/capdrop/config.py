"""Run configuration: JSON documents, command-line overrides and validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

from .model_core import FixedValue, InitPolicy, ModelParams, Scenario, UniformDraw
from .sde_engine import Scheme, SimConfig

COMMANDS = ("simulate", "diagram", "scan", "validate", "moments", "crossings")
STUDIES = ("moments", "convergence", "ci")
DEFAULT_DT = 1e-3


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ExperimentKnobs:
    study: str = "moments"
    sims_per_n: int = 20
    n_grid_max: float | None = None
    t_window: tuple[float, float] = (25.0, 27.0)
    n_combos: int = 50
    sims_per_combo: int = 100
    moment_window: tuple[float, float] = (29.0, 29.5)
    ci_windows: tuple[tuple[float, float], ...] = ((12.5, 14.5), (97.5, 99.5))
    ci_levels: tuple[float, ...] = (0.50, 0.75, 0.85, 0.90, 0.95, 0.99, 0.995, 0.999)
    ci_estimator: str = "mean"
    ci_sample_size: int = 100
    epsilon: float = 0.1
    sampler_margin: float = 0.1
    c1_values: tuple[float, ...] = (0.5, 1.0, 2.0)
    sigma_values: tuple[float, ...] = (0.0, 0.5, 1.0)
    n_c: float = 50.0
    crossing_level: float | None = None
    record_every: int = 100


@dataclass(frozen=True)
class RunConfig:
    command: str = "simulate"
    model: ModelParams = field(default_factory=ModelParams)
    n_total: float = 150.0
    n_cut: float | None = 150.0
    init: InitPolicy = field(default_factory=UniformDraw)
    sim: SimConfig = field(default_factory=SimConfig)
    experiment: ExperimentKnobs = field(default_factory=ExperimentKnobs)
    paths: int = 20
    workers: int = 1
    output_dir: str = "results"
    emit_svg: bool = False

    def scenario(self) -> Scenario:
        return Scenario(self.model, self.n_total, self.n_cut, self.init)


# --------------------------------------------------------------------------
# typed field readers


def _num(path: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _int(path: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return value


def _opt_num(path: str, value: Any) -> float | None:
    return None if value is None else _num(path, value)


def _bool(path: str, value: Any) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def _str(path: str, value: Any, choices: tuple[str, ...] | None = None) -> str:
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(path, f"expected one of {', '.join(choices)}, got {value!r}")
    return value


def _pair(path: str, value: Any) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(path, f"expected [lo, hi], got {value!r}")
    lo, hi = _num(f"{path}[0]", value[0]), _num(f"{path}[1]", value[1])
    if lo > hi:
        raise ConfigError(path, f"lo > hi in {value!r}")
    return lo, hi


def _nums(path: str, value: Any) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, f"expected a list of numbers, got {value!r}")
    return tuple(_num(f"{path}[{i}]", v) for i, v in enumerate(value))


def _section(path: str, value: Any, allowed: set[str]) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {value!r}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    return value


# --------------------------------------------------------------------------
# document <-> RunConfig


_MODEL_KEYS = {f.name for f in fields(ModelParams)}
_SIM_KEYS = {"t_end", "n_steps", "scheme", "master_seed", "boundary_epsilon"}
_SCENARIO_KEYS = {"n_total", "n_cut", "init"}
_TOP_KEYS = {"command", "model", "scenario", "sim", "experiment", "paths", "workers", "output_dir", "emit_svg"}

_KNOB_READERS = {
    "study": lambda p, v: _str(p, v, STUDIES),
    "sims_per_n": _int,
    "n_grid_max": _opt_num,
    "t_window": _pair,
    "n_combos": _int,
    "sims_per_combo": _int,
    "moment_window": _pair,
    "ci_windows": lambda p, v: tuple(_pair(f"{p}[{i}]", w) for i, w in enumerate(_list(p, v))),
    "ci_levels": _nums,
    "ci_estimator": lambda p, v: _str(p, v, ("mean", "quantile")),
    "ci_sample_size": _int,
    "epsilon": _num,
    "sampler_margin": _num,
    "c1_values": _nums,
    "sigma_values": _nums,
    "n_c": _num,
    "crossing_level": _opt_num,
    "record_every": _int,
}


def _list(path: str, value: Any) -> list:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, f"expected a list, got {value!r}")
    return list(value)


def _read_init(path: str, value: Any) -> InitPolicy:
    doc = _section(path, value, {"kind", "value", "lo", "hi"})
    kind = _str(f"{path}.kind", doc.get("kind", "uniform"), ("uniform", "fixed"))
    if kind == "fixed":
        if "value" not in doc:
            raise ConfigError(f"{path}.value", "required for a fixed start")
        return FixedValue(_num(f"{path}.value", doc["value"]))
    return UniformDraw(_num(f"{path}.lo", doc.get("lo", 1.0)), _opt_num(f"{path}.hi", doc.get("hi")))


def _write_init(init: InitPolicy) -> dict:
    if isinstance(init, FixedValue):
        return {"kind": "fixed", "value": init.value}
    return {"kind": "uniform", "lo": init.lo, "hi": init.hi}


def from_document(doc: Any) -> RunConfig:
    """Validate a parsed JSON document into a ``RunConfig``."""
    doc = _section("", doc, _TOP_KEYS)
    base = RunConfig()

    model_doc = _section("model", doc.get("model", {}), _MODEL_KEYS)
    model_kw = {k: _num(f"model.{k}", v) for k, v in model_doc.items()}
    try:
        model = replace(base.model, **model_kw)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None

    sc_doc = _section("scenario", doc.get("scenario", {}), _SCENARIO_KEYS)
    n_total = _num("scenario.n_total", sc_doc.get("n_total", base.n_total))
    n_cut = _opt_num("scenario.n_cut", sc_doc.get("n_cut", base.n_cut))
    init = _read_init("scenario.init", sc_doc["init"]) if "init" in sc_doc else base.init

    sim_doc = _section("sim", doc.get("sim", {}), _SIM_KEYS)
    t_end = _num("sim.t_end", sim_doc.get("t_end", base.sim.t_end))
    n_steps = sim_doc.get("n_steps")
    n_steps = int(round(t_end / DEFAULT_DT)) if n_steps is None else _int("sim.n_steps", n_steps)
    try:
        sim = SimConfig(
            t_end=t_end,
            n_steps=n_steps,
            scheme=Scheme(_str("sim.scheme", sim_doc.get("scheme", base.sim.scheme.value), tuple(s.value for s in Scheme))),
            master_seed=_int("sim.master_seed", sim_doc.get("master_seed", base.sim.master_seed)),
            boundary_epsilon=_opt_num("sim.boundary_epsilon", sim_doc.get("boundary_epsilon")),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None

    knob_doc = _section("experiment", doc.get("experiment", {}), set(_KNOB_READERS))
    knobs = replace(
        base.experiment,
        **{k: _KNOB_READERS[k](f"experiment.{k}", v) for k, v in knob_doc.items()},
    )

    cfg = RunConfig(
        command=_str("command", doc.get("command", base.command), COMMANDS),
        model=model,
        n_total=n_total,
        n_cut=n_cut,
        init=init,
        sim=sim,
        experiment=knobs,
        paths=_int("paths", doc.get("paths", base.paths)),
        workers=_int("workers", doc.get("workers", base.workers)),
        output_dir=_str("output_dir", doc.get("output_dir", base.output_dir)),
        emit_svg=_bool("emit_svg", doc.get("emit_svg", base.emit_svg)),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        cfg.scenario()
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from None
    try:
        cfg.sim.epsilon_for(cfg.n_total)
    except ValueError as exc:
        raise ConfigError("sim.boundary_epsilon", str(exc)) from None
    if cfg.paths < 1:
        raise ConfigError("paths", "must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    k = cfg.experiment
    for name in ("sims_per_n", "n_combos", "sims_per_combo", "record_every"):
        if getattr(k, name) < 1:
            raise ConfigError(f"experiment.{name}", "must be >= 1")
    if k.ci_sample_size < 2:
        raise ConfigError("experiment.ci_sample_size", "must be >= 2")
    if k.epsilon <= 0:
        raise ConfigError("experiment.epsilon", "must be > 0")
    if any(not 0 < p < 1 for p in k.ci_levels):
        raise ConfigError("experiment.ci_levels", "levels must lie in (0, 1)")
    if any(c <= 0 for c in k.c1_values):
        raise ConfigError("experiment.c1_values", "values must be > 0")
    if any(s < 0 for s in k.sigma_values):
        raise ConfigError("experiment.sigma_values", "values must be >= 0")
    if not 0 < k.n_c < cfg.model.n_max:
        raise ConfigError("experiment.n_c", "0 < n_c < n_max required")


def to_document(cfg: RunConfig) -> dict:
    """Inverse of ``from_document``; every field written explicitly."""
    knobs = {}
    for f in fields(ExperimentKnobs):
        v = getattr(cfg.experiment, f.name)
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        knobs[f.name] = v
    return {
        "command": cfg.command,
        "model": asdict(cfg.model),
        "scenario": {"n_total": cfg.n_total, "n_cut": cfg.n_cut, "init": _write_init(cfg.init)},
        "sim": {
            "t_end": cfg.sim.t_end,
            "n_steps": cfg.sim.n_steps,
            "scheme": cfg.sim.scheme.value,
            "master_seed": cfg.sim.master_seed,
            "boundary_epsilon": cfg.sim.boundary_epsilon,
        },
        "experiment": knobs,
        "paths": cfg.paths,
        "workers": cfg.workers,
        "output_dir": cfg.output_dir,
        "emit_svg": cfg.emit_svg,
    }


def serialize(cfg: RunConfig) -> bytes:
    return json.dumps(to_document(cfg), indent=2, sort_keys=True).encode("utf-8")


# flag name -> (section, key) in the document
FLAG_TARGETS = {
    "seed": ("sim", "master_seed"),
    "sigma": ("model", "sigma"),
    "c1": ("model", "c1"),
    "c2": ("model", "c2"),
    "n_total": ("scenario", "n_total"),
    "n_max": ("model", "n_max"),
    "n_cut": ("scenario", "n_cut"),
    "t_end": ("sim", "t_end"),
    "steps": ("sim", "n_steps"),
    "paths": (None, "paths"),
    "out": (None, "output_dir"),
    "svg": (None, "emit_svg"),
    "workers": (None, "workers"),
}


def parse_config(
    data: bytes | str | None = None,
    overrides: dict[str, Any] | None = None,
    command: str | None = None,
) -> RunConfig:
    """Build a ``RunConfig`` from a UTF-8 JSON document plus flag overrides.

    ``overrides`` maps flag names (``FLAG_TARGETS`` keys) to values; ``None``
    values are ignored.  Flags win over the document.
    """
    doc: dict = {}
    if data:
        try:
            text = data.decode("utf-8") if isinstance(data, bytes) else data
            doc = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError("", f"malformed config document: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("", "config document must be a JSON object")
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_TARGETS:
            raise ConfigError(flag, "unknown flag")
        section, key = FLAG_TARGETS[flag]
        if section is None:
            doc[key] = value
        else:
            sub = doc.setdefault(section, {})
            if not isinstance(sub, dict):
                raise ConfigError(section, "expected an object")
            sub[key] = value
    # a new horizon without a step count keeps the default step size
    if overrides and overrides.get("t_end") is not None and overrides.get("steps") is None:
        doc["sim"].pop("n_steps", None)
    if command is not None:
        doc["command"] = command
    return from_document(doc)
