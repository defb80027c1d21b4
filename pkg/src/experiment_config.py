"""Experiment configuration: JSON parsing, validation, echo-back, and run plans.

A config names exactly one oracle and one algorithm, plus repeats, seeds,
an optional sweep, and where results go. Every default is made explicit in
the resolved echo-back that the runner stores next to its results.
"""

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from config.presets import preset_text
from config.settings import DEFAULT_REPLICA_BLOCK
from src.errors import ConfigParseError, ConfigurationError, InvalidInputError
from src.estimators import baseline_schedule, lsr_schedule, tsla_schedule
from src.labels import SOURCES, SOURCE_FIXED, SOURCE_UNIFORM, LabelDistribution, SmoothingSpec
from src.optimizer import WINDOW_ALL, WINDOW_SECOND_STAGE, StepDecay, TslaSchedule

logger = logging.getLogger("lsr-lab.experiment-config")

ALGORITHMS = ("baseline", "lsr", "tsla")
SCHEDULE_MODES = ("explicit", "auto")
UNITS = ("iteration", "epoch")
SWEEP_KINDS = ("drop", "theta")
CHECKS = ("bounds", "ordering", "drop_accuracy")

PRESET_PREFIX = "preset:"

REQUIRED = object()


@dataclass(frozen=True)
class SyntheticOracleConfig:
    kind: str = "synthetic"
    objective: str = "pl_sine"
    dim: int = 1
    mu: Optional[float] = None
    curvature: float = 1.0
    w_star: Optional[Tuple[float, ...]] = None
    sigma2: float = 1.0
    delta: float = 0.0
    bias_fraction: float = 0.0
    w0: Union[float, Tuple[float, ...]] = 3.0


@dataclass(frozen=True)
class DatasetConfig:
    path: Optional[str] = None
    num_classes: int = 10
    num_features: int = 2
    n: int = 200
    n_test: int = 0
    class_separation: float = 3.0
    label_noise_rate: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class TeacherConfig:
    steps: int = 500
    eta: float = 0.5
    temperature: float = 1.0


@dataclass(frozen=True)
class ClassificationOracleConfig:
    kind: str = "classification"
    model: str = "softmax_linear"
    hidden: int = 0
    init_scale: float = 0.0
    init_seed: int = 0
    batch_size: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    teacher: Optional[TeacherConfig] = None


@dataclass(frozen=True)
class AlgorithmConfig:
    """Algorithm settings; T, T1, T2, budget, and decay interval are in ``unit``."""

    kind: str
    schedule: str = "explicit"
    epsilon: Optional[float] = None
    eta: Optional[float] = None
    T: Optional[int] = None
    theta: Optional[float] = None
    source: str = SOURCE_UNIFORM
    fixed: Optional[Tuple[float, ...]] = None
    eta1: Optional[float] = None
    T1: Optional[int] = None
    eta2: Optional[float] = None
    T2: Optional[int] = None
    budget: Optional[int] = None
    unit: str = "iteration"
    lr_decay_every: Optional[int] = None
    lr_decay_factor: float = 0.1


@dataclass(frozen=True)
class SweepConfig:
    kind: str
    values: Tuple[float, ...]
    include_reference: bool = False


@dataclass(frozen=True)
class VerifyConfig:
    epsilon: Optional[float] = None
    checks: Tuple[str, ...] = ("bounds",)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    oracle: Union[SyntheticOracleConfig, ClassificationOracleConfig]
    algorithm: AlgorithmConfig
    repeats: int = 1
    base_seed: int = 0
    sweep: Optional[SweepConfig] = None
    output_dir: Optional[str] = None
    eval_stride: Optional[int] = None
    replica_block: int = DEFAULT_REPLICA_BLOCK
    workers: int = 1
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    @property
    def needs_constants(self) -> bool:
        return self.algorithm.schedule == "auto"

    @property
    def resolved_output_dir(self) -> str:
        return self.output_dir or f"results/{slugify(self.name)}"


@dataclass(frozen=True)
class RunSpec:
    """One row of the run plan: a labelled algorithm instance run for every seed."""

    label: str
    sweep_index: int
    sweep_value: Optional[float]
    algorithm: str
    eta: Optional[float] = None
    T: Optional[int] = None
    smoothing: Optional[SmoothingSpec] = None
    schedule: Optional[TslaSchedule] = None
    lr_schedule: Optional[StepDecay] = None

    @property
    def window(self) -> str:
        return WINDOW_SECOND_STAGE if self.algorithm == "tsla" else WINDOW_ALL

    @property
    def slug(self) -> str:
        return slugify(self.label)


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


# --- Parsing ---


class _Parser:
    def __init__(self, text: str):
        self.text = text

    def _scan(self, start: int, end: int):
        """Yield (offset, depth) of every string opening in text[start:end]."""
        depth, in_string, escaped = 0, False, False
        for pos in range(start, end):
            ch = self.text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
                yield pos, depth
            elif ch in "{[":
                depth += 1
            elif ch in "}]":
                depth -= 1

    def _object_end(self, open_at: int) -> int:
        """Offset just past the object whose '{' sits at ``open_at``."""
        depth, in_string, escaped = 0, False, False
        for pos in range(open_at, len(self.text)):
            ch = self.text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return pos + 1
        return len(self.text)

    def _member(self, key: str, start: int, end: int) -> Optional[int]:
        """Offset of ``"key":`` directly inside the object spanning [start, end)."""
        needle = f'"{key}"'
        for pos, depth in self._scan(start, end):
            if depth == 1 and self.text.startswith(needle, pos):
                if self.text[pos + len(needle) :].lstrip().startswith(":"):
                    return pos
        return None

    def line_of(self, path: str) -> Optional[int]:
        """Line of the deepest key of a dotted path, searched object by object.

        A missing key reports the line of its enclosing key.
        """
        start = self.text.find("{")
        if start < 0 or not path:
            return None
        found = None
        for key in path.split("."):
            end = self._object_end(start)
            offset = self._member(key, start, end)
            if offset is None:
                break
            found = offset
            colon = self.text.index(":", offset + len(key) + 2)
            rest = self.text[colon + 1 :]
            value_at = colon + 1 + (len(rest) - len(rest.lstrip()))
            if not self.text.startswith("{", value_at):
                break
            start = value_at
        if found is None:
            return None
        return self.text.count("\n", 0, found) + 1

    def fail(self, path: str, message: str) -> ConfigParseError:
        return ConfigParseError(message, field=path, line=self.line_of(path))

    def section(
        self,
        raw: Any,
        path: str,
        schema: Dict[str, Tuple[Any, Callable[[Any, str], Any]]],
    ) -> Dict[str, Any]:
        """Validate one JSON object against {key: (default, coerce)}."""
        if not isinstance(raw, dict):
            raise self.fail(path, "expected a JSON object")
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            where = f"{path}.{unknown[0]}" if path else unknown[0]
            raise self.fail(where, f"unknown key '{unknown[0]}'")
        out = {}
        for key, (default, coerce) in schema.items():
            where = f"{path}.{key}" if path else key
            if key not in raw or raw[key] is None:
                if default is REQUIRED:
                    raise self.fail(where, f"missing required key '{key}'")
                out[key] = default
                continue
            out[key] = coerce(raw[key], where)
        return out

    # coercers

    def integer(self, minimum: Optional[int] = None):
        def coerce(value, where):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise self.fail(where, f"expected an integer, got {value!r}")
            value = int(value)
            if minimum is not None and value < minimum:
                raise self.fail(where, f"must be >= {minimum}, got {value}")
            return value
        return coerce

    def real(self, low: Optional[float] = None, high: Optional[float] = None,
             strict_low: bool = False, strict_high: bool = False):
        def coerce(value, where):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.fail(where, f"expected a number, got {value!r}")
            value = float(value)
            if low is not None and (value < low or (strict_low and value == low)):
                raise self.fail(where, f"{value} is below the allowed range")
            if high is not None and (value > high or (strict_high and value == high)):
                raise self.fail(where, f"{value} is above the allowed range")
            return value
        return coerce

    def choice(self, options):
        def coerce(value, where):
            if value not in options:
                raise self.fail(where, f"expected one of {list(options)}, got {value!r}")
            return value
        return coerce

    def string(self, value, where):
        if not isinstance(value, str) or not value:
            raise self.fail(where, f"expected a non-empty string, got {value!r}")
        return value

    def boolean(self, value, where):
        if not isinstance(value, bool):
            raise self.fail(where, f"expected true or false, got {value!r}")
        return value

    def vector(self, value, where):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, list) or not value:
            raise self.fail(where, "expected a number or a non-empty list of numbers")
        return tuple(self.real()(v, where) for v in value)

    def real_list(self, value, where):
        if not isinstance(value, list) or not value:
            raise self.fail(where, "expected a non-empty list of numbers")
        return tuple(self.real(0.0)(v, where) for v in value)

    def string_list(self, options):
        def coerce(value, where):
            if not isinstance(value, list):
                raise self.fail(where, "expected a list")
            return tuple(self.choice(options)(v, where) for v in value)
        return coerce


def _parse_oracle(p: _Parser, raw: Any):
    if not isinstance(raw, dict):
        raise p.fail("oracle", "expected a JSON object")
    kind = raw.get("kind")
    if kind == "synthetic":
        values = p.section(raw, "oracle", {
            "kind": (REQUIRED, p.string),
            "objective": ("pl_sine", p.choice(("pl_sine", "shifted_quadratic"))),
            "dim": (1, p.integer(1)),
            "mu": (None, p.real(0.0, strict_low=True)),
            "curvature": (1.0, p.real(0.0, strict_low=True)),
            "w_star": (None, p.vector),
            "sigma2": (1.0, p.real(0.0)),
            "delta": (0.0, p.real(0.0)),
            "bias_fraction": (0.0, p.real(0.0, 1.0)),
            "w0": (3.0, p.vector),
        })
        if isinstance(values["w_star"], float):
            values["w_star"] = (values["w_star"],) * values["dim"]
        return SyntheticOracleConfig(**values)
    if kind == "classification":
        values = p.section(raw, "oracle", {
            "kind": (REQUIRED, p.string),
            "model": ("softmax_linear", p.choice(("softmax_linear", "mlp_one_hidden"))),
            "hidden": (0, p.integer(0)),
            "init_scale": (0.0, p.real(0.0)),
            "init_seed": (0, p.integer()),
            "batch_size": (1, p.integer(1)),
            "dataset": ({}, lambda v, w: v),
            "teacher": (None, lambda v, w: v),
        })
        values["dataset"] = DatasetConfig(**p.section(values["dataset"], "oracle.dataset", {
            "path": (None, p.string),
            "num_classes": (10, p.integer(2)),
            "num_features": (2, p.integer(1)),
            "n": (200, p.integer(1)),
            "n_test": (0, p.integer(0)),
            "class_separation": (3.0, p.real(0.0)),
            "label_noise_rate": (0.0, p.real(0.0, 1.0, strict_high=True)),
            "seed": (0, p.integer()),
        }))
        if values["teacher"] is not None:
            values["teacher"] = TeacherConfig(**p.section(values["teacher"], "oracle.teacher", {
                "steps": (500, p.integer(0)),
                "eta": (0.5, p.real(0.0, strict_low=True)),
                "temperature": (1.0, p.real(0.0, strict_low=True)),
            }))
        if values["model"] == "mlp_one_hidden" and values["hidden"] < 1:
            raise p.fail("oracle.hidden", "mlp_one_hidden needs hidden >= 1")
        return ClassificationOracleConfig(**values)
    raise p.fail("oracle.kind", f"expected 'synthetic' or 'classification', got {kind!r}")


def _parse_algorithm(p: _Parser, raw: Any, sweep_kind: Optional[str]) -> AlgorithmConfig:
    drop_sweep = sweep_kind == "drop"
    values = p.section(raw, "algorithm", {
        "kind": (REQUIRED, p.choice(ALGORITHMS)),
        "schedule": ("explicit", p.choice(SCHEDULE_MODES)),
        "epsilon": (None, p.real(0.0, 1.0, strict_low=True, strict_high=True)),
        "eta": (None, p.real(0.0, strict_low=True)),
        "T": (None, p.integer(0)),
        "theta": (None, p.real(0.0, 1.0, strict_high=True)),
        "source": (SOURCE_UNIFORM, p.choice(SOURCES)),
        "fixed": (None, p.vector),
        "eta1": (None, p.real(0.0, strict_low=True)),
        "T1": (None, p.integer(0)),
        "eta2": (None, p.real(0.0, strict_low=True)),
        "T2": (None, p.integer(0)),
        "budget": (None, p.integer(1)),
        "unit": ("iteration", p.choice(UNITS)),
        "lr_decay_every": (None, p.integer(1)),
        "lr_decay_factor": (0.1, p.real(0.0, 1.0, strict_low=True)),
    })
    kind = values["kind"]
    if values["schedule"] == "auto" and values["epsilon"] is None:
        raise p.fail("algorithm.epsilon", "an auto schedule needs epsilon")
    if values["source"] == SOURCE_FIXED and values["fixed"] is None:
        raise p.fail("algorithm.fixed", "source 'fixed' needs a fixed distribution")
    if isinstance(values["fixed"], float):
        raise p.fail("algorithm.fixed", "expected a list of probabilities")
    if values["fixed"] is not None:
        try:
            LabelDistribution(values["fixed"])
        except InvalidInputError as e:
            raise p.fail("algorithm.fixed", str(e))

    explicit = values["schedule"] == "explicit"
    if kind in ("baseline", "lsr") and explicit:
        for key in ("eta", "T"):
            if values[key] is None:
                raise p.fail(f"algorithm.{key}", f"explicit {kind} needs '{key}'")
    if kind == "baseline":
        values["theta"] = 0.0
    if kind == "lsr" and values["theta"] is None and explicit and sweep_kind != "theta":
        raise p.fail("algorithm.theta", "explicit lsr needs 'theta'")
    if kind == "tsla" and explicit:
        needed = ("theta", "eta1", "eta2") if drop_sweep else ("theta", "eta1", "T1", "eta2", "T2")
        for key in needed:
            if values[key] is None:
                raise p.fail(f"algorithm.{key}", f"explicit tsla needs '{key}'")
        if values["theta"] == 0.0:
            raise p.fail("algorithm.theta", "tsla needs theta in (0, 1)")
        if not drop_sweep and values["T2"] < 1:
            raise p.fail("algorithm.T2", "tsla needs T2 >= 1")
    if drop_sweep and values["budget"] is None:
        raise p.fail("algorithm.budget", "a drop sweep needs a total 'budget'")
    return AlgorithmConfig(**values)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"malformed JSON: {e.msg}", line=e.lineno)
    p = _Parser(text)
    top = p.section(raw, "", {
        "name": (REQUIRED, p.string),
        "oracle": (REQUIRED, lambda v, w: v),
        "algorithm": (REQUIRED, lambda v, w: v),
        "repeats": (1, p.integer(1)),
        "base_seed": (0, p.integer()),
        "sweep": (None, lambda v, w: v),
        "output_dir": (None, p.string),
        "eval_stride": (None, p.integer(1)),
        "replica_block": (DEFAULT_REPLICA_BLOCK, p.integer(1)),
        "workers": (1, p.integer(1)),
        "verify": ({}, lambda v, w: v),
    })

    sweep = None
    if top["sweep"] is not None:
        sweep = SweepConfig(**p.section(top["sweep"], "sweep", {
            "kind": (REQUIRED, p.choice(SWEEP_KINDS)),
            "values": (REQUIRED, p.real_list),
            "include_reference": (False, p.boolean),
        }))

    oracle = _parse_oracle(p, top["oracle"])
    algorithm = _parse_algorithm(p, top["algorithm"], sweep.kind if sweep is not None else None)

    if algorithm.unit == "epoch" and oracle.kind != "classification":
        raise p.fail("algorithm.unit", "epoch units need a classification oracle")
    if oracle.kind == "synthetic" and algorithm.source != SOURCE_UNIFORM:
        raise p.fail("algorithm.source", "synthetic oracles take noise, not label sources")

    if sweep is not None:
        if sweep.kind == "drop":
            if algorithm.kind != "tsla":
                raise p.fail("sweep.kind", "drop sweeps need a tsla algorithm")
            for value in sweep.values:
                if value > algorithm.budget:
                    raise p.fail(
                        "sweep.values",
                        f"drop point {value:g} exceeds the budget of {algorithm.budget}",
                    )
        else:
            if algorithm.kind != "lsr":
                raise p.fail("sweep.kind", "theta sweeps need an lsr algorithm")
            if any(v >= 1.0 for v in sweep.values):
                raise p.fail("sweep.values", "theta values must lie in [0, 1)")

    verify = VerifyConfig(**p.section(top["verify"], "verify", {
        "epsilon": (algorithm.epsilon, p.real(0.0, 1.0, strict_low=True, strict_high=True)),
        "checks": (("bounds",), p.string_list(CHECKS)),
    }))

    config = ExperimentConfig(
        name=top["name"],
        oracle=oracle,
        algorithm=algorithm,
        repeats=top["repeats"],
        base_seed=top["base_seed"],
        sweep=sweep,
        output_dir=top["output_dir"],
        eval_stride=top["eval_stride"],
        replica_block=top["replica_block"],
        workers=top["workers"],
        verify=verify,
    )
    logger.debug("Parsed config '%s'", config.name)
    return config


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def load_config_source(source: str) -> ExperimentConfig:
    """A config file path, or 'preset:<name>' for a built-in preset."""
    if source.startswith(PRESET_PREFIX):
        name = source[len(PRESET_PREFIX) :]
        try:
            return parse_config(preset_text(name))
        except KeyError as e:
            raise ConfigParseError(str(e.args[0]), field="preset")
    return load_config(source)


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """Fully resolved config, every default explicit."""

    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    out = plain(asdict(config))
    out["output_dir"] = config.resolved_output_dir
    return out


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


# --- Run plans ---


def _smoothing(algorithm: AlgorithmConfig, theta: float) -> SmoothingSpec:
    fixed = LabelDistribution(algorithm.fixed) if algorithm.fixed is not None else None
    return SmoothingSpec(theta, algorithm.source, fixed)


def _lr_schedule(algorithm: AlgorithmConfig, epoch_length: int) -> Optional[StepDecay]:
    if algorithm.lr_decay_every is None:
        return None
    return StepDecay(algorithm.lr_decay_every * _unit_length(algorithm, epoch_length),
                     algorithm.lr_decay_factor)


def _unit_length(algorithm: AlgorithmConfig, epoch_length: int) -> int:
    return epoch_length if algorithm.unit == "epoch" else 1


def _fmt(value: float) -> str:
    return f"{value:g}"


def _unique_labels(specs: List[RunSpec]) -> List[RunSpec]:
    """Sweep rows share result files by label, so labels must not collide."""
    seen = set()
    for spec in specs:
        if spec.label in seen:
            raise ConfigurationError(f"sweep values collide on run label {spec.label!r}")
        seen.add(spec.label)
    return specs


def run_plan(
    config: ExperimentConfig,
    constants=None,
    epoch_length: int = 1,
    include_sweep: bool = True,
) -> List[RunSpec]:
    """Expand a config into labelled run specs, sweep rows ordered by value.

    Drop point 0 is the baseline (all one-hot at eta2) and drop point =
    budget is LSR (all smoothed at eta1); both carry those labels.
    """
    algorithm = config.algorithm
    unit = _unit_length(algorithm, epoch_length)
    decay = _lr_schedule(algorithm, epoch_length)
    auto = algorithm.schedule == "auto"
    if auto and constants is None:
        raise ConfigurationError("an auto schedule needs problem constants")

    if algorithm.kind == "baseline":
        if auto:
            plan = baseline_schedule(constants, algorithm.epsilon)
            eta, T = plan.eta, plan.T
        else:
            eta, T = algorithm.eta, algorithm.T * unit
        return [RunSpec("baseline", 0, None, "baseline", eta, T, _smoothing(algorithm, 0.0),
                        lr_schedule=decay)]

    if algorithm.kind == "lsr":
        if auto:
            plan = lsr_schedule(constants, algorithm.epsilon)
            eta, T = plan.eta, plan.T
            theta = algorithm.theta if algorithm.theta is not None else plan.theta
        else:
            eta, T, theta = algorithm.eta, algorithm.T * unit, algorithm.theta
        if config.sweep is None or not include_sweep:
            label = "LSR" if theta > 0 else "baseline"
            return [RunSpec(label, 0, None, "lsr", eta, T, _smoothing(algorithm, theta),
                            lr_schedule=decay)]
        specs = []
        for index, value in enumerate(sorted(set(config.sweep.values))):
            label = f"LSR(theta={_fmt(value)})" if value > 0 else "baseline"
            specs.append(RunSpec(label, index, value, "lsr", eta, T,
                                 _smoothing(algorithm, value), lr_schedule=decay))
        return _unique_labels(specs)

    if auto:
        full = tsla_schedule(constants, algorithm.epsilon)
        theta = algorithm.theta if algorithm.theta is not None else full.theta
        eta1, eta2 = full.eta1, full.eta2
        T1, T2 = full.T1, full.T2
    else:
        theta, eta1, eta2 = algorithm.theta, algorithm.eta1, algorithm.eta2
        T1 = None if algorithm.T1 is None else algorithm.T1 * unit
        T2 = None if algorithm.T2 is None else algorithm.T2 * unit

    if config.sweep is None or not include_sweep:
        if T1 is None:
            # drop-sweep config run without its sweep: first drop point
            T1 = int(round(min(config.sweep.values) * unit))
            T2 = algorithm.budget * unit - T1
        schedule = TslaSchedule(theta, eta1, T1, eta2, T2)
        return [RunSpec("TSLA", 0, None, "tsla", schedule=schedule,
                        smoothing=_smoothing(algorithm, theta), lr_schedule=decay)]

    budget = algorithm.budget * unit
    values = sorted(set(config.sweep.values))
    if config.sweep.include_reference:
        values = sorted(set(values) | {0.0, float(algorithm.budget)})
    specs = []
    for index, value in enumerate(values):
        drop = int(round(value * unit))
        if drop == 0:
            specs.append(RunSpec("baseline", index, value, "baseline", eta2, budget,
                                 _smoothing(algorithm, 0.0), lr_schedule=decay))
        elif drop >= budget:
            specs.append(RunSpec("LSR", index, value, "lsr", eta1, budget,
                                 _smoothing(algorithm, theta), lr_schedule=decay))
        else:
            schedule = TslaSchedule(theta, eta1, drop, eta2, budget - drop)
            specs.append(RunSpec(f"TSLA({_fmt(value)})", index, value, "tsla",
                                 schedule=schedule, smoothing=_smoothing(algorithm, theta),
                                 lr_schedule=decay))
    return _unique_labels(specs)
