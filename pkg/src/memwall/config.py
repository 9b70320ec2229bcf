"""Simulation configuration.

Settings resolve in this order:
1. Explicit values passed by the caller (CLI flags)
2. The MEMWALL_SEED environment variable (seed only)
3. The YAML configuration document
4. Built-in defaults
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from memwall.codec.tensor import CodecConfig
from memwall.exceptions import ConfigError
from memwall.fleet import FleetSpec, generate_fleet, read_fleet
from memwall.graph import ComputationGraph, read_graph
from memwall.graphgen import training_graph
from memwall.predictor import PredictorConfig
from memwall.selector import SelectionConfig
from memwall.traces import MIB

SEED_ENV = "MEMWALL_SEED"

_SECTIONS = (
    "seed",
    "rounds",
    "graph",
    "fleet",
    "selection",
    "predictor",
    "codec",
    "simulation",
    "ablation",
)


def _matches(expected: type, value: Any) -> bool:
    if isinstance(value, bool):
        return expected is bool
    if expected is float:
        return isinstance(value, (int, float))
    return isinstance(value, expected)


@dataclass(frozen=True)
class SimulationParams:
    """Round-loop and cost-model constants. Sizes in bytes, rates in bytes per second."""

    clusters: int = 2
    bucket_bytes: int = 256 * MIB
    local_iterations: int = 1
    refault_bw: float = 1e9
    fault_latency_s: float = 1e-3
    reaccess_ratio: float = 0.33
    page_size: int = 4096
    target_loss: float = 1.1
    aggregation_s: float = 0.5
    network_bw: float = 1.25e6
    update_bytes: int = 1 * MIB
    round_interval_s: float = 30.0
    regen_cap: int = 3
    workers: int = 1
    initial_loss: float = 2.3
    loss_floor: float = 0.2
    learning_rate: float = 0.5
    novelty_decay: float = 0.9
    calibrate_codec: bool = False

    def validate(self) -> list[str]:
        errors = []
        for name in (
            "clusters",
            "bucket_bytes",
            "local_iterations",
            "page_size",
            "workers",
            "update_bytes",
        ):
            if getattr(self, name) < 1:
                errors.append(f"simulation.{name} must be at least 1")
        for name in ("refault_bw", "network_bw", "round_interval_s", "learning_rate"):
            if not getattr(self, name) > 0:
                errors.append(f"simulation.{name} must be positive")
        for name in ("fault_latency_s", "aggregation_s", "regen_cap"):
            if getattr(self, name) < 0:
                errors.append(f"simulation.{name} must not be negative")
        if not 0 <= self.reaccess_ratio <= 1:
            errors.append("simulation.reaccess_ratio must be in [0, 1]")
        if not 0 < self.novelty_decay <= 1:
            errors.append("simulation.novelty_decay must be in (0, 1]")
        if not 0 <= self.loss_floor < self.target_loss < self.initial_loss:
            errors.append("simulation needs loss_floor < target_loss < initial_loss")
        if self.learning_rate > 1:
            errors.append("simulation.learning_rate must be at most 1")
        return errors


@dataclass(frozen=True)
class AblationConfig:
    """Which components run. Disabling one yields the matching baseline."""

    selector: bool = True
    planner: bool = True
    codec: bool = True
    predictor: bool = True

    @property
    def name(self) -> str:
        off = [f.name for f in fields(self) if not getattr(self, f.name)]
        return "full" if not off else "+".join(f"no-{name}" for name in off)

    @classmethod
    def variant(cls, name: str) -> AblationConfig:
        """``full`` or ``no-<component>``."""
        if name == "full":
            return cls()
        component = name.removeprefix("no-")
        if component == name or component not in {f.name for f in fields(cls)}:
            raise ConfigError([f"unknown variant {name!r}"])
        return replace(cls(), **{component: False})


VARIANTS = ("full", "no-selector", "no-planner", "no-codec", "no-predictor")


@dataclass(frozen=True)
class SimulationConfig:
    seed: int = 0
    rounds: int = 40
    graph_path: Path | None = None
    graph_params: dict[str, int] = field(default_factory=dict)
    fleet_path: Path | None = None
    fleet_size: int = 20
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    simulation: SimulationParams = field(default_factory=SimulationParams)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> SimulationConfig:
        """Create SimulationConfig from a configuration document.

        Relative graph and fleet paths resolve against ``base_dir``.

        Raises:
            ConfigError: Listing every problem in the document.
        """
        errors: list[str] = []
        unknown = sorted(set(data) - set(_SECTIONS))
        errors.extend(f"unknown section {name!r}" for name in unknown)

        def section(name: str) -> dict[str, Any]:
            value = data.get(name) or {}
            if not isinstance(value, dict):
                errors.append(f"{name} must be a mapping")
                return {}
            return value

        def build(name: str, factory: Any, payload: dict[str, Any]) -> Any:
            try:
                return factory(payload)
            except ConfigError as exc:
                errors.extend(exc.errors)
            except (TypeError, ValueError) as exc:
                errors.append(f"{name}: {exc}")
            return None

        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            errors.append("seed must be an integer")
        rounds = data.get("rounds", 40)
        if isinstance(rounds, bool) or not isinstance(rounds, int) or rounds < 1:
            errors.append("rounds must be a positive integer")

        def resolve(raw: Any) -> Path:
            path = Path(raw)
            return path if base_dir is None or path.is_absolute() else base_dir / path

        graph = section("graph")
        graph_path = resolve(graph["path"]) if "path" in graph else None
        graph_params = {k: v for k, v in graph.items() if k != "path"}
        allowed = {"blocks", "batch", "channels", "size", "classes"}
        for key, value in graph_params.items():
            if key not in allowed:
                errors.append(f"graph.{key} is not a generator parameter")
            elif isinstance(value, bool) or not isinstance(value, int) or value < 1:
                errors.append(f"graph.{key} must be a positive integer")

        fleet = section("fleet")
        fleet_path = resolve(fleet["path"]) if "path" in fleet else None
        fleet_size = fleet.get("clients", 20)
        if isinstance(fleet_size, bool) or not isinstance(fleet_size, int) or fleet_size < 1:
            errors.append("fleet.clients must be a positive integer")

        selection = build("selection", SelectionConfig.from_dict, section("selection"))
        predictor = build("predictor", PredictorConfig.from_dict, section("predictor"))
        codec = build("codec", CodecConfig.from_dict, section("codec"))

        params_raw = section("simulation")
        names = {f.name: f for f in fields(SimulationParams)}
        params = SimulationParams()
        for key, value in params_raw.items():
            if key not in names:
                errors.append(f"simulation.{key} is not a known setting")
                continue
            expected = type(getattr(params, key))
            if not _matches(expected, value):
                errors.append(f"simulation.{key} must be of type {expected.__name__}")
                continue
            params = replace(params, **{key: expected(value)})
        errors.extend(params.validate())

        ablation_raw = section("ablation")
        ablation = AblationConfig()
        for key, value in ablation_raw.items():
            if key not in {f.name for f in fields(AblationConfig)}:
                errors.append(f"ablation.{key} is not a component")
            elif not isinstance(value, bool):
                errors.append(f"ablation.{key} must be true or false")
            else:
                ablation = replace(ablation, **{key: value})

        if selection is not None and isinstance(fleet_size, int) and fleet_path is None:
            if selection.k > fleet_size:
                errors.append(f"selection.k={selection.k} exceeds fleet.clients={fleet_size}")

        if errors:
            raise ConfigError(errors)
        return cls(
            seed=seed,
            rounds=rounds,
            graph_path=graph_path,
            graph_params=graph_params,
            fleet_path=fleet_path,
            fleet_size=fleet_size,
            selection=selection,
            predictor=predictor,
            codec=codec,
            simulation=params,
            ablation=ablation,
        )

    def build_graph(self) -> ComputationGraph:
        if self.graph_path is not None:
            return read_graph(self.graph_path)
        return training_graph(**self.graph_params)

    def build_fleet(self) -> FleetSpec:
        """The configured fleet; a generated fleet is drawn from the simulation seed."""
        if self.fleet_path is not None:
            return read_fleet(self.fleet_path)
        return generate_fleet(self.fleet_size, seed=self.seed)


def get_seed_from_env() -> int | None:
    """Seed from MEMWALL_SEED, or None when unset.

    Raises:
        ConfigError: If the variable is set but not an integer.
    """
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([f"{SEED_ENV} must be an integer, got {raw!r}"]) from None


def resolve_seed(explicit: int | None = None, configured: int | None = None) -> int:
    """Explicit seed, then MEMWALL_SEED, then the configured seed, then 0."""
    if explicit is not None:
        return explicit
    env = get_seed_from_env()
    if env is not None:
        return env
    return configured if configured is not None else 0


def quickstart_text() -> str:
    """The bundled quickstart configuration document."""
    return resources.files("memwall").joinpath("data/quickstart.yaml").read_text()


def load_config(
    path: str | Path | None = None,
    seed: int | None = None,
    ablation: AblationConfig | None = None,
) -> SimulationConfig:
    """Load a simulation config, applying explicit overrides and MEMWALL_SEED.

    Args:
        path: YAML document; the bundled quickstart config when None.
        seed: Explicit seed, highest precedence.
        ablation: Explicit component switches replacing the document's.

    Raises:
        ConfigError: If the document is invalid.
    """
    if path is None:
        text, base_dir = quickstart_text(), None
    else:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
        base_dir = path.parent
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["config document must be a mapping"])
    config = SimulationConfig.from_dict(data, base_dir)
    config = replace(config, seed=resolve_seed(seed, config.seed))
    if ablation is not None:
        config = replace(config, ablation=ablation)
    return config
