"""
Experiment configuration schema.

Experiment files are JSON or YAML documents. Hyperparameters accept their
symbolic names (``L``, ``Z``, ``M``, ``N_E``...) and default to the values
used throughout the evaluation; unknown keys are rejected.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from baselines.dqn import DqnConfig
from channel.environment import EnvConfig, TaskSpec
from channel.exceptions import ProtocolConfigError
from channel.models import parse_scenario, scenario_to_string
from harness.training import Schedule
from learner.config import LearnerConfig

from .exceptions import ExperimentConfigError
from .presets import resolve_tasks


PolicyName = Literal["always", "never", "random", "oracle"]
BaselineName = Literal["dqn", "sac"]

# Fields that locate a run rather than define it
HASH_EXCLUDE = {"seed", "output_dir"}


class Hyperparameters(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    # Environment
    history_length: int = Field(20, alias="L", ge=1)
    throughput_window: int = Field(500, alias="Z", ge=1)
    nu: float = Field(0.0, ge=0.0, le=1.0)

    # Learner
    gamma: float = Field(0.9, ge=0.0, le=1.0)
    kl_weight: float = Field(1.0, alias="beta", ge=0.0)
    num_experts: int = Field(3, alias="M", ge=1)
    latent_dim: int = Field(6, alias="latentDim", ge=1)
    hidden_size: int = Field(64, alias="hidden", ge=1)
    lr: float = Field(0.003, gt=0.0)
    eta: float = Field(0.005, ge=0.0, le=1.0)
    initial_alpha: float = Field(0.2, alias="alpha", gt=0.0)

    # Schedule
    replay_capacity: int = Field(1000, alias="bufferCap", ge=1)
    batch_size: int = Field(64, alias="N_E", ge=1)
    context_size: int = Field(150, alias="U", ge=1)
    collect_steps: int = Field(200, alias="N_c", ge=0)
    episodes: int = Field(50, ge=0)
    update_calls: int = Field(250, alias="updateCalls", ge=0)
    test_collect_steps: int = Field(50, alias="N_c_test", ge=0)
    finetune_steps: Tuple[int, ...] = Field((200, 250, 300), alias="T_ft")
    test_slots: int = Field(1000, alias="testSlots", ge=0)
    few_shot_start: int = Field(300, alias="fewShotStart", ge=0)

    def env_config(self) -> EnvConfig:
        return EnvConfig(history_length=self.history_length, throughput_window=self.throughput_window)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(
            latent_dim=self.latent_dim,
            num_experts=self.num_experts,
            kl_weight=self.kl_weight,
            hidden_size=self.hidden_size,
            lr=self.lr,
            gamma=self.gamma,
            eta=self.eta,
            initial_alpha=self.initial_alpha,
        )

    def schedule(self) -> Schedule:
        return Schedule(
            collect_steps=self.collect_steps,
            episodes=self.episodes,
            update_calls=self.update_calls,
            batch_size=self.batch_size,
            context_size=self.context_size,
            replay_capacity=self.replay_capacity,
            test_collect_steps=self.test_collect_steps,
            finetune_steps=self.finetune_steps,
            test_slots=self.test_slots,
            few_shot_start=self.few_shot_start,
        )

    def dqn_config(self) -> DqnConfig:
        return DqnConfig(
            hidden_size=self.hidden_size,
            gamma=self.gamma,
            lr=self.lr,
            batch_size=self.batch_size,
            replay_capacity=self.replay_capacity,
        )


class TaskModel(BaseModel):
    """A scenario string with an optional fairness factor of its own."""

    model_config = ConfigDict(extra="forbid")

    scenario: str
    nu: Optional[float] = Field(None, ge=0.0, le=1.0)
    label: str = ""

    @model_validator(mode="before")
    @classmethod
    def _from_string(cls, data: Any) -> Any:
        if isinstance(data, str):
            return {"scenario": data}
        return data

    @field_validator("scenario")
    @classmethod
    def _normalize_scenario(cls, value: str) -> str:
        try:
            return scenario_to_string(parse_scenario(value))
        except ProtocolConfigError as e:
            raise ValueError(e.message) from e

    def to_task(self, default_nu: float = 0.0) -> TaskSpec:
        nu = default_nu if self.nu is None else self.nu
        return TaskSpec.from_string(self.scenario, nu=nu, label=self.label)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    preset: Optional[str] = None
    tasks: List[TaskModel] = Field(default_factory=list)
    policy: PolicyName = "never"
    slots: Optional[int] = Field(None, ge=0)
    seed: int = Field(0, ge=0)
    seeds: int = Field(1, ge=1)
    checkpoint: Optional[str] = None
    baselines: List[BaselineName] = Field(default_factory=list)
    zero_shot: bool = Field(False, alias="zeroShot")
    dynamic: bool = False
    rollouts: int = Field(100, ge=0)
    output_dir: Optional[str] = Field(None, alias="out")
    hyperparameters: Hyperparameters = Field(default_factory=Hyperparameters)

    # ----- loading -----

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Parse a ``.json``, ``.yaml`` or ``.yml`` experiment file."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        except (OSError, yaml.YAMLError, json.JSONDecodeError) as e:
            raise ExperimentConfigError(f"Cannot read experiment file {path}: {e}", details={"path": str(path)})
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ExperimentConfigError(f"Experiment file {path} must hold a mapping", details={"path": str(path)})
        return cls.model_validate(data)

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        """Validated copy with top-level fields and ``hyperparameters`` entries replaced."""
        data = self.model_dump(mode="json")
        hyper = changes.pop("hyperparameters", None) or {}
        data.update({key: value for key, value in changes.items() if value is not None})
        data["hyperparameters"].update({key: value for key, value in hyper.items() if value is not None})
        return type(self).model_validate(data)

    # ----- identity -----

    def dump(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)

    def canonical_json(self) -> str:
        data = self.model_dump(mode="json", by_alias=True, exclude=HASH_EXCLUDE)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    # ----- resolution -----

    def seed_list(self) -> List[int]:
        return [self.seed + i for i in range(self.seeds)]

    def task_specs(self, default_preset: Optional[str] = None) -> List[TaskSpec]:
        """Explicit tasks first, else the preset, else ``default_preset``."""
        nu = self.hyperparameters.nu
        if self.tasks:
            return [task.to_task(nu) for task in self.tasks]
        name = self.preset or default_preset
        if name is None:
            raise ExperimentConfigError("No tasks given: pass a scenario or a preset")
        return resolve_tasks(name, nu=nu)
