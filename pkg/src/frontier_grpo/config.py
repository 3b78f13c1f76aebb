"""Run configuration and its INI-file form.

A config file is plain ``key = value`` pairs grouped in sections::

    [run]
    total_steps = 400
    sampler_mode = adaptive

    [stage.late]
    focusing_rho = 5.0

Unknown sections or keys are rejected so typos do not pass silently.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .env import EnvParams
from .grpo import GrpoParams
from .potential import PotentialParams
from .rewards import RewardParams
from .sampler import CoolingParams, StageParams, StageSchedule, TypeWeights

SAMPLER_MODES = ("adaptive", "uniform")
BUFFER_MODES = ("evolving", "static")

ENV_SEED = "FRONTIER_GRPO_SEED"
ENV_OUT_DIR = "FRONTIER_GRPO_OUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    # the toy policy has ~50 weights; see README for why this is not 1e-6
    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    eps: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = 400
    rollout_tasks_per_step: int = 8
    group_size: int = 8
    global_batch: int = 64
    num_tasks: int = 134
    execution_budget_ticks: int | None = None
    sampler_mode: str = "adaptive"
    buffer_mode: str = "evolving"
    seed: int = 0
    suite_seed: int | None = None
    num_workers: int = 1
    async_learner: bool = False
    deterministic: bool = True
    smoothing_window: int = 50
    reward: RewardParams = field(default_factory=RewardParams)
    potential: PotentialParams = field(default_factory=PotentialParams)
    schedule: StageSchedule = field(default_factory=StageSchedule)
    cooling: CoolingParams = field(default_factory=CoolingParams)
    type_weights: TypeWeights = field(default_factory=TypeWeights)
    grpo: GrpoParams = field(default_factory=GrpoParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    env: EnvParams = field(default_factory=EnvParams)

    def validate(self) -> "RunConfig":
        if self.rollout_tasks_per_step * self.group_size != self.global_batch:
            raise ConfigError(
                f"rollout_tasks_per_step x group_size = {self.rollout_tasks_per_step} x {self.group_size}"
                f" != global_batch {self.global_batch}"
            )
        if self.group_size != self.grpo.group_size:
            raise ConfigError(f"group_size {self.group_size} != grpo.group_size {self.grpo.group_size}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.rollout_tasks_per_step < 1 or self.group_size < 2:
            raise ConfigError("need at least one task per step and a group size of at least 2")
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.execution_budget_ticks is not None and self.execution_budget_ticks < 0:
            raise ConfigError("execution_budget_ticks must be >= 0")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ConfigError(f"sampler_mode must be one of {SAMPLER_MODES}")
        if self.buffer_mode not in BUFFER_MODES:
            raise ConfigError(f"buffer_mode must be one of {BUFFER_MODES}")
        if self.num_workers < 1:
            raise ConfigError("num_workers must be >= 1")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")
        return self

    @property
    def effective_suite_seed(self) -> int:
        return self.seed if self.suite_seed is None else self.suite_seed

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# --------------------------------------------------------------------------
# INI round-trip

_NESTED = {
    "reward": RewardParams,
    "potential": PotentialParams,
    "cooling": CoolingParams,
    "type_weights": TypeWeights,
    "grpo": GrpoParams,
    "optimizer": OptimizerConfig,
    "env": EnvParams,
}
_STAGES = ("early", "mid", "late")


def _fmt(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse(raw: str, template: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if raw.lower() == "none":
            return None
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            elem = template[0] if template else 0.0
            return tuple(_parse(x, elem, where) for x in raw.split(",") if x.strip())
        if template is None:
            # optional integer fields
            return int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def to_ini(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["run"] = {
        f.name: _fmt(getattr(cfg, f.name))
        for f in fields(cfg)
        if f.name not in _NESTED and f.name != "schedule"
    }
    for name in _NESTED:
        cp[name] = {k: _fmt(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
    cp["schedule"] = {"thresholds": _fmt(cfg.schedule.thresholds)}
    for st in _STAGES:
        params = getattr(cfg.schedule, st)
        cp[f"stage.{st}"] = {k: _fmt(v) for k, v in dataclasses.asdict(params).items() if k != "name"}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _apply(obj, section, where):
    kw = {}
    names = {f.name for f in fields(obj)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        kw[key] = _parse(raw, getattr(obj, key), f"[{where}] {key}")
    try:
        return replace(obj, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = base or RunConfig()
    nested = {}
    schedule = cfg.schedule
    run_kw = {}
    for sec in cp.sections():
        if sec == "run":
            run_fields = {f.name: f for f in fields(cfg) if f.name not in _NESTED and f.name != "schedule"}
            for key, raw in cp[sec].items():
                if key not in run_fields:
                    raise ConfigError(f"[run] unknown key {key!r}")
                template = getattr(cfg, key)
                if key == "execution_budget_ticks" or key == "suite_seed":
                    template = None
                run_kw[key] = _parse(raw, template, f"[run] {key}")
        elif sec in _NESTED:
            nested[sec] = _apply(getattr(cfg, sec), cp[sec], sec)
        elif sec == "schedule":
            for key, raw in cp[sec].items():
                if key != "thresholds":
                    raise ConfigError(f"[schedule] unknown key {key!r}")
                th = _parse(raw, (0,), "[schedule] thresholds")
                if len(th) != 2:
                    raise ConfigError("[schedule] thresholds needs two integers")
                try:
                    schedule = replace(schedule, thresholds=tuple(th))
                except ValueError as exc:
                    raise ConfigError(f"[schedule] {exc}") from None
        elif sec.startswith("stage.") and sec[6:] in _STAGES:
            st = sec[6:]
            params: StageParams = getattr(schedule, st)
            schedule = replace(schedule, **{st: _apply(params, cp[sec], sec)})
        else:
            raise ConfigError(f"unknown section [{sec}]")
    try:
        cfg = replace(cfg, schedule=schedule, **nested, **run_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)!r}: {exc.strerror}") from None
    return from_ini(text)


def env_overrides(environ=os.environ) -> dict:
    out: dict[str, Any] = {}
    if environ.get(ENV_SEED):
        try:
            out["seed"] = int(environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    if environ.get(ENV_OUT_DIR):
        out["out_dir"] = environ[ENV_OUT_DIR]
    return out
