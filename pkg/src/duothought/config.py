"""Run configuration: one structured file describing backends, knobs, and paths for every stage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends import BackendDescriptor, make_bernoulli_backend, make_remote_backend, make_scripted_backend
from .dialogue import DialogueLimits, TagSet
from .metric import DEFAULT_CONFIDENCE, DEFAULT_DELTA
from .rewards import AesBaseline, MuSchedule, RewardCoeffs
from .rollout import RolloutConfig

BACKEND_ROLES = ("base", "chunk", "complete", "long", "short")


class ConfigError(ValueError):
    pass


@dataclass
class BackendSpec:
    kind: str
    options: dict

    def build(self, role: str, base_dir: Path) -> BackendDescriptor:
        opts = dict(self.options)
        limit = int(opts.pop("concurrency_limit", 4))
        if self.kind == "scripted":
            entries = opts.pop("entries", None)
            script_path = opts.pop("script_path", None)
            if script_path is not None:
                raw = (base_dir / script_path).read_text(encoding="utf-8")
                entries = json.loads(raw)
            if not isinstance(entries, list):
                raise ConfigError(f"backend {role!r}: scripted backend needs an entries list")
            return make_scripted_backend(
                [_script_entry(e, role) for e in entries], identity=role, concurrency_limit=limit
            )
        if self.kind == "bernoulli":
            try:
                return make_bernoulli_backend(
                    p=float(opts["p"]),
                    answer=str(opts["answer"]),
                    length_range=(int(opts.get("length_min", 10)), int(opts.get("length_max", 100))),
                    seed=int(opts.get("seed", 0)),
                    identity=role,
                    concurrency_limit=limit,
                )
            except KeyError as exc:
                raise ConfigError(f"backend {role!r}: bernoulli backend missing {exc}") from exc
        if self.kind == "remote":
            try:
                base_url = str(opts.pop("base_url"))
                model = str(opts.pop("model"))
            except KeyError as exc:
                raise ConfigError(f"backend {role!r}: remote backend missing {exc}") from exc
            cache_dir = opts.pop("cache_dir", None)
            if cache_dir is not None:
                cache_dir = base_dir / cache_dir
            return make_remote_backend(
                base_url, model, identity=role, concurrency_limit=limit,
                cache_dir=cache_dir, **opts,
            )
        raise ConfigError(f"backend {role!r}: unknown kind {self.kind!r}")


def _script_entry(entry: dict, role: str) -> tuple[object, str]:
    if not isinstance(entry, dict) or "response" not in entry:
        raise ConfigError(f"backend {role!r}: script entry needs a response: {entry!r}")
    response = str(entry["response"])
    if "equals" in entry:
        needle = str(entry["equals"])
        return (lambda prompt, n=needle: prompt == n), response
    if "prefix" in entry:
        return str(entry["prefix"]), response
    if "contains" in entry:
        needle = str(entry["contains"])
        return (lambda prompt, n=needle: n in prompt), response
    return (lambda prompt: True), response


@dataclass
class RunConfig:
    input_path: Path
    workdir: Path
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    dialogue_limits: DialogueLimits = field(default_factory=DialogueLimits)
    dialogue_temperature: float = 1.0
    tags: TagSet = field(default_factory=TagSet)
    reward: RewardCoeffs = field(default_factory=RewardCoeffs)
    mu: MuSchedule = field(default_factory=MuSchedule)
    aes_baseline: AesBaseline | None = None
    delta: float = DEFAULT_DELTA
    confidence: float = DEFAULT_CONFIDENCE
    budgets: list[int] = field(default_factory=list)
    reflection_phrases: tuple[str, ...] | None = None
    seed: int = 0
    concurrency: int = 1
    resume: bool = True
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = Path(".")

    def backend(self, role: str) -> BackendDescriptor:
        if role not in self.backends:
            raise ConfigError(f"no backend configured for role {role!r}")
        return self.backends[role].build(role, self.base_dir)

    def section(self, *keys: str) -> dict:
        """Stable slice of the raw config, used for per-stage input hashing."""
        return {key: self.raw.get(key) for key in keys}

    def backend_section(self, *roles: str) -> dict:
        raw = self.raw.get("backends") or {}
        return {role: raw.get(role) for role in roles}


def _require(data: dict, key: str) -> object:
    if key not in data:
        raise ConfigError(f"config missing required key {key!r}")
    return data[key]


def load_config(path: Path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a YAML/JSON run config; paths resolve relative to the config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    overrides = dict(overrides or {})
    workdir_override = overrides.pop("workdir", None)
    data.update(overrides)
    base_dir = path.parent

    paths = _require(data, "paths")
    if not isinstance(paths, dict):
        raise ConfigError("paths must be a mapping")
    if workdir_override is not None:
        paths = dict(paths)
        paths["workdir"] = str(workdir_override)
        data["paths"] = paths
    input_path = base_dir / str(_require(paths, "input"))
    if not input_path.exists():
        raise ConfigError(f"input corpus not found: {input_path}")
    workdir = base_dir / str(paths.get("workdir", "work"))

    delta = float(data.get("delta", DEFAULT_DELTA))
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must be in (0, 1)")
    confidence = float(data.get("confidence", DEFAULT_CONFIDENCE))
    if not 0.0 < confidence < 1.0:
        raise ConfigError("confidence must be in (0, 1)")

    backends = {}
    for role, spec in (data.get("backends") or {}).items():
        if role not in BACKEND_ROLES:
            raise ConfigError(f"unknown backend role {role!r}; expected one of {BACKEND_ROLES}")
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError(f"backend {role!r} must be a mapping with a kind")
        options = {k: v for k, v in spec.items() if k != "kind"}
        backends[role] = BackendSpec(kind=str(spec["kind"]), options=options)

    try:
        rollout_cfg = dict(data.get("rollout") or {})
        rollout_cfg.setdefault("seed", int(data.get("seed", 0)))
        rollout = RolloutConfig(**rollout_cfg)
        dialogue_cfg = dict(data.get("dialogue") or {})
        dialogue_temperature = float(dialogue_cfg.pop("temperature", 1.0))
        limits = DialogueLimits(**dialogue_cfg)
        tags = TagSet(**(data.get("tags") or {}))
        reward_cfg = dict(data.get("reward") or {})
        mu_cfg = reward_cfg.pop("mu_schedule", None) or {}
        reward = RewardCoeffs(
            eta_r=float(reward_cfg.get("eta", reward_cfg.get("eta_r", 1.0))),
            lambda_r=float(reward_cfg.get("lambda", reward_cfg.get("lambda_r", 0.0))),
            mu_r=float(reward_cfg.get("mu", reward_cfg.get("mu_r", 0.0))),
        )
        mu = MuSchedule(**mu_cfg)
        aes_cfg = data.get("aes_baseline")
        baseline = AesBaseline(**aes_cfg) if aes_cfg else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section: {exc}") from exc

    phrases = data.get("reflection_phrases")
    return RunConfig(
        input_path=input_path,
        workdir=workdir,
        backends=backends,
        rollout=rollout,
        dialogue_limits=limits,
        dialogue_temperature=dialogue_temperature,
        tags=tags,
        reward=reward,
        mu=mu,
        aes_baseline=baseline,
        delta=delta,
        confidence=confidence,
        budgets=[int(b) for b in (data.get("budgets") or [])],
        reflection_phrases=tuple(phrases) if phrases else None,
        seed=int(data.get("seed", 0)),
        concurrency=int(data.get("concurrency", 1)),
        resume=bool(data.get("resume", True)),
        raw=data,
        base_dir=base_dir,
    )
