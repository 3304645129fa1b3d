"""One YAML file drives every command: simulation, task, and run keys.

Missing keys take the library defaults below (the standard rod setup);
unknown keys are rejected rather than silently ignored. `dump` writes
the fully resolved config, so saving it and re-running reproduces a run
exactly.
"""

import dataclasses
from dataclasses import dataclass

import yaml

from .envs import TASK_NAMES, TaskSpec, task_defaults
from .errors import ConfigError

_SCHEMES = ("implicit", "explicit")
_POLICIES = ("zero", "random")


@dataclass
class RunConfig:
    # run
    task: str = "follow_target"
    seed: int = 0
    scheme: str = "implicit"
    episodes: int = 1
    envs: int = 1
    workers: int = 1
    policy: str = "zero"
    out: str | None = None
    gamma: float = 0.99
    # discretization and control
    n_nodes: int = 21
    n_control_points: int = 5
    dt: float | None = None
    control_period: int | None = None
    episode_length: int | None = None
    kappa_bound: float = 2.0
    delta_limit: float = 0.1
    # solver
    newton_iters_noncontact: int = 2
    newton_iters_contact: int = 5
    newton_tol: float = 1e-6
    damping_coeff: float = 2.0
    # rod and material
    length: float = 1.0
    radius: float = 0.05
    density: float = 1000.0
    youngs_modulus: float = 1.0e7
    poisson_ratio: float = 0.5
    # contact
    contact_stiffness: float = 1.0e6
    contact_delta: float = 0.005
    contact_damping: float = 10.0
    penalty_stiffness: float = 1.6e5

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(
                f"unknown task {self.task!r}; choose from {TASK_NAMES}")
        if self.scheme not in _SCHEMES:
            raise ConfigError(
                f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        for key in ("episodes", "envs", "workers"):
            v = getattr(self, key)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{key} must be a positive integer, "
                                  f"got {v!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.policy not in _POLICIES and not str(self.policy).strip():
            raise ConfigError("policy must be zero, random, or a file path")

    @classmethod
    def from_dict(cls, data: dict | None, where: str = "config"):
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{where} must be a mapping, "
                              f"got {type(data).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str):
        with open(path, encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data, where=f"config file {path}")

    def with_overrides(self, **overrides):
        """New config with the given keys replaced; None values ignored."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        return dataclasses.replace(self, **changes)

    def to_task_spec(self, scheme: str | None = None,
                     task: str | None = None) -> TaskSpec:
        task = task or self.task
        contact = task_defaults(task)["contact"]
        iters = self.newton_iters_contact if contact \
            else self.newton_iters_noncontact
        return TaskSpec(
            task=task,
            seed=self.seed,
            scheme=scheme or self.scheme,
            n_nodes=self.n_nodes,
            n_control_points=self.n_control_points,
            length=self.length,
            radius=self.radius,
            density=self.density,
            youngs_modulus=self.youngs_modulus,
            poisson_ratio=self.poisson_ratio,
            damping_coeff=self.damping_coeff,
            newton_tol=self.newton_tol,
            delta_limit=self.delta_limit,
            kappa_bound=self.kappa_bound,
            contact_stiffness=self.contact_stiffness,
            contact_delta=self.contact_delta,
            contact_damping=self.contact_damping,
            penalty_stiffness=self.penalty_stiffness,
            dt=self.dt,
            episode_length=self.episode_length,
            control_period=self.control_period,
            max_newton_iters=iters,
        )

    def dump(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=True,
                              default_flow_style=False)

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())
