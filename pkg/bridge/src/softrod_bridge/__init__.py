"""Gym-style handle over softrod's batched rod environments.

make(spec) turns a BridgeEnvSpec into a live handle that owns one
VectorEnv. The handle comes up already reset from the configured seed,
with per-slot seeds derived exactly the way ``softrod rollout``
derives them, so rewards and infos reproduce a CLI rollout byte for
byte given the same task, seed, and environment count. Episode ends
auto-reset: the final reward and flags arrive together with the first
observation of the next episode from that slot's own seed stream, and
``info["episode_end"]`` marks the boundary.

A handle has a single owner. Overlapping calls from other threads are
rejected with BridgeBusyError rather than queued, and a closed handle
rejects everything except another close(). reset/step/close are also
exported as module functions for callers that prefer the functional
style.
"""

import dataclasses
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from softrod.errors import InvalidParameterError, SoftRodError
from softrod.runconfig import RunConfig
from softrod.vector import VectorEnv, derive_env_seeds

__all__ = [
    "BridgeBusyError",
    "BridgeClosedError",
    "BridgeEnv",
    "BridgeEnvSpec",
    "SpaceDescriptor",
    "close",
    "make",
    "reset",
    "step",
]

__version__ = "0.1.0"


class BridgeBusyError(SoftRodError):
    """Another call is still running on this handle."""


class BridgeClosedError(SoftRodError):
    """The handle was closed and cannot be used again."""


@dataclass(frozen=True)
class SpaceDescriptor:
    """Shape and bounds of one space; low/high are None when unbounded."""

    shape: tuple[int, ...]
    low: float | None = None
    high: float | None = None


@dataclass(frozen=True)
class BridgeEnvSpec:
    """What to build: a task, a batch width, a seed, a worker count.

    ``config`` optionally names a YAML run-config file in the format
    the CLI accepts; the explicit fields here override its values, and
    any field left None keeps the config (or built-in) default. Bad
    values are rejected with the same ConfigError the CLI raises.
    """

    task: str | None = None
    envs: int | None = None
    seed: int | None = None
    workers: int | None = None
    config: str | None = None

    def to_run_config(self) -> RunConfig:
        base = RunConfig.load(self.config) if self.config else RunConfig()
        return base.with_overrides(task=self.task, envs=self.envs,
                                   seed=self.seed, workers=self.workers)


class BridgeEnv:
    """Single-owner handle over one vectorized batch of environments.

    Construction resets every slot, so step() may follow immediately;
    reset(None) restarts the configured run and is bit-identical to
    the state right after make(), while reset(k) rebases the run on
    seed k. Auto-reset is always on: a finished slot reports its final
    reward and flags alongside the opening observation of the next
    episode. Per-slot solver failures terminate only that episode and
    surface as ``infos[i]["solver_failure"]``.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        base = config.to_task_spec()
        seeds = derive_env_seeds(config.seed, config.envs)
        specs = [dataclasses.replace(base, seed=s) for s in seeds]
        self._venv = VectorEnv(specs, workers=config.workers,
                               auto_reset=True)
        self.num_envs = self._venv.num_envs
        self.action_space = SpaceDescriptor(
            shape=(self._venv.action_dim,), low=-1.0, high=1.0)
        self.observation_space = SpaceDescriptor(
            shape=(self._venv.observation_dim,))
        self._lock = threading.Lock()
        self._closed = False

    @property
    def action_dim(self) -> int:
        return self.action_space.shape[0]

    @property
    def observation_dim(self) -> int:
        return self.observation_space.shape[0]

    @contextmanager
    def _exclusive(self):
        # non-blocking: an overlapping call is a caller bug, not a queue
        if not self._lock.acquire(blocking=False):
            raise BridgeBusyError(
                "another call is in progress on this handle")
        try:
            if self._closed:
                raise BridgeClosedError("handle is closed")
            yield
        finally:
            self._lock.release()

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Fresh observations of shape (num_envs, observation_dim).

        None restarts the configured run from its own seed; an int
        rebases every slot on seeds derived from that value instead.
        """
        with self._exclusive():
            base = self.config.seed if seed is None else int(seed)
            return self._venv.reset(base)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                     np.ndarray, list[dict]]:
        """Step every slot once with actions of shape (num_envs, action_dim).

        Returns (observations, rewards, terminated, truncated, infos);
        a wrong actions shape raises InvalidParameterError before any
        environment moves.
        """
        with self._exclusive():
            return self._venv.step(actions)

    def close(self) -> None:
        """Tear down the batch; idempotent, but never while a call runs."""
        if not self._lock.acquire(blocking=False):
            raise BridgeBusyError(
                "another call is in progress on this handle")
        try:
            if not self._closed:
                self._closed = True
                self._venv.close()
        finally:
            self._lock.release()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make(spec: BridgeEnvSpec) -> BridgeEnv:
    """Validate spec, build the batch, and return a ready handle."""
    if not isinstance(spec, BridgeEnvSpec):
        raise InvalidParameterError(
            f"make expects a BridgeEnvSpec, got {type(spec).__name__}")
    return BridgeEnv(spec.to_run_config())


def reset(handle: BridgeEnv, seed: int | None = None) -> np.ndarray:
    return handle.reset(seed)


def step(handle: BridgeEnv, actions):
    return handle.step(actions)


def close(handle: BridgeEnv) -> None:
    handle.close()
