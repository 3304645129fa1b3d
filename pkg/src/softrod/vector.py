"""Batched execution of many environments with optional process workers.

VectorEnv owns E environments and steps them as one batch. With
workers <= 1 everything runs in-process; with more, forked worker
processes each hold a contiguous chunk of the environments for the
lifetime of the vector. Results are stacked in environment order, so a
run is bit-identical for any worker count. SOFTROD_THREADS caps the
worker count from the outside.

Episode boundaries belong to the caller: a finished environment stays
finished until reset_indices (or reset) brings it back, and stepping it
before that raises. Constructing with auto_reset=True opts into the
usual vector-env convention instead: finished slots report the final
reward and flags together with the observation of a freshly reset
episode, reseeded from the environment's own seed stream so worker
splits stay out of the dynamics.

Solver failures never poison the batch: they terminate the one episode
with the failure reward and the rest of the batch keeps stepping.
"""

import os
from multiprocessing import get_context

import numpy as np

from .envs import Environment, TaskSpec, make_env
from .errors import InvalidParameterError


def derive_env_seeds(seed: int, n: int) -> list[int]:
    """Per-environment reset seeds spawned from one base seed.

    Shared by VectorEnv, the CLI, and external wrappers so that
    environment i sees the same episode stream everywhere.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _worker(conn, specs, auto_reset):
    envs = [make_env(s) for s in specs]
    try:
        while True:
            tag, payload = conn.recv()
            if tag == "close":
                break
            try:
                if tag == "reset":
                    obs = [env.reset(s) for env, s in zip(envs, payload)]
                    conn.send(("ok", np.stack(obs)))
                elif tag == "reset_some":
                    obs = [envs[i].reset(s) for i, s in payload]
                    conn.send(("ok", obs))
                elif tag == "step":
                    out = [_step_one(env, a, auto_reset)
                           for env, a in zip(envs, payload)]
                    conn.send(("ok", out))
                else:
                    conn.send(("err", f"unknown command {tag!r}"))
            except Exception as exc:  # noqa: BLE001 - forwarded to parent
                conn.send(("err", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def _step_one(env: Environment, action, auto_reset):
    res = env.step(action)
    info = res.info
    obs = res.observation
    if auto_reset and (res.terminated or res.truncated):
        info = dict(info)
        info["episode_end"] = True
        obs = env.reset(None)
    return obs, res.reward, res.terminated, res.truncated, info


class VectorEnv:
    """E environments stepped as one batch, optionally across processes."""

    def __init__(self, specs: list[TaskSpec], workers: int = 1,
                 auto_reset: bool = False):
        if not specs:
            raise InvalidParameterError("VectorEnv needs at least one spec")
        self.specs = list(specs)
        self.num_envs = len(specs)
        self.auto_reset = auto_reset
        cap = int(os.environ.get("SOFTROD_THREADS", str(workers)))
        self.workers = max(1, min(workers, cap, self.num_envs))
        self._chunks = np.array_split(np.arange(self.num_envs), self.workers)
        self._owner = np.empty(self.num_envs, dtype=np.int64)
        for w, idx in enumerate(self._chunks):
            self._owner[idx] = w
        self._local = np.concatenate(
            [np.arange(len(idx)) for idx in self._chunks])
        self._envs = None
        self._conns = []
        self._procs = []
        if self.workers == 1:
            self._envs = [make_env(s) for s in self.specs]
        else:
            ctx = get_context("fork")
            for idx in self._chunks:
                parent, child = ctx.Pipe()
                proc = ctx.Process(
                    target=_worker,
                    args=(child, [self.specs[i] for i in idx], auto_reset),
                    daemon=True)
                proc.start()
                child.close()
                self._conns.append(parent)
                self._procs.append(proc)
        probe = make_env(self.specs[0]) if self._envs is None \
            else self._envs[0]
        self.action_dim = probe.action_dim
        self.observation_dim = probe.observation_dim
        self._closed = False

    def reset(self, seed: int) -> np.ndarray:
        """Reset every environment from one base seed; returns (E, obs)."""
        seeds = derive_env_seeds(seed, self.num_envs)
        if self._envs is not None:
            return np.stack([env.reset(s)
                             for env, s in zip(self._envs, seeds)])
        for conn, idx in zip(self._conns, self._chunks):
            conn.send(("reset", [seeds[i] for i in idx]))
        parts = [self._receive(conn) for conn in self._conns]
        return np.concatenate(parts)

    def reset_indices(self, indices, seeds=None) -> np.ndarray:
        """Reset selected environments only; None seeds continue each
        environment's own episode stream. Returns their observations."""
        indices = list(indices)
        if seeds is None:
            seeds = [None] * len(indices)
        if self._envs is not None:
            return np.stack([self._envs[i].reset(s)
                             for i, s in zip(indices, seeds)])
        per_worker = {}
        for pos, (i, s) in enumerate(zip(indices, seeds)):
            per_worker.setdefault(int(self._owner[i]), []).append(
                (pos, int(self._local[i]), s))
        out = [None] * len(indices)
        busy = []
        for w, items in per_worker.items():
            self._conns[w].send(("reset_some",
                                 [(loc, s) for _, loc, s in items]))
            busy.append((w, items))
        for w, items in busy:
            got = self._receive(self._conns[w])
            for (pos, _, _), ob in zip(items, got):
                out[pos] = ob
        return np.stack(out)

    def step(self, actions: np.ndarray):
        """Step the batch; returns (obs, rewards, terminated, truncated,
        infos). Finished slots need a reset unless auto_reset is on."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_envs, self.action_dim):
            raise InvalidParameterError(
                f"actions must have shape {(self.num_envs, self.action_dim)},"
                f" got {actions.shape}")
        if self._envs is not None:
            out = [_step_one(env, a, self.auto_reset)
                   for env, a in zip(self._envs, actions)]
        else:
            for conn, idx in zip(self._conns, self._chunks):
                conn.send(("step", actions[idx]))
            out = []
            for conn in self._conns:
                out.extend(self._receive(conn))
        obs, rewards, term, trunc, infos = zip(*out)
        return (np.stack(obs), np.array(rewards),
                np.array(term, dtype=bool), np.array(trunc, dtype=bool),
                list(infos))

    def _receive(self, conn):
        tag, payload = conn.recv()
        if tag == "err":
            self.close()
            raise RuntimeError(f"vector worker failed: {payload}")
        return payload

    def close(self):
        if self._closed:
            return
        self._closed = True
        for conn in self._conns:
            try:
                conn.send(("close", None))
                conn.close()
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:  # noqa: BLE001 - interpreter teardown
            pass
