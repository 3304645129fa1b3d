"""Command line front end: validate, bench, rollout, compare.

All four subcommands read the same YAML config (every key optional) and
accept the same override flags; flags win over the file, the file wins
over defaults. `--out DIR` makes a command write its artifacts into DIR:
bench.csv, trajectory.jsonl + config.yaml + summary.json, compare.json.
Everything except bench wall-clock numbers is deterministic given the
resolved config.
"""

import dataclasses
import functools
import json
import os
import time

import click
import numpy as np

from .envs import make_env, record_to_json, trajectory_record
from .errors import ConfigError, SoftRodError
from .runconfig import RunConfig
from .validation import run_checks
from .vector import VectorEnv, derive_env_seeds

_BENCH_TASKS = ("follow_target", "obstacles2d_tight")
_BENCH_STEPS = {"implicit": 15, "explicit": 5}


def _run_options(fn):
    opts = [
        click.option("--config", "config_path",
                     type=click.Path(exists=True, dir_okay=False),
                     default=None, help="YAML config file."),
        click.option("--task", default=None,
                     help="Task name (see `softrod rollout --help`)."),
        click.option("--seed", type=int, default=None),
        click.option("--envs", type=int, default=None,
                     help="Number of parallel environments."),
        click.option("--workers", type=int, default=None,
                     help="Worker processes for vectorized stepping."),
        click.option("--scheme",
                     type=click.Choice(["implicit", "explicit"]),
                     default=None),
        click.option("--episodes", type=int, default=None),
        click.option("--out", default=None,
                     help="Output directory for artifacts."),
        click.option("--policy", default=None,
                     help="zero, random, or a JSON action file."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, SoftRodError) as exc:
            raise click.ClickException(str(exc))
    return wrapper


def _resolve(config_path, **overrides) -> RunConfig:
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    return cfg.with_overrides(**overrides)


def _out_dir(cfg: RunConfig):
    if not cfg.out:
        return None
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _discounted_return(rewards, gamma: float) -> float:
    total = 0.0
    for r in reversed(rewards):
        total = r + gamma * total
    return total


def _load_scripted(path: str, action_dim: int) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read action file {path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("actions")
    try:
        actions = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed action file {path}: {exc}") from exc
    if actions.ndim != 2 or actions.shape[1] != action_dim:
        raise ConfigError(
            f"action file {path} must hold an (n, {action_dim}) array, "
            f"got shape {actions.shape}")
    return actions


def _episode_actions(cfg: RunConfig, action_dim: int, episode: int,
                     n_steps: int) -> np.ndarray:
    """The full action sequence for one episode, fixed by (seed, episode).

    Zero and random policies do not depend on env count or scheme, so
    the same stream can be replayed for cross-scheme comparisons.
    """
    if cfg.policy == "zero":
        return np.zeros((n_steps, action_dim))
    if cfg.policy == "random":
        rng = np.random.default_rng([cfg.seed, episode])
        return rng.uniform(-1.0, 1.0, (n_steps, action_dim))
    scripted = _load_scripted(cfg.policy, action_dim)
    out = np.zeros((n_steps, action_dim))
    m = min(n_steps, scripted.shape[0])
    out[:m] = scripted[:m]
    return out


@click.group()
def main():
    """Soft rod simulation: validation, benchmarks, and task rollouts."""


@main.command()
@click.option("--tol-scale", type=float, default=1.0, show_default=True,
              help="Multiply every check tolerance by this factor.")
@click.option("--seed", type=int, default=0, show_default=True)
@_guard
def validate(tol_scale, seed):
    """Run the numerical self-checks and report per-check errors."""
    results = run_checks(tol_scale=tol_scale, seed=seed)
    n_failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        n_failed += 0 if res.passed else 1
        click.echo(f"{status}  {res.name:<34s} max_error={res.max_error:.3e}"
                   f"  tol={res.tolerance:.1e}")
    click.echo(f"{len(results) - n_failed}/{len(results)} checks passed")
    if n_failed:
        raise SystemExit(1)


@main.command()
@_run_options
@_guard
def bench(config_path, task, seed, envs, workers, scheme, episodes, out,
          policy):
    """Time vectorized control steps for both schemes.

    Without --task, benchmarks one contact-free and one contact task.
    Both schemes always run; the speedup column needs the explicit
    baseline. Timing rows go to bench.csv under --out, or to stdout.
    """
    cfg = _resolve(config_path, seed=seed, envs=envs, workers=workers,
                   out=out)
    tasks = [task] if task else list(_BENCH_TASKS)

    lines = ["scheme,task,envs,ms_per_vector_step,speedup_vs_explicit"]
    for name in tasks:
        ms = {}
        for sch in ("explicit", "implicit"):
            base = cfg.to_task_spec(scheme=sch, task=name)
            specs = [dataclasses.replace(base, seed=s)
                     for s in derive_env_seeds(cfg.seed, cfg.envs)]
            click.echo(f"{name} {sch}: dt={base.dt:g} substeps_per_control_"
                       f"step={base.control_period}", err=True)
            rng = np.random.default_rng(cfg.seed)
            n_steps = _BENCH_STEPS[sch]
            with VectorEnv(specs, workers=cfg.workers,
                           auto_reset=True) as vec:
                vec.reset(cfg.seed)
                actions = rng.uniform(
                    -1.0, 1.0, (n_steps + 1, cfg.envs, vec.action_dim))
                vec.step(actions[0])  # warm up JIT and caches
                best = np.inf
                for k in range(n_steps):
                    t0 = time.perf_counter()
                    vec.step(actions[k + 1])
                    best = min(best, time.perf_counter() - t0)
            ms[sch] = best * 1e3
        for sch in ("explicit", "implicit"):
            speedup = 1.0 if sch == "explicit" else ms["explicit"] / ms[sch]
            lines.append(f"{sch},{name},{cfg.envs},{ms[sch]:.3f},"
                         f"{speedup:.3f}")

    out_dir = _out_dir(cfg)
    if out_dir:
        path = os.path.join(out_dir, "bench.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        click.echo(f"wrote {path}")
    else:
        for line in lines:
            click.echo(line)


@main.command()
@_run_options
@_guard
def rollout(config_path, task, seed, envs, workers, scheme, episodes, out,
            policy):
    """Run episodes and export one JSON record per control step.

    Episode k runs on env slot k % envs; each env seeds its first
    episode from the run seed and then continues its own reset chain,
    matching vectorized execution. Records land in trajectory.jsonl
    under --out, episode by episode.
    """
    cfg = _resolve(config_path, task=task, seed=seed, envs=envs,
                   workers=workers, scheme=scheme, episodes=episodes,
                   out=out, policy=policy)
    base = cfg.to_task_spec()
    env_seeds = derive_env_seeds(cfg.seed, cfg.envs)
    env_pool = [None] * cfg.envs
    summary = []
    records = []
    try:
        for ep in range(cfg.episodes):
            slot = ep % cfg.envs
            env = env_pool[slot]
            if env is None:
                env = make_env(dataclasses.replace(base, seed=env_seeds[slot]))
                env_pool[slot] = env
            else:
                env.reset(None)
            actions = _episode_actions(cfg, env.action_dim, ep,
                                       env.spec.episode_length)
            rewards = []
            success = False
            for step_idx in range(env.spec.episode_length):
                result = env.step(actions[step_idx])
                records.append(trajectory_record(env, actions[step_idx],
                                                 result, episode=ep))
                rewards.append(result.reward)
                success = success or bool(result.info.get("success"))
                if result.terminated or result.truncated:
                    break
            ret = _discounted_return(rewards, cfg.gamma)
            summary.append({"episode": ep, "steps": len(rewards),
                            "discounted_return": ret, "success": success})
            click.echo(f"episode {ep}: steps={len(rewards)} "
                       f"discounted_return={ret:.6f} success={success}")
    finally:
        for env in env_pool:
            if env is not None:
                env.close()

    out_dir = _out_dir(cfg)
    if out_dir:
        traj_path = os.path.join(out_dir, "trajectory.jsonl")
        with open(traj_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(record_to_json(record) + "\n")
        cfg.save(os.path.join(out_dir, "config.yaml"))
        with open(os.path.join(out_dir, "summary.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"gamma": cfg.gamma, "episodes": summary}, fh,
                      sort_keys=True, separators=(",", ":"))
        click.echo(f"wrote {traj_path}")


@main.command()
@_run_options
@_guard
def compare(config_path, task, seed, envs, workers, scheme, episodes, out,
            policy):
    """Drive both schemes with identical actions and report divergence.

    Prints per-episode tip RMS divergence, discounted returns with their
    relative difference, and penetration statistics side by side. An
    explicit-scheme blowup is reported and the run continues.
    """
    cfg = _resolve(config_path, task=task, seed=seed, envs=envs,
                   workers=workers, episodes=episodes, out=out,
                   policy=policy)
    seed0 = derive_env_seeds(cfg.seed, 1)[0]
    env_of = {
        sch: make_env(dataclasses.replace(cfg.to_task_spec(scheme=sch),
                                          seed=seed0))
        for sch in ("implicit", "explicit")
    }
    length = cfg.length
    report = {"task": cfg.task, "gamma": cfg.gamma, "episodes": []}
    try:
        for ep in range(cfg.episodes):
            if ep > 0:
                for env in env_of.values():
                    env.reset(None)
            n_steps = env_of["implicit"].spec.episode_length
            actions = _episode_actions(
                cfg, env_of["implicit"].action_dim, ep, n_steps)
            traces = {}
            for sch, env in env_of.items():
                tips, rewards, pens = [], [], []
                unstable_at = None
                for step_idx in range(n_steps):
                    result = env.step(actions[step_idx])
                    tips.append(env.state.positions[-1].copy())
                    rewards.append(result.reward)
                    pens.append(result.info["max_penetration"])
                    if result.info.get("solver_failure"):
                        unstable_at = step_idx
                    if result.terminated or result.truncated:
                        break
                traces[sch] = {
                    "tips": np.asarray(tips),
                    "return": _discounted_return(rewards, cfg.gamma),
                    "pens": np.asarray(pens),
                    "unstable_at": unstable_at,
                }
            n_common = min(len(traces[s]["tips"]) for s in traces)
            diff = (traces["implicit"]["tips"][:n_common]
                    - traces["explicit"]["tips"][:n_common])
            tip_rms = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))
            ret_i = traces["implicit"]["return"]
            ret_e = traces["explicit"]["return"]
            ret_diff = abs(ret_i - ret_e) / max(abs(ret_e), 1e-12)
            click.echo(f"episode {ep}: tip_rms={tip_rms:.6f} m "
                       f"({100.0 * tip_rms / length:.3f}% of length)")
            click.echo(f"  return implicit={ret_i:.6f} "
                       f"explicit={ret_e:.6f} "
                       f"rel_diff={100.0 * ret_diff:.3f}%")
            for sch in ("implicit", "explicit"):
                pens = traces[sch]["pens"]
                click.echo(f"  penetration {sch}: max={pens.max():.3e} "
                           f"mean={pens.mean():.3e}")
                if traces[sch]["unstable_at"] is not None:
                    click.echo(f"  {sch} scheme went unstable at step "
                               f"{traces[sch]['unstable_at']} (episode "
                               "abandoned, run continues)")
            report["episodes"].append({
                "episode": ep,
                "tip_rms": tip_rms,
                "tip_rms_frac_of_length": tip_rms / length,
                "return_implicit": ret_i,
                "return_explicit": ret_e,
                "return_rel_diff": ret_diff,
                "max_penetration_implicit": float(
                    traces["implicit"]["pens"].max()),
                "max_penetration_explicit": float(
                    traces["explicit"]["pens"].max()),
                "unstable_explicit":
                    traces["explicit"]["unstable_at"] is not None,
            })
    finally:
        for env in env_of.values():
            env.close()

    out_dir = _out_dir(cfg)
    if out_dir:
        path = os.path.join(out_dir, "compare.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, separators=(",", ":"))
        cfg.save(os.path.join(out_dir, "config.yaml"))
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
