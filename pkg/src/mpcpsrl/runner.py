"""Experiment execution, output files and the run manifest.

Every run directory holds ``manifest.json`` (written at start, finalized at
the end with an inventory of every other file), the resolved
``config.json`` and kind-specific CSV/JSON outputs. Training trials write
their own CSV under ``trials/`` and are merged in trial order, so the worker
count never changes the results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .agent import PsrlAgent
from .bayes import GaussianLinearPrior, posterior_from_data
from .config import agent_config, canonical_hash, env_kwargs
from .envs import make_env
from .regretlab import concentration, information, regret, tv

logger = logging.getLogger(__name__)

EPISODE_COLUMNS = ("trial", "episode", "total_reward", "mean_pred_variance", "wall_ms")
REGRET_COLUMNS = ("H", "d", "T", "episode", "regret", "stderr", "cumulative", "cumulative_stderr")
TIMING_COLUMNS = ("wall_ms",)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def trial_seeds(master: int, n_trials: int) -> list[int]:
    """Per-trial seeds derived from the master seed by trial index."""
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1)) for s in np.random.SeedSequence(master).spawn(n_trials)]


class Manifest:
    """``manifest.json``: config hash, code version, seeds, timestamps, files, status."""

    def __init__(self, run_dir: Path, data: dict):
        self.run_dir = Path(run_dir)
        self.data = data

    @classmethod
    def start(cls, run_dir: Path, config: dict, seeds: list[int]) -> "Manifest":
        data = {
            "kind": config["kind"],
            "config_hash": canonical_hash(config),
            "code_version": __version__,
            "seeds": seeds,
            "started": _now(),
            "finished": None,
            "status": "running",
            "files": {},
        }
        m = cls(run_dir, data)
        m.write()
        return m

    @classmethod
    def read(cls, run_dir: Path) -> "Manifest":
        return cls(run_dir, json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8")))

    def inventory(self) -> dict:
        files = {}
        for path in sorted(self.run_dir.rglob("*")):
            if path.is_file() and path.name != "manifest.json" and not path.name.endswith(".tmp"):
                rel = path.relative_to(self.run_dir).as_posix()
                files[rel] = {"bytes": path.stat().st_size, "sha256": _sha256(path)}
        return files

    def write(self) -> None:
        path = self.run_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finalize(self, status: str, **extra) -> None:
        self.data.update(extra)
        self.data["status"] = status
        self.data["finished"] = _now()
        self.data["files"] = self.inventory()
        self.write()


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def strip_columns(path: Path, drop=TIMING_COLUMNS) -> list[list[str]]:
    """CSV content without timing columns, for determinism comparisons."""
    header, rows = read_csv(path)
    keep = [i for i, name in enumerate(header) if name not in drop]
    return [[header[i] for i in keep]] + [[r[i] for i in keep] for r in rows]


# ---------------------------------------------------------------- training


def _episode_row(trial: int, record) -> tuple:
    return (trial, record.episode_index, record.total_reward, record.mean_pred_variance, round(record.wall_time * 1e3, 3))


def _trial_csv(run_dir: Path, trial: int) -> Path:
    return run_dir / "trials" / f"trial_{trial:03d}.csv"


def _checkpoint_path(run_dir: Path, trial: int, episode: int) -> Path:
    return run_dir / "checkpoints" / f"trial_{trial:03d}_ep{episode:04d}.ckpt"


def continue_trial(agent: PsrlAgent, run_dir: Path, trial: int, config: dict) -> int:
    """Run ``agent`` to its episode budget, appending rows and checkpointing."""
    every = int(config.get("checkpoint_every", 0))
    path = _trial_csv(run_dir, trial)
    write_csv(path, EPISODE_COLUMNS, [_episode_row(trial, r) for r in agent.records])
    cfg_hash = canonical_hash(config)

    def on_episode(ag: PsrlAgent, record) -> None:
        with open(path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(v) for v in _episode_row(trial, record)])
        if every and ag.episode % every == 0:
            checkpoint.save(
                _checkpoint_path(run_dir, trial, ag.episode),
                {"kind": "train", "config": config, "config_hash": cfg_hash, "trial": trial, "agent": ag},
            )

    agent.run(on_episode)
    return agent.episode


def _train_trial(args) -> int:
    config, trial, seed, run_dir = args
    kwargs = env_kwargs(config)
    env = make_env(kwargs.pop("name"), **kwargs)
    agent = PsrlAgent(env, agent_config(config, seed))
    return continue_trial(agent, Path(run_dir), trial, config)


def merge_trials(run_dir: Path, n_trials: int) -> Path:
    rows = []
    for trial in range(n_trials):
        path = _trial_csv(run_dir, trial)
        if path.exists():
            rows.extend(read_csv(path)[1])
    out = run_dir / "episodes.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        writer.writerows(rows)
    return out


def trials_complete(run_dir: Path, config: dict) -> bool:
    episodes = config.get("agent", {}).get("episodes", 30)
    for trial in range(config.get("n_trials", 1)):
        path = _trial_csv(run_dir, trial)
        if not path.exists() or len(read_csv(path)[1]) < episodes:
            return False
    return True


def run_train(config: dict, run_dir: Path, seeds: list[int], workers: int) -> dict:
    (run_dir / "trials").mkdir(exist_ok=True)
    if config.get("checkpoint_every", 0):
        (run_dir / "checkpoints").mkdir(exist_ok=True)
    jobs = [(config, t, s, str(run_dir)) for t, s in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            list(pool.map(_train_trial, jobs))
    else:
        for job in jobs:
            _train_trial(job)
    merge_trials(run_dir, len(seeds))
    return {}


# ---------------------------------------------------------------- regret


def _regret_rows(table: regret.RegretTable) -> list[tuple]:
    return [
        (table.horizon, table.d, r.T, r.episode_index, r.regret, r.stderr, r.cumulative, r.cumulative_stderr)
        for r in table.records
    ]


def growth_ratios(table: regret.RegretTable, Ts=(1250, 2500, 5000)) -> dict:
    out = {}
    max_T = table.horizon * len(table.records)
    for T in Ts:
        if 4 * T <= max_T and T >= table.horizon:
            out[str(T)] = table.growth_ratio(T)
    return out


def run_regret(config: dict, run_dir: Path, seeds: list[int], workers: int) -> dict:
    params = dict(config["regret"])
    H_list = params.pop("H_list", [10])
    T_max = params.pop("T_max", 20000)
    n_mdps = params.pop("n_mdps", 20)
    n_rollouts = params.pop("n_rollouts", 5000)
    known = params.pop("known_mdp", False)
    control_T = params.pop("control_T", 0)
    grid = {k: params.pop(k) for k in ("n_states", "n_actions") if k in params}
    prior = regret.LinearMdpPrior(**params)
    tables = regret.bayes_regret_experiment(
        prior, H_list, T_max, n_mdps, seeds[0], n_rollouts, known, workers, **grid
    )
    summary = {"d": prior.d, "T_max": T_max, "n_mdps": n_mdps, "known_mdp": known, "horizons": {}}
    for H, table in tables.items():
        write_csv(run_dir / f"regret_H{H}.csv", REGRET_COLUMNS, _regret_rows(table))
        summary["horizons"][str(H)] = {
            "cumulative_regret": table.records[-1].cumulative,
            "cumulative_stderr": table.records[-1].cumulative_stderr,
            "growth_ratio_4T": growth_ratios(table),
            "escape_rate": table.escape_rate,
            "valid": table.valid,
        }
    if control_T:
        control = regret.bayes_regret_experiment(
            prior, H_list[:1], control_T, n_mdps, seeds[0] + 1, n_rollouts, True, workers, **grid
        )[H_list[0]]
        write_csv(run_dir / "regret_control.csv", REGRET_COLUMNS, _regret_rows(control))
        gap, se = control.oracle_gap()
        summary["control"] = {
            "H": H_list[0],
            "T": control_T,
            "oracle_gap_mean": gap,
            "oracle_gap_stderr": se,
            "within_3se": abs(gap) <= 3 * se,
            "crn_cumulative_regret": control.records[-1].cumulative,
        }
    summary["valid"] = all(h["valid"] for h in summary["horizons"].values())
    (run_dir / "regret_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"valid": summary["valid"]}


# ---------------------------------------------------------------- theory


def theory_suite(name: str, params: dict, rng: np.random.Generator, run_dir: Path | None = None) -> dict:
    cases = params.get("cases", 1000)
    if name == "lemma1":
        res = tv.lemma1_suite(cases, rng)
        if run_dir is not None:
            write_csv(run_dir / "lemma1_cases.csv", ("family", "dim", "scale", "shift", "l1", "bound"), res["rows"])
        return {"families": res["families"], "violations": res["violations"]}
    if name == "tv":
        res = tv.tv_agreement_suite(cases, rng)
        return {**res, "passes": res["max_abs_error"] <= 1e-6}
    if name == "concentration":
        n_trials = params.get("n_trials", 100_000)
        out = []
        for d_s in (1, 3):
            prior = GaussianLinearPrior.isotropic(4, 1.0, 0.01)
            post = posterior_from_data(prior, rng.standard_normal((20, 4)), rng.standard_normal((20, d_s)))
            queries = rng.standard_normal((5, 4))
            for delta in (0.05, 0.1):
                c = concentration.concentration_check(post, queries, delta, n_trials, rng)
                out.append(
                    {
                        "d_s": d_s,
                        "delta": delta,
                        "min_coverage": float(c.coverage.min()),
                        "threshold": float(c.threshold.max()),
                        "holds": c.holds,
                    }
                )
        return {"cases": out, "violations": sum(not c["holds"] for c in out)}
    if name == "variance_sum":
        n = params.get("episodes", 2000)
        out = []
        for d in params.get("dims", [2, 4, 8]):
            r = information.variance_sum_experiment(d, n, rng)
            short = min(200, n)
            out.append(
                {
                    "d": d,
                    "n": n,
                    "sum": float(r.cumulative[-1]),
                    "bound": float(r.bound_curve[-1]),
                    "pointwise_violations": r.pointwise_violations,
                    "ratio_short": r.ratio(short) if short >= 2 else None,
                    "ratio_long": r.ratio(n),
                    "trend_ok": short < 2 or r.ratio(n) <= 1.5 * r.ratio(short),
                }
            )
        return {"dims": out, "violations": sum(d["pointwise_violations"] + (not d["trend_ok"]) for d in out)}
    raise ValueError(f"unknown suite {name!r}")


def run_theory(config: dict, run_dir: Path, seeds: list[int], workers: int) -> dict:
    params = config.get("theory", {})
    suite = params.get("suite", "all")
    names = ["tv", "lemma1", "concentration", "variance_sum"] if suite == "all" else [suite]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seeds[0]).spawn(len(names))]
    summary = {"suite": suite}
    for name, rng in zip(names, rngs):
        summary[name] = theory_suite(name, params, rng, run_dir)
    summary["violations"] = int(sum(summary[n].get("violations", 0) for n in names))
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"violations": summary["violations"]}


RUNNERS = {"train": run_train, "regret": run_regret, "theory": run_theory}


def execute(config: dict, run_dir: Path, workers: int = 1) -> Manifest:
    """Run one experiment; the manifest is finalized even on failure."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    n_trials = config.get("n_trials", 1) if config["kind"] == "train" else 1
    seeds = trial_seeds(config["seed"], n_trials)
    manifest = Manifest.start(run_dir, config, seeds)
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    start = time.perf_counter()
    try:
        extra = RUNNERS[config["kind"]](config, run_dir, seeds, workers)
    except Exception as exc:
        manifest.finalize("failed", error=f"{type(exc).__name__}: {exc}")
        raise
    manifest.finalize("complete", wall_seconds=round(time.perf_counter() - start, 3), **extra)
    return manifest


def resume(ckpt_path: str | Path, workers: int = 1) -> Manifest | None:
    """Continue a training trial from a checkpoint; finished trials are a no-op."""
    ckpt_path = Path(ckpt_path)
    payload = checkpoint.load(ckpt_path)
    if payload.get("kind") != "train":
        raise checkpoint.CheckpointError("only training checkpoints can be resumed")
    run_dir = ckpt_path.resolve().parent.parent
    config = payload["config"]
    if canonical_hash(config) != payload["config_hash"]:
        raise checkpoint.CheckpointError("integrity error: embedded config hash mismatch")
    manifest = Manifest.read(run_dir) if (run_dir / "manifest.json").exists() else None
    if manifest is not None and manifest.data.get("config_hash") != payload["config_hash"]:
        raise checkpoint.CheckpointError("checkpoint does not belong to this run directory")
    agent: PsrlAgent = payload["agent"]
    if agent.done:
        logger.info("trial %d already finished; nothing to resume", payload["trial"])
        return manifest
    continue_trial(agent, run_dir, payload["trial"], config)
    n_trials = config.get("n_trials", 1)
    if trials_complete(run_dir, config):
        merge_trials(run_dir, n_trials)
        if manifest is not None:
            manifest.finalize("complete", resumed_from=ckpt_path.name)
    return manifest
