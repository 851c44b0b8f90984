"""Monte Carlo experiment runner: INI configs, seed derivation and regret CSVs.

Config layout::

    [experiment]
    T = 1000
    seeds = 0, 1, 2, 3, 4
    output = results
    run_id = h2-sequential      ; defaults to the config file stem
    timing = wall               ; wall | off  (off writes wall_ms = 0)

    [environment]
    kind = h2                   ; h1 | h2 | h3 | mushroom | statlog
    d = 5
    K = 4
    nu = 0.1
    ; datasets: path = data/mushroom.csv, per_class = 1000

    [algorithm.gcb]             ; one section per policy, label after the dot
    type = neuralgcb            ; neuralgcb | neuralucb | linucb | uniform
    m = 32
    lam = 0.1
    q = 1, 2, 4                 ; per-level schedule, last entry repeats
"""
from __future__ import annotations

import configparser
import csv
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import GcbConfig, LinUCB, NeuralGCB, NeuralUCB, UniformRandom, run_episode
from .bandit_env import SYNTHETIC_KINDS, ClassificationEnv, SyntheticEnv, load_uci, make_synthetic_model
from .design import ConfidenceParams
from .network import NetConfig, TrainSpec

__all__ = [
    "CSV_HEADER",
    "SUMMARY_HEADER",
    "ConfigError",
    "AlgorithmSpec",
    "ExperimentConfig",
    "splitmix64",
    "derive_seed",
    "parse_config",
    "load_config",
    "build_env",
    "build_policy",
    "run_experiment",
]

CSV_HEADER = ["run_id", "seed", "algorithm", "t", "cumulative_regret", "retrains_total", "wall_ms"]
SUMMARY_HEADER = ["algorithm", "n_seeds", "mean_final_regret", "std_final_regret", "mean_retrains"]
ALGORITHM_TYPES = ("neuralgcb", "neuralucb", "linucb", "uniform")
DATASET_KINDS = ("mushroom", "statlog")

_MASK64 = (1 << 64) - 1
# stream tags for derive_seed
STREAM_MODEL, STREAM_ENV, STREAM_POLICY = 1, 2, 3


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the section and field."""


def splitmix64(x):
    """One step of the splitmix64 mixer on a 64-bit integer."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, stream):
    """Independent 63-bit seed for (run seed, stream) without any global RNG."""
    return splitmix64(splitmix64(seed & _MASK64) ^ stream) >> 1


@dataclass(frozen=True)
class AlgorithmSpec:
    label: str
    kind: str
    params: dict


@dataclass(frozen=True)
class ExperimentConfig:
    T: int
    seeds: tuple
    output: Path
    run_id: str
    environment: dict
    algorithms: tuple
    timing: str = "wall"
    source: str = field(default="", compare=False)


def _err(section, key, msg):
    return ConfigError(f"[{section}] {key}: {msg}")


def _get(cp, section, key, conv, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise _err(section, key, "missing required field")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise _err(section, key, f"cannot parse {raw!r} ({exc})") from None


def _int_list(raw):
    vals = [int(v) for v in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _float_list(raw):
    vals = [float(v) for v in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _schedule_value(raw):
    vals = _float_list(raw)
    return vals[0] if len(vals) == 1 else vals


_ALG_FIELDS = {
    "L": int, "m": int, "s": int, "lam": float, "eta": float, "epochs": int, "S": float,
    "delta": float, "sigma0": float, "eta0": float, "alpha0": float, "batch_mode": str,
    "q": _schedule_value, "time_varying_beta": None, "beta": float,
}


def parse_config(text, source="<string>", base_dir=None):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep S and L case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in ("experiment", "environment"):
        if not cp.has_section(section):
            raise ConfigError(f"missing section [{section}]")

    T = _get(cp, "experiment", "T", int, required=True)
    if T < 1:
        raise _err("experiment", "T", "must be >= 1")
    seeds = tuple(_get(cp, "experiment", "seeds", _int_list, required=True))
    if any(s < 0 for s in seeds):
        raise _err("experiment", "seeds", "seeds must be non-negative")
    if len(set(seeds)) != len(seeds):
        raise _err("experiment", "seeds", "duplicate seeds")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    output = base / _get(cp, "experiment", "output", str, default="results")
    stem = Path(source).stem if source and not source.startswith("<") else "run"
    run_id = _get(cp, "experiment", "run_id", str, default=stem)
    if "," in run_id or not run_id:
        raise _err("experiment", "run_id", "must be non-empty and contain no commas")
    timing = _get(cp, "experiment", "timing", str, default="wall")
    if timing not in ("wall", "off"):
        raise _err("experiment", "timing", "must be 'wall' or 'off'")

    env = {"kind": _get(cp, "environment", "kind", str, required=True)}
    if env["kind"] in SYNTHETIC_KINDS:
        env["d"] = _get(cp, "environment", "d", int, default=5)
        env["K"] = _get(cp, "environment", "K", int, default=4)
        if env["d"] < 1 or env["K"] < 1:
            raise _err("environment", "d/K", "must be positive")
    elif env["kind"] in DATASET_KINDS:
        path = _get(cp, "environment", "path", str, required=True)
        env["path"] = str(base / path)
        env["per_class"] = _get(cp, "environment", "per_class", int, default=1000)
    else:
        raise _err("environment", "kind", f"unknown kind {env['kind']!r}")
    env["nu"] = _get(cp, "environment", "nu", float, default=0.1)
    if env["nu"] < 0:
        raise _err("environment", "nu", "must be non-negative")

    algs = []
    for section in cp.sections():
        if not section.startswith("algorithm."):
            if section not in ("experiment", "environment"):
                raise ConfigError(f"unknown section [{section}]")
            continue
        label = section.split(".", 1)[1]
        if not label or "," in label:
            raise _err(section, "label", "algorithm label must be non-empty without commas")
        kind = _get(cp, section, "type", str, required=True)
        if kind not in ALGORITHM_TYPES:
            raise _err(section, "type", f"unknown algorithm {kind!r}")
        params = {}
        for key in cp.options(section):
            if key == "type":
                continue
            if key not in _ALG_FIELDS:
                raise _err(section, key, "unknown field")
            conv = _ALG_FIELDS[key]
            if conv is None:
                try:
                    params[key] = cp.getboolean(section, key)
                except ValueError:
                    raise _err(section, key, "expected a boolean") from None
            else:
                params[key] = _get(cp, section, key, conv)
        algs.append(AlgorithmSpec(label, kind, params))
    if not algs:
        raise ConfigError("no [algorithm.<label>] sections")
    cfg = ExperimentConfig(T, seeds, output, run_id, env, tuple(algs), timing, source)
    for spec in algs:
        # build once with a dummy dimension so bad hyperparameters fail before any run starts
        try:
            _policy_parts(spec, cfg, dim=1)
        except (ValueError, TypeError) as exc:
            raise _err(f"algorithm.{spec.label}", "params", str(exc)) from None
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path), base_dir=path.parent)


# -- construction -------------------------------------------------------------


def build_env(cfg, seed):
    env = cfg.environment
    if env["kind"] in SYNTHETIC_KINDS:
        rng = np.random.default_rng(derive_seed(seed, STREAM_MODEL))
        model = make_synthetic_model(env["kind"], env["d"], rng, nu=env["nu"])
        return SyntheticEnv(model, env["d"], env["K"], derive_seed(seed, STREAM_ENV))
    X, y = load_uci(env["path"], env["kind"], env["per_class"], derive_seed(seed, STREAM_MODEL))
    return ClassificationEnv(X, y, 2, nu=env["nu"], seed=derive_seed(seed, STREAM_ENV))


def _policy_parts(spec, cfg, dim):
    p = dict(spec.params)
    lam = p.get("lam", 0.1)
    if spec.kind in ("neuralgcb", "neuralucb"):
        net = NetConfig(p.get("L", 1), p.get("m", 32), p.get("s", 1), dim)
        train = TrainSpec(lam, p.get("eta", 1e-3), p.get("epochs", 200))
        conf = ConfidenceParams(p.get("S", 1.0), cfg.environment["nu"], lam, p.get("delta", 0.1))
        if spec.kind == "neuralgcb":
            return GcbConfig(
                cfg.T, net, train, conf, sigma0=p.get("sigma0", 0.6), eta0=p.get("eta0", 0.2),
                alpha0=p.get("alpha0"), batch_mode=p.get("batch_mode", "fixed"), q=p.get("q", 1),
                time_varying_beta=p.get("time_varying_beta", False),
            )
        q = p.get("q", 1)
        if not np.isscalar(q):
            raise ValueError("neuralucb takes a single batch parameter q")
        mode = p.get("batch_mode", "fixed")
        if mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown batch mode {mode!r}")
        return net, train, conf, mode, q
    if spec.kind == "linucb":
        if lam <= 0:
            raise ValueError("lam must be positive")
        return lam, p.get("delta", 0.1), p.get("beta")
    return None


def build_policy(spec, cfg, env, seed):
    parts = _policy_parts(spec, cfg, env.dim)
    pseed = derive_seed(seed, STREAM_POLICY)
    if spec.kind == "neuralgcb":
        return NeuralGCB(parts, pseed)
    if spec.kind == "neuralucb":
        net, train, conf, mode, q = parts
        return NeuralUCB(net, train, conf, pseed, batch_mode=mode, q=q)
    if spec.kind == "linucb":
        lam, delta, beta = parts
        return LinUCB(env.dim, lam, cfg.T, env.K, delta=delta, beta=beta)
    return UniformRandom(pseed)


def _zero_clock():
    return 0.0


def run_one(cfg, spec, seed):
    env = build_env(cfg, seed)
    policy = build_policy(spec, cfg, env, seed)
    clock = time.perf_counter if cfg.timing == "wall" else _zero_clock
    return run_episode(policy, env, cfg.T, seed, clock=clock)


# -- output -------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def trace_rows(cfg, spec, trace):
    for i in range(len(trace.cumulative)):
        yield [
            cfg.run_id, trace.seed, spec.label, i + 1, _fmt(trace.cumulative[i]),
            trace.retrains[i], f"{trace.wall_ms[i]:.3f}",
        ]


class _OrderedWriter(threading.Thread):
    """Single writer: appends each (algorithm, seed) block in config order.

    Workers finish in any order; blocks are held until every earlier block of
    the same file is written, so the files do not depend on scheduling.
    """

    def __init__(self, files, order):
        super().__init__(daemon=True)
        self.inbox = queue.Queue()
        self.files = files
        self.next_index = {label: 0 for label in files}
        self.order = order  # label -> list of seeds in write order
        self.pending = {}
        self.error = None

    def run(self):
        while True:
            item = self.inbox.get()
            if item is None:
                return
            try:
                label, seed, rows = item
                self.pending[(label, seed)] = rows
                self._drain(label)
            except Exception as exc:  # surfaced by the caller after join
                self.error = exc
                return

    def _drain(self, label):
        seeds = self.order[label]
        fh, writer = self.files[label]
        while self.next_index[label] < len(seeds):
            key = (label, seeds[self.next_index[label]])
            if key not in self.pending:
                return
            writer.writerows(self.pending.pop(key))
            fh.flush()
            self.next_index[label] += 1


def _thread_count():
    raw = os.environ.get("BANDIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BANDIT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("BANDIT_THREADS must be >= 1")
    return n


def run_experiment(cfg, threads=None, traces_out=None):
    """Run every (algorithm, seed) episode and write ``<label>.csv`` plus ``summary.csv``.

    Returns a dict label -> list of final regrets (seed order).  When
    ``traces_out`` is a dict it receives label -> list of PolicyTrace.
    """
    threads = _thread_count() if threads is None else int(threads)
    cfg.output.mkdir(parents=True, exist_ok=True)
    labels = [a.label for a in cfg.algorithms]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate algorithm labels")
    paths = {a.label: cfg.output / f"{a.label}.csv" for a in cfg.algorithms}
    files = {}
    try:
        for label, path in paths.items():
            fh = open(path, "w", newline="")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            files[label] = (fh, w)
        writer = _OrderedWriter(files, {label: list(cfg.seeds) for label in labels})
        writer.start()
        finals = {label: {} for label in labels}
        retrains = {label: {} for label in labels}
        kept = {label: {} for label in labels}

        def work(spec, seed):
            trace = run_one(cfg, spec, seed)
            writer.inbox.put((spec.label, seed, list(trace_rows(cfg, spec, trace))))
            return spec.label, seed, trace

        jobs = [(spec, seed) for spec in cfg.algorithms for seed in cfg.seeds]
        try:
            with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
                for label, seed, trace in pool.map(lambda j: work(*j), jobs):
                    finals[label][seed] = trace.final_regret
                    retrains[label][seed] = trace.retrains[-1]
                    if traces_out is not None:
                        kept[label][seed] = trace
        finally:
            writer.inbox.put(None)
            writer.join()
        if writer.error is not None:
            raise writer.error
        for fh, _ in files.values():
            fh.flush()
            os.fsync(fh.fileno())
    finally:
        for fh, _ in files.values():
            fh.close()

    out = {label: [finals[label][s] for s in cfg.seeds] for label in labels}
    with open(cfg.output / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for label in labels:
            vals = np.array(out[label])
            rt = np.array([retrains[label][s] for s in cfg.seeds], dtype=float)
            w.writerow([label, len(vals), _fmt(vals.mean()), _fmt(vals.std()), _fmt(rt.mean())])
        fh.flush()
        os.fsync(fh.fileno())
    if traces_out is not None:
        for label in labels:
            traces_out[label] = [kept[label][s] for s in cfg.seeds]
    return out


def summary_stats(values):
    """(mean, population std) as written to summary.csv."""
    vals = np.asarray(values, dtype=float)
    return float(vals.mean()), float(vals.std())
