"""Experiment harness: validated run configs, seeded multi-run execution,
aggregation and report emission.

Config files are YAML with the following sections (all optional keys have
defaults; see README for the full schema):

    name: demo
    stream:
      kind: synthetic            # synthetic | csv
      d: 3
      n: 60000
      classes: 3
      seed: null                 # null -> stream seed = run seed
      segment_len: 250
      drift: {period: 10000, dims: [0, 1], mean_delta: 6.0, scale_factor: 1.0}
      # kind: csv ->
      # path: data.csv
      # schema: {timestamp: t, values: [x0, x1], label: label, has_header: true}
    policy: rl-window            # rl-window | fixed | adwin | stream-x
    fixed_w: 100
    adwin_delta: 0.002
    agent: {preset: default, batch_size: 128, ...}   # AgentConfig overrides
    features: {m: 200, spectral: true}
    reward: {accuracy: 1.0, cost: 0.01, stability: 0.005, mode: binary}
    run:
      seeds: [1, 2, 3, 4, 5]
      horizon: 10
      cost_mode: proxy           # proxy | measured
      eval_interval: 10000
      retrain_interval: 5000
      retrain_window: 10000
      retrain_epochs: 3
      tick_logs: false
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .agent import AgentConfig, DEFAULT_ACTIONS, RewardWeights
from .baselines import AdwinWindowPolicy, FixedWindowPolicy, streamx_config
from .metrics import RunMetrics
from .runner import EpisodeConfig, RLWindowPolicy, run_episode
from .stream import CsvSchema, DriftSpec, load_csv_stream, synth_stream

POLICIES = ("rl-window", "fixed", "adwin", "stream-x")

ABLATION_NAMES = (
    "full",
    "without_dueling",
    "without_prioritized_replay",
    "without_spectral_features",
    "without_stability_penalty",
)


class ConfigError(ValueError):
    """Invalid run configuration; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))


class ReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class StreamSpec:
    kind: str = "synthetic"
    d: int = 3
    n: int = 10_000
    classes: int = 3
    seed: Optional[int] = None
    segment_len: int = 250
    drift: Optional[DriftSpec] = None
    path: Optional[str] = None
    schema: Optional[CsvSchema] = None

    def dataset_name(self) -> str:
        if self.kind == "csv":
            return Path(self.path).stem
        return f"synthetic-d{self.d}"

    def drift_ticks(self) -> tuple:
        if self.kind != "synthetic" or self.drift is None:
            return ()
        return tuple(range(self.drift.period, self.n, self.drift.period))

    def events(self, run_seed: int):
        if self.kind == "csv":
            return load_csv_stream(self.path, self.schema)
        seed = self.seed if self.seed is not None else run_seed
        return synth_stream(self.d, self.n, self.classes, self.drift,
                            seed=seed, segment_len=self.segment_len)


@dataclass(frozen=True)
class RunConfig:
    name: str = "experiment"
    stream: StreamSpec = field(default_factory=StreamSpec)
    policy: str = "rl-window"
    fixed_w: int = 100
    adwin_delta: float = 0.002
    agent: AgentConfig = field(default_factory=AgentConfig)
    m: int = 200
    spectral: bool = True
    reward: RewardWeights = field(default_factory=RewardWeights)
    reward_mode: str = "binary"
    seeds: tuple = (1, 2, 3, 4, 5)
    horizon: int = 10
    cost_mode: str = "proxy"
    eval_interval: int = 10_000
    retrain_interval: int = 5_000
    retrain_window: int = 10_000
    retrain_epochs: int = 3
    tick_logs: bool = False

    def method_name(self) -> str:
        if self.policy == "fixed":
            return f"fixed-{self.fixed_w}"
        return self.policy

    def build_policy(self):
        if self.policy == "fixed":
            return FixedWindowPolicy(self.fixed_w)
        if self.policy == "adwin":
            return AdwinWindowPolicy(self.agent.actions, self.adwin_delta)
        if self.policy == "stream-x":
            cfg = streamx_config(
                actions=self.agent.actions,
                buffer_capacity=self.agent.buffer_capacity,
                batch_size=self.agent.batch_size,
                sync_interval=self.agent.sync_interval,
                net_dtype=self.agent.net_dtype,
            )
            return RLWindowPolicy(cfg, name="stream-x")
        agent = self.agent
        if agent.include_spectral != self.spectral:
            agent = replace(agent, include_spectral=self.spectral)
        return RLWindowPolicy(agent, name="rl-window")

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(
            m=self.m,
            horizon=self.horizon,
            reward=self.reward,
            reward_mode=self.reward_mode,
            cost_mode=self.cost_mode,
            retrain_interval=self.retrain_interval,
            retrain_window=self.retrain_window,
            retrain_epochs=self.retrain_epochs,
            eval_interval=self.eval_interval,
            drift_ticks=self.stream.drift_ticks(),
        )


# ---------------------------------------------------------------------------
# Config parsing / validation
# ---------------------------------------------------------------------------


def _check(violations, ok: bool, message: str) -> bool:
    if not ok:
        violations.append(message)
    return ok


def config_from_dict(raw: dict) -> RunConfig:
    """Build a validated RunConfig; raises ConfigError listing every problem."""
    violations: list = []
    raw = dict(raw or {})

    stream_raw = dict(raw.get("stream") or {})
    kind = stream_raw.get("kind", "synthetic")
    _check(violations, kind in ("synthetic", "csv"),
           f"stream.kind must be 'synthetic' or 'csv', got {kind!r}")
    drift = None
    if stream_raw.get("drift"):
        draw = dict(stream_raw["drift"])
        try:
            drift = DriftSpec(
                period=int(draw.get("period", 10_000)),
                affected_dims=tuple(draw.get("dims", draw.get("affected_dims", (0,)))),
                mean_delta=float(draw.get("mean_delta", 0.0)),
                scale_factor=float(draw.get("scale_factor", 1.0)),
            )
        except (ValueError, TypeError) as exc:
            violations.append(f"stream.drift: {exc}")
    schema = None
    if kind == "csv":
        _check(violations, stream_raw.get("path"), "stream.path is required for csv streams")
        sraw = dict(stream_raw.get("schema") or {})
        _check(violations, sraw.get("values"), "stream.schema.values is required for csv streams")
        if sraw.get("values"):
            schema = CsvSchema(
                value_columns=tuple(sraw["values"]),
                timestamp=sraw.get("timestamp", "row-index"),
                label=sraw.get("label"),
                has_header=bool(sraw.get("has_header", True)),
            )
    d = int(stream_raw.get("d", 3))
    n = int(stream_raw.get("n", 10_000))
    classes = int(stream_raw.get("classes", 3))
    _check(violations, d >= 1, f"stream.d must be >= 1, got {d}")
    _check(violations, n >= 0, f"stream.n must be >= 0, got {n}")
    _check(violations, classes >= 2, f"stream.classes must be >= 2, got {classes}")
    if drift is not None and d >= 1:
        try:
            drift.validate_for_dim(d)
        except ValueError as exc:
            violations.append(f"stream.drift: {exc}")
    stream = StreamSpec(
        kind=kind, d=d, n=n, classes=classes,
        seed=stream_raw.get("seed"),
        segment_len=int(stream_raw.get("segment_len", 250)),
        drift=drift, path=stream_raw.get("path"), schema=schema,
    )

    policy = raw.get("policy", "rl-window")
    _check(violations, policy in POLICIES, f"policy must be one of {POLICIES}, got {policy!r}")

    agent_raw = dict(raw.get("agent") or {})
    preset = agent_raw.pop("preset", "default")
    _check(violations, preset in ("default", "compact"),
           f"agent.preset must be 'default' or 'compact', got {preset!r}")
    features_raw = dict(raw.get("features") or {})
    spectral = bool(features_raw.get("spectral", True))
    agent_raw.setdefault("include_spectral", spectral)
    try:
        agent = AgentConfig.compact(**agent_raw) if preset == "compact" else AgentConfig(**agent_raw)
    except (TypeError, ValueError) as exc:
        violations.append(f"agent: {exc}")
        agent = AgentConfig()

    reward_raw = dict(raw.get("reward") or {})
    reward_mode = reward_raw.pop("mode", "binary")
    _check(violations, reward_mode in ("binary", "logloss"),
           f"reward.mode must be 'binary' or 'logloss', got {reward_mode!r}")
    reward = RewardWeights(
        accuracy=float(reward_raw.get("accuracy", 1.0)),
        cost=float(reward_raw.get("cost", 0.01)),
        stability=float(reward_raw.get("stability", 0.005)),
    )

    run_raw = dict(raw.get("run") or {})
    seeds = tuple(int(s) for s in run_raw.get("seeds", (1, 2, 3, 4, 5)))
    _check(violations, len(seeds) >= 1, "run.seeds must be nonempty")
    _check(violations, len(set(seeds)) == len(seeds), f"run.seeds must be distinct, got {seeds}")
    horizon = int(run_raw.get("horizon", 10))
    _check(violations, horizon >= 0, f"run.horizon must be >= 0, got {horizon}")
    cost_mode = run_raw.get("cost_mode", "proxy")
    _check(violations, cost_mode in ("proxy", "measured"),
           f"run.cost_mode must be 'proxy' or 'measured', got {cost_mode!r}")
    m = int(features_raw.get("m", 200))
    _check(violations, m >= 2, f"features.m must be >= 2, got {m}")
    _check(violations, m >= max(agent.actions),
           f"features.m ({m}) must cover the largest window {max(agent.actions)}")
    retrain_interval = int(run_raw.get("retrain_interval", 5_000))
    _check(violations, retrain_interval >= 1, "run.retrain_interval must be >= 1")
    fixed_w = int(raw.get("fixed_w", 100))
    _check(violations, fixed_w > 0, f"fixed_w must be positive, got {fixed_w}")
    adwin_delta = float(raw.get("adwin_delta", 0.002))
    _check(violations, 0.0 < adwin_delta < 1.0,
           f"adwin_delta must be in (0, 1), got {adwin_delta}")

    if violations:
        raise ConfigError(violations)

    return RunConfig(
        name=str(raw.get("name", "experiment")),
        stream=stream, policy=policy, fixed_w=fixed_w, adwin_delta=adwin_delta,
        agent=agent, m=m, spectral=spectral, reward=reward, reward_mode=reward_mode,
        seeds=seeds, horizon=horizon, cost_mode=cost_mode,
        eval_interval=int(run_raw.get("eval_interval", 10_000)),
        retrain_interval=retrain_interval,
        retrain_window=int(run_raw.get("retrain_window", 10_000)),
        retrain_epochs=int(run_raw.get("retrain_epochs", 3)),
        tick_logs=bool(run_raw.get("tick_logs", False)),
    )


def load_config(path) -> RunConfig:
    with Path(path).open() as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    per_seed: dict              # seed -> RunMetrics
    aggregate_row: dict         # formatted string cells for aggregate.csv


def run_seed(config: RunConfig, seed: int, out_dir: Optional[Path] = None) -> RunMetrics:
    """Execute one isolated seeded run and optionally write its files."""
    events = config.stream.events(seed)
    policy = config.build_policy()
    metrics, log = run_episode(
        events, policy, config.stream.d, config.stream.classes,
        config.episode_config(), seed=seed,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        method = config.method_name()
        metrics.write_csv(out_dir / f"metrics_{method}_{seed}.csv")
        if config.tick_logs:
            log.write_csv(out_dir / f"ticks_{method}_{seed}.csv")
    return metrics


AGGREGATE_COLUMNS = (
    "method", "dataset", "seeds",
    "accuracy_mean", "accuracy_std",
    "avg_window_mean", "avg_window_std",
    "proxy_cost_ms_mean", "proxy_cost_ms_std",
    "drift_robustness_mean", "drift_robustness_std",
    "stability_mean", "stability_std",
    "latency_ms_mean", "latency_ms_std",
)


def _fmt6(x: float) -> str:
    return f"{x:.6f}"


def _mean_std(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate_metrics(config: RunConfig, per_seed: dict) -> dict:
    """Mean +- std row over seeds, formatted as deterministic strings."""
    ordered = [per_seed[s] for s in sorted(per_seed)]
    row = {
        "method": config.method_name(),
        "dataset": config.stream.dataset_name(),
        "seeds": ";".join(str(s) for s in sorted(per_seed)),
    }
    for name, attr in (
        ("accuracy", "accuracy"), ("avg_window", "avg_window"),
        ("proxy_cost_ms", "compute_cost_ms"),
        ("drift_robustness", "drift_robustness"),
        ("stability", "stability"), ("latency_ms", "latency_ms"),
    ):
        values = [getattr(m, attr) for m in ordered]
        if attr == "drift_robustness" and any(v is None for v in values):
            row[f"{name}_mean"] = "n/a"
            row[f"{name}_std"] = "n/a"
            continue
        mean, std = _mean_std(values)
        row[f"{name}_mean"] = _fmt6(mean)
        row[f"{name}_std"] = _fmt6(std)
    return row


def run(config: RunConfig, out_dir=None, jobs: int = 1) -> RunResult:
    """Run every seed, write per-seed metrics plus aggregate.csv and report.md.

    ``jobs > 1`` runs seeds in parallel processes; each run owns all its
    state, and results are reduced in seed order, so outputs are identical
    to a sequential run.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    per_seed = {}
    if jobs > 1 and len(config.seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {seed: pool.submit(run_seed, config, seed, out_path)
                       for seed in config.seeds}
            for seed in config.seeds:
                per_seed[seed] = futures[seed].result()
    else:
        for seed in config.seeds:
            per_seed[seed] = run_seed(config, seed, out_path)
    row = aggregate_metrics(config, per_seed)
    result = RunResult(config=config, per_seed=per_seed, aggregate_row=row)
    if out_path is not None:
        write_aggregate(out_path / "aggregate.csv", [row])
        write_report(out_path / "report.md", [row])
    return result


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


def ablation_suite(base: RunConfig) -> list:
    """The base config plus the four single-toggle ablation variants."""
    if base.policy != "rl-window":
        raise ConfigError(["ablation requires policy: rl-window"])
    variants = [("full", base)]
    variants.append(("without_dueling",
                     replace(base, agent=replace(base.agent, dueling=False))))
    variants.append(("without_prioritized_replay",
                     replace(base, agent=replace(base.agent, prioritized=False))))
    variants.append(("without_spectral_features",
                     replace(base, spectral=False,
                             agent=replace(base.agent, include_spectral=False))))
    variants.append(("without_stability_penalty",
                     replace(base, reward=replace(base.reward, stability=0.0))))
    return variants


def run_ablations(base: RunConfig, out_dir=None) -> list:
    """Run the full ablation suite; returns (name, RunResult) pairs."""
    results = []
    out_path = Path(out_dir) if out_dir is not None else None
    for name, cfg in ablation_suite(base):
        sub = out_path / name if out_path is not None else None
        result = run(cfg, sub)
        result.aggregate_row = dict(result.aggregate_row, method=f"rl-window[{name}]")
        results.append((name, result))
    if out_path is not None:
        rows = [res.aggregate_row for _, res in results]
        write_aggregate(out_path / "aggregate.csv", rows)
        write_report(out_path / "report.md", rows)
    return results


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_aggregate(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ReportError("nothing to report")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in AGGREGATE_COLUMNS])


def read_aggregate(path) -> list:
    """Rows of aggregate.csv as string-valued dicts (round-trip safe)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != AGGREGATE_COLUMNS:
            raise ReportError(f"{path} is not an aggregate.csv (bad header)")
        return [dict(zip(AGGREGATE_COLUMNS, row)) for row in reader]


def _pm(row: dict, name: str) -> str:
    mean = row[f"{name}_mean"]
    std = row[f"{name}_std"]
    if mean == "n/a":
        return "n/a"
    return f"{mean} ± {std}"


def render_report(rows: Sequence[dict]) -> str:
    """Markdown comparison table, one row per (method, dataset)."""
    if not rows:
        raise ReportError("nothing to report")
    lines = [
        "# Window-policy comparison",
        "",
        "Evaluation is prequential (predict-then-learn on the training stream);",
        "cost and latency columns are the deterministic window-proportional proxy",
        "unless the run used `cost_mode: measured`.",
        "",
        "| Method | Dataset | Accuracy | Avg window | Proxy cost (ms) | Drift robustness | Stability |",
        "|---|---|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['method']} | {row['dataset']} | {_pm(row, 'accuracy')} "
            f"| {_pm(row, 'avg_window')} | {_pm(row, 'proxy_cost_ms')} "
            f"| {_pm(row, 'drift_robustness')} | {_pm(row, 'stability')} |"
        )
    lines.append("")
    return "\n".join(lines)


def write_report(path, rows: Sequence[dict]) -> None:
    Path(path).write_text(render_report(rows))


def emit_report(rows: Sequence[dict], out_dir) -> tuple:
    """Write aggregate.csv + report.md; returns their paths."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    agg = out_path / "aggregate.csv"
    rep = out_path / "report.md"
    write_aggregate(agg, rows)
    write_report(rep, rows)
    return agg, rep
