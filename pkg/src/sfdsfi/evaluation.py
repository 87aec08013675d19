"""Experiment drivers and metrics: detection-probability sweeps over
offset levels, isolation batteries with injected multi-channel faults,
residual-smearing contribution curves, and the ACC / IoU / mIoU scores
with bootstrap confidence intervals.

All experiments are deterministic in (seed, spec): fault channels,
offsets, window placement and coin flips all derive from labeled RNG
streams.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FaultSpec, NormStats, inject_fault, offset_to_delta
from .errors import ConfigError
from .numerics import labeled_rng
from .predictor.rollout import predict_series
from .residuals import ResidualProfile, residual_stream
from .sfd import FusionConfig, decide_stream, fuse
from .sfi import (SfiWindow, SparseSolveConfig, contribution_scores,
                  greedy_isolation, greedy_isolation_sparse)


@dataclass
class DetectorStack:
    """Everything needed to run detection on raw data."""

    model: object
    stats: NormStats
    profile: ResidualProfile
    fusion: FusionConfig


# -- metrics -----------------------------------------------------------------

def iou(a, b) -> float:
    """Intersection over union of two index sets.

    Two empty sets agree perfectly and score 1 by convention.
    """
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def acc(predicted, truth) -> float:
    """Fraction of exact matches between paired predictions and truths."""
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise ConfigError(f"{len(predicted)} predictions vs {len(truth)} truths")
    if not predicted:
        raise ConfigError("accuracy of zero runs is undefined")
    return sum(p == t for p, t in zip(predicted, truth)) / len(predicted)


def miou(pairs) -> float:
    """Mean IoU over (predicted, truth) set pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("mIoU of zero runs is undefined")
    return float(np.mean([iou(a, b) for a, b in pairs]))


def bootstrap_ci(values, seed: int = 0, n_boot: int = 1000,
                 lo: float = 2.5, hi: float = 97.5) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of `values`."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise ConfigError("bootstrap of zero values is undefined")
    rng = labeled_rng(seed, "bootstrap")
    idx = rng.integers(0, values.size, (n_boot, values.size))
    means = values[idx].mean(axis=1)
    return float(np.percentile(means, lo)), float(np.percentile(means, hi))


def top_k_contribution(scores: np.ndarray, k: int) -> list[int]:
    """Baseline isolation: the k highest-contribution sensors."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return [int(i) for i in order[:k]]


# -- fault window plumbing ----------------------------------------------------

def _faulted_block(raw: np.ndarray, stats: NormStats, onset: int, warmup: int,
                   span: int, channels, beta: float) -> tuple[np.ndarray, list[float]]:
    """Slice [onset-warmup, onset+span) from raw data, inject the offset
    fault at the slice-local onset, and normalize."""
    if onset - warmup < 0 or onset + span > raw.shape[1]:
        raise ConfigError(f"fault window [{onset - warmup}, {onset + span}) "
                          f"overruns data of {raw.shape[1]} samples")
    block = raw[:, onset - warmup:onset + span]
    deltas = [offset_to_delta(beta, stats.mean[c]) for c in channels]
    if channels:
        block = inject_fault(block, FaultSpec(tuple(channels), tuple(deltas), warmup))
    return stats.apply(block), deltas


def _detect_batch(stack: DetectorStack, block: np.ndarray, warmup: int,
                  rng: np.random.Generator):
    """Fuse the single batch [warmup, warmup+M) of a normalized block."""
    run = predict_series(stack.model, block)
    stream = residual_stream(block, run)
    b0 = warmup - stream.start
    decisions = decide_stream(stream.norms[b0:b0 + stack.fusion.m],
                              stack.profile.gamma)
    return fuse(decisions, stack.fusion, rng, t_star=warmup)


# -- detection probability sweep ----------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    betas: tuple[float, ...]
    channels: tuple[int, ...] | None = None
    runs_per_point: int = 20
    warmup: int = 120
    seed: int = 0

    def __post_init__(self):
        if not self.betas:
            raise ConfigError("sweep needs a nonempty offset grid")
        if self.runs_per_point < 1:
            raise ConfigError("sweep needs at least one run per point")


@dataclass
class SweepPoint:
    channel: int
    beta: float
    pd: float
    ci_lo: float
    ci_hi: float
    n_runs: int


@dataclass
class SweepResult:
    rows: list[dict]
    points: list[SweepPoint]

    def point(self, channel: int, beta: float) -> SweepPoint:
        for p in self.points:
            if p.channel == channel and p.beta == beta:
                return p
        raise KeyError((channel, beta))


def _sweep_task(args) -> list[dict]:
    stack, raw, channel, beta, spec = args
    m = stack.fusion.m
    n = raw.shape[1]
    last = n - m - 1
    if last <= spec.warmup:
        raise ConfigError("test split too short for the sweep window")
    onsets = np.unique(np.linspace(spec.warmup + 1, last,
                                   spec.runs_per_point).astype(int))
    rows = []
    run_id = 0
    while len(rows) < spec.runs_per_point:
        onset = int(onsets[run_id % len(onsets)])
        rng = labeled_rng(spec.seed, f"sweep/{channel}/{beta}/{run_id}")
        block, _ = _faulted_block(raw, stack.stats, onset, spec.warmup, m,
                                  [channel] if beta != 0.0 else [], beta)
        verdict = _detect_batch(stack, block, spec.warmup, rng)
        rows.append({"channel": channel, "beta": beta, "run": run_id,
                     "onset": onset, "verdict": verdict.verdict,
                     "count": verdict.count})
        run_id += 1
    return rows


def pd_sweep(stack: DetectorStack, raw_test: np.ndarray, spec: SweepSpec,
             jobs: int = 1) -> SweepResult:
    """Empirical detection probability per (channel, offset level)."""
    channels = spec.channels
    if channels is None:
        channels = tuple(range(raw_test.shape[0]))
    tasks = [(stack, raw_test, c, b, spec) for c in channels for b in spec.betas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            groups = list(ex.map(_sweep_task, tasks))
    else:
        groups = [_sweep_task(t) for t in tasks]
    rows = [row for group in groups for row in group]
    points = []
    for c in channels:
        for b in spec.betas:
            hits = [1.0 if r["verdict"] == "H1" else 0.0
                    for r in rows if r["channel"] == c and r["beta"] == b]
            lo, hi = bootstrap_ci(hits, seed=spec.seed)
            points.append(SweepPoint(c, b, float(np.mean(hits)), lo, hi, len(hits)))
    return SweepResult(rows, points)


def average_curve(result: SweepResult, seed: int = 0) -> list[SweepPoint]:
    """Per-beta average over channels (the summary panel), channel = -1."""
    betas = sorted({p.beta for p in result.points})
    out = []
    for b in betas:
        hits = [1.0 if r["verdict"] == "H1" else 0.0
                for r in result.rows if r["beta"] == b]
        lo, hi = bootstrap_ci(hits, seed=seed)
        out.append(SweepPoint(-1, b, float(np.mean(hits)), lo, hi, len(hits)))
    return out


def curve_dominates(upper: list[SweepPoint], lower: list[SweepPoint]) -> bool:
    """True when `upper` is at least `lower` at every beta, allowing CI overlap."""
    by_beta = {p.beta: p for p in lower}
    for p in upper:
        q = by_beta.get(p.beta)
        if q is None:
            raise ConfigError(f"curves have mismatched grids at beta={p.beta}")
        if p.pd < q.pd and p.ci_hi < q.ci_lo:
            return False
    return True


# -- isolation battery ---------------------------------------------------------

@dataclass(frozen=True)
class BatterySpec:
    n_runs: int = 100
    fault_counts: tuple[int, ...] = (2, 3)
    beta_range: tuple[float, float] = (0.05, 0.3)
    etas: tuple[float, ...] = ()
    length: int = 60
    warmup: int = 120
    seed: int = 0
    gate_on_detection: bool = True


@dataclass
class BatteryResult:
    rows: list[dict]
    methods: list[str]
    miou: dict[str, float] = field(default_factory=dict)
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    detection_rate: float = 0.0
    max_iterations: dict[str, int] = field(default_factory=dict)


def _battery_task(args) -> dict:
    det, iso_model, iso_profile, raw, spec, r = args
    s = raw.shape[0]
    m = det.fusion.m
    span = m + 1 + spec.length
    rng = labeled_rng(spec.seed, f"battery/{r}")
    k = int(rng.choice(spec.fault_counts))
    channels = sorted(int(c) for c in rng.choice(s, size=k, replace=False))
    beta = float(rng.uniform(*spec.beta_range))
    last = raw.shape[1] - span - 1
    onset = int(rng.integers(spec.warmup + 1, last))
    block, deltas = _faulted_block(raw, det.stats, onset, spec.warmup, span,
                                   channels, beta)
    verdict = _detect_batch(det, block, spec.warmup, rng)
    detected = verdict.verdict == "H1"
    row = {"run": r, "channels": channels, "beta": beta, "onset": onset,
           "deltas": deltas, "detected": detected, "methods": {}}
    window = SfiWindow(block, t_star=spec.warmup, t_i=spec.warmup + m + 1,
                       length=spec.length)
    active = detected or not spec.gate_on_detection

    def record(name, fault_list, iterations, extra=None):
        entry = {"set": sorted(fault_list), "iou": iou(fault_list, channels),
                 "iterations": iterations}
        if extra:
            entry.update(extra)
        row["methods"][name] = entry

    if active:
        rep = greedy_isolation(iso_model, window, iso_profile, det.fusion)
        record("greedy", rep.fault_list, len(rep.iterations),
               {"delta_hat": rep.delta_hat})
        run = predict_series(iso_model, block)
        stream = residual_stream(block, run)
        sl = slice(window.t_i - stream.start, window.t_end - stream.start)
        cs = contribution_scores(stream.r[:, sl])
        record("topk", top_k_contribution(cs, k), 0)
        for eta in spec.etas:
            cfg = SparseSolveConfig(eta=eta)
            rep = greedy_isolation_sparse(iso_model, window, iso_profile,
                                          det.fusion, cfg)
            record(f"sparse_eta{eta:g}", rep.fault_list, len(rep.iterations))
    else:
        record("greedy", [], 0)
        record("topk", [], 0)
        for eta in spec.etas:
            record(f"sparse_eta{eta:g}", [], 0)
    return row


def fault_battery(det: DetectorStack, iso_model, iso_profile: ResidualProfile,
                  raw_test: np.ndarray, spec: BatterySpec,
                  jobs: int = 1) -> BatteryResult:
    """Inject random multi-channel offset faults and score each isolation
    method against the true fault set."""
    tasks = [(det, iso_model, iso_profile, raw_test, spec, r)
             for r in range(spec.n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_battery_task, tasks))
    else:
        rows = [_battery_task(t) for t in tasks]
    methods = list(rows[0]["methods"])
    result = BatteryResult(rows, methods)
    result.detection_rate = float(np.mean([r["detected"] for r in rows]))
    for name in methods:
        ious = [r["methods"][name]["iou"] for r in rows]
        result.miou[name] = float(np.mean(ious))
        result.ci[name] = bootstrap_ci(ious, seed=spec.seed)
        result.max_iterations[name] = max(r["methods"][name]["iterations"]
                                          for r in rows)
    return result


def battery_acc(result: BatteryResult, method: str) -> float:
    """Exact-set accuracy of one method over the battery runs."""
    pred = [frozenset(r["methods"][method]["set"]) for r in result.rows]
    true = [frozenset(r["channels"]) for r in result.rows]
    return acc(pred, true)


# -- residual smearing ----------------------------------------------------------

def smearing_experiment(stacks: dict[str, DetectorStack], raw_test: np.ndarray,
                        channel: int, betas, length: int = 60,
                        warmup: int = 120, n_windows: int = 8,
                        seed: int = 0) -> dict:
    """Contribution curves for a bias on one channel, per model.

    Returns {"rows": [...], "crossover": {name: beta | None}} where the
    crossover is the smallest grid offset at which the faulty channel has
    the largest average contribution score.
    """
    rows = []
    crossover: dict[str, float | None] = {}
    for name, stack in stacks.items():
        crossover[name] = None
        for beta in betas:
            scores = []
            n = raw_test.shape[1]
            last = n - length - 1
            onsets = np.unique(np.linspace(warmup + 1, last, n_windows).astype(int))
            for onset in onsets:
                block, _ = _faulted_block(raw_test, stack.stats, int(onset),
                                          warmup, length, [channel], beta)
                run = predict_series(stack.model, block)
                stream = residual_stream(block, run)
                sl = slice(warmup - stream.start, warmup + length - stream.start)
                scores.append(contribution_scores(stream.r[:, sl]))
            mean_scores = np.mean(scores, axis=0)
            ranks_first = int(np.argmax(mean_scores)) == channel
            for s_idx, val in enumerate(mean_scores):
                rows.append({"model": name, "beta": beta, "sensor": s_idx,
                             "score": float(val)})
            if ranks_first and crossover[name] is None and beta > 0:
                crossover[name] = beta
    return {"rows": rows, "crossover": crossover}


# -- two-stage vs one-stage -------------------------------------------------

def compare_architectures(stack_plain: DetectorStack,
                          stack_disentangled: DetectorStack,
                          raw_test: np.ndarray, sweep_spec: SweepSpec,
                          jobs: int = 1) -> dict:
    """Detection curves for both detector choices plus average panels.

    The two-stage design detects with the plain model; the one-stage
    design detects with the disentangled model it also isolates with.
    """
    two = pd_sweep(stack_plain, raw_test, sweep_spec, jobs=jobs)
    one = pd_sweep(stack_disentangled, raw_test, sweep_spec, jobs=jobs)
    return {
        "two_stage": two,
        "one_stage": one,
        "two_stage_avg": average_curve(two, seed=sweep_spec.seed),
        "one_stage_avg": average_curve(one, seed=sweep_spec.seed),
    }


# -- artifact writers ---------------------------------------------------------

def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("channel,beta,run,onset,count,verdict\n")
        for r in rows:
            fh.write(f"{r['channel']},{r['beta']!r},{r['run']},{r['onset']},"
                     f"{r['count']},{r['verdict']}\n")


def write_curves_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("channel,beta,pd,ci_lo,ci_hi,n_runs\n")
        for p in points:
            fh.write(f"{p.channel},{p.beta!r},{p.pd!r},{p.ci_lo!r},"
                     f"{p.ci_hi!r},{p.n_runs}\n")


def write_contrib_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("model,beta,sensor,score\n")
        for r in rows:
            fh.write(f"{r['model']},{r['beta']!r},{r['sensor']},{r['score']!r}\n")
