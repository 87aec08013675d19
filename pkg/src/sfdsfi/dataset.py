"""Sensor data handling: CSV IO, z-score normalization, chronological
splits, additive bias-fault injection, and a synthetic generator.

The generator drives S channels from shared latent processes (sums of
low-frequency sinusoids plus a stable AR(2) component), mixes them with
a random full-rank linear map, applies a mild monotone nonlinearity per
channel, and adds Gaussian observation noise whose level rises during
random burst episodes shared by all channels. Cross-channel correlation
is nonzero by construction. One channel can optionally be given a much
higher noise floor to model a sensor whose faults are hard to detect.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ParseError
from .numerics import check_finite, labeled_rng


@dataclass
class SensorSeries:
    """A multivariate series: values has one row per channel."""

    values: np.ndarray  # (S, N) float64
    names: tuple[str, ...]
    sample_period: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigError(f"series values must be 2-D, got ndim={self.values.ndim}")
        if len(self.names) != self.values.shape[0]:
            raise ConfigError(
                f"{len(self.names)} names for {self.values.shape[0]} channels")
        check_finite(self.values, "series values")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SensorSeries":
        return SensorSeries(values, self.names, self.sample_period)


def default_names(s: int) -> tuple[str, ...]:
    return tuple(f"s{i}" for i in range(s))


def load_csv(path) -> SensorSeries:
    """Read `t,<name1>,...,<nameS>` rows into a SensorSeries.

    Raises ParseError with the offending row and column on bad cells.
    """
    with open(path, newline="") as fh:
        return _parse_csv(fh, str(path))


def loads_csv(text: str) -> SensorSeries:
    return _parse_csv(io.StringIO(text), "<string>")


def _parse_csv(fh, where: str) -> SensorSeries:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{where}: empty file") from None
    if len(header) < 2 or header[0].strip() != "t":
        raise ParseError(f"{where}: header must be 't,<name1>,...', got {header!r}")
    names = tuple(h.strip() for h in header[1:])
    times: list[float] = []
    rows: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{where}: row {lineno} has {len(row)} cells, expected {len(header)}")
        vals = []
        for col, cell in enumerate(row):
            try:
                vals.append(float(cell))
            except ValueError:
                colname = "t" if col == 0 else names[col - 1]
                raise ParseError(f"{where}: row {lineno}, column {colname!r}: "
                                 f"not a number: {cell!r}") from None
        times.append(vals[0])
        rows.append(vals[1:])
    if not rows:
        raise ParseError(f"{where}: no data rows")
    values = np.asarray(rows, dtype=np.float64).T
    period = 1.0
    if len(times) > 1:
        steps = np.diff(times)
        if np.allclose(steps, steps[0]) and steps[0] > 0:
            period = float(steps[0])
    return SensorSeries(values, names, period)


def save_csv(path, series: SensorSeries) -> None:
    """Write a series back to CSV. Floats use repr so a reload is exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t",) + tuple(series.names))
        for k in range(series.n_samples):
            t = k * series.sample_period
            tcell = str(int(t)) if float(t).is_integer() else repr(t)
            writer.writerow([tcell] + [repr(float(v)) for v in series.values[:, k]])


@dataclass
class NormStats:
    """Per-channel z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def fit_normalizer(values: np.ndarray) -> NormStats:
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=1)
    std = values.std(axis=1)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise ConfigError(f"channel {dead[0]} has zero variance, cannot normalize")
    return NormStats(mean, std)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions; must sum to 1."""

    train: float = 0.661
    validation: float = 0.073
    test: float = 0.266

    def __post_init__(self):
        fr = (self.train, self.validation, self.test)
        if any(f <= 0 for f in fr):
            raise ConfigError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-6:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)!r}")


def split(values: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cut a (S, N) block into contiguous train/validation/test pieces.

    No shuffling: order is preserved and the three pieces concatenate
    back to the original series.
    """
    n = values.shape[1]
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.validation * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split of {n} samples leaves an empty piece "
                          f"({n_train}/{n_val}/{n_test})")
    return (values[:, :n_train],
            values[:, n_train:n_train + n_val],
            values[:, n_train + n_val:])


@dataclass(frozen=True)
class FaultSpec:
    """Permanent additive bias: channel i gains deltas[i] from onset on."""

    channels: tuple[int, ...]
    deltas: tuple[float, ...]
    onset: int

    def __post_init__(self):
        if len(self.channels) != len(self.deltas):
            raise ConfigError("channels and deltas must pair up")
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError(f"duplicate fault channels: {self.channels}")


def offset_to_delta(beta: float, channel_mean: float) -> float:
    """Raw-unit bias for a relative offset level: beta times the mean."""
    return beta * channel_mean


def inject_fault(values: np.ndarray, fault: FaultSpec) -> np.ndarray:
    """Return a copy with the bias added from the onset index onward."""
    values = np.asarray(values, dtype=np.float64)
    s, n = values.shape
    if not 0 <= fault.onset < n:
        raise ConfigError(f"fault onset {fault.onset} outside [0, {n})")
    for c in fault.channels:
        if not 0 <= c < s:
            raise ConfigError(f"fault channel {c} outside [0, {s})")
    out = values.copy()
    for c, d in zip(fault.channels, fault.deltas):
        out[c, fault.onset:] += d
    return out


@dataclass
class GeneratorConfig:
    """Knobs for the synthetic plant.

    latents: number of shared latent processes. Leaving it unset picks a
    small count (at most 3, always below the channel count) so channels
    stay mutually redundant: no sensor can be predicted well from its own
    past alone, which is what keeps a biased sensor in persistent
    disagreement with the rest.
    """

    latents: int | None = None          # default: small shared pool
    ar_coeffs: tuple[float, float] = (0.25, 0.1)
    ar_std: float = 0.03                # stationary scale of the AR component
    sin_components: int = 2
    sin_std: float = 0.7                # stationary scale of the sinusoid sum
    freq_range: tuple[float, float] = (0.0005, 0.004)
    noise_std: float = 0.02
    burst_period: float | None = 2000.0  # mean samples between noise bursts
    burst_len: int = 100
    burst_gain: float = 7.0             # noise scale inside a burst
    mix_seed: int | None = None
    mix_jitter: float = 0.08
    offset_range: tuple[float, float] = (3.4, 4.2)
    amp_range: tuple[float, float] = (0.85, 1.15)
    nonlin_strength: float = 0.15
    hard_channel: int | None = None
    hard_noise_std: float = 0.35   # about a third of a typical channel scale

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown generator config keys: {sorted(extra)}")
        kwargs = dict(d)
        for key in ("ar_coeffs", "freq_range", "offset_range", "amp_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _ar2(n: int, coeffs: tuple[float, float], target_std: float,
         rng: np.random.Generator) -> np.ndarray:
    a1, a2 = coeffs
    # stationarity of x_t = a1 x_{t-1} + a2 x_{t-2} + e_t
    if not (abs(a2) < 1 and a2 + a1 < 1 and a2 - a1 < 1):
        raise ConfigError(f"AR(2) coefficients {coeffs} are not stable")
    burn = 200
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(2, n + burn):
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + e[t]
    x = x[burn:]
    sd = x.std()
    return x * (target_std / sd) if sd > 0 else x


def _sinusoids(n: int, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n)
    lo, hi = cfg.freq_range
    freqs = np.exp(rng.uniform(np.log(lo), np.log(hi), cfg.sin_components))
    phases = rng.uniform(0.0, 2.0 * np.pi, cfg.sin_components)
    amps = rng.uniform(0.5, 1.0, cfg.sin_components)
    s = np.zeros(n)
    for a, f, p in zip(amps, freqs, phases):
        s += a * np.sin(2.0 * np.pi * f * t + p)
    sd = s.std()
    return s * (cfg.sin_std / sd) if sd > 0 else s


def _mixing(s: int, k: int, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    best = None
    best_cos = np.inf
    for _ in range(40):
        # Near-orthogonal base keeps stationary cross-correlation mild;
        # the jitter term guarantees it is nonzero.
        base = rng.standard_normal((max(s, k), max(s, k)))
        q, _ = np.linalg.qr(base)
        w = q[:s, :k] + cfg.mix_jitter * rng.standard_normal((s, k))
        if np.linalg.matrix_rank(w) < min(s, k):
            w = w + 0.01 * np.eye(s, k)
        # Unit rows: every channel carries the same latent energy, so a
        # relative-offset fault has a comparable normalized size on any
        # channel instead of being 4x easier to spot on a lucky row.
        w = w / np.linalg.norm(w, axis=1, keepdims=True)
        if k < 3 or s <= k:
            return w
        # Near-parallel rows make two sensors mutually confusable when a
        # bias has to be pinned on one of them, so keep resampling until
        # every pair of channel directions is decently separated. With
        # few latents and many sensors perfect spread is impossible;
        # settle for the best draw seen.
        g = np.abs(w @ w.T)
        worst = float(np.max(g[~np.eye(s, dtype=bool)])) if s > 1 else 0.0
        if worst < best_cos:
            best, best_cos = w, worst
        if worst <= 0.9:
            return w
    return best


def gen_synthetic(n_sensors: int, n_samples: int, seed: int,
                  config: GeneratorConfig | dict | None = None) -> SensorSeries:
    """Generate a correlated multichannel series, deterministic in seed."""
    if isinstance(config, dict):
        config = GeneratorConfig.from_dict(config)
    cfg = config or GeneratorConfig()
    if n_sensors < 2 or n_samples < 1000:
        raise ConfigError(f"need at least 2 sensors and 1000 samples, got "
                          f"{n_sensors}x{n_samples}")
    if cfg.noise_std < 0:
        raise ConfigError(f"noise_std must be nonnegative, got {cfg.noise_std}")
    # Redundancy across channels comes from driving many sensors with few
    # latents; a bias on one sensor then keeps disagreeing with the others.
    k = cfg.latents if cfg.latents is not None else max(1, min(3, n_sensors - 1))
    if k < 1:
        raise ConfigError(f"latents must be >= 1, got {k}")
    rng = labeled_rng(seed, "synth")
    mix_rng = rng if cfg.mix_seed is None else labeled_rng(cfg.mix_seed, "synth-mix")

    latents = np.empty((k, n_samples))
    for j in range(k):
        latents[j] = _sinusoids(n_samples, cfg, rng) + _ar2(
            n_samples, cfg.ar_coeffs, cfg.ar_std, rng)

    w = _mixing(n_sensors, k, cfg, mix_rng)
    mixed = w @ latents

    offs = rng.uniform(*cfg.offset_range, n_sensors)
    amps = rng.uniform(*cfg.amp_range, n_sensors)
    bend = 1.5
    values = np.empty((n_sensors, n_samples))
    for i in range(n_sensors):
        shaped = mixed[i] + cfg.nonlin_strength * bend * np.tanh(mixed[i] / bend)
        sd = shaped.std()
        if sd > 0:
            # Per-channel gain calibration: amp_range alone sets the
            # signal scale, so mean/std (and with it the visibility of a
            # relative-offset fault) stays in a narrow band.
            shaped = shaped / sd
        values[i] = offs[i] + amps[i] * shaped
    noise = rng.standard_normal((n_sensors, n_samples)) * cfg.noise_std
    if cfg.hard_channel is not None:
        if not 0 <= cfg.hard_channel < n_sensors:
            raise ConfigError(f"hard_channel {cfg.hard_channel} outside [0, {n_sensors})")
        noise[cfg.hard_channel] = rng.standard_normal(n_samples) * cfg.hard_noise_std
    if cfg.burst_period is not None:
        # Noise level is not constant in a real plant; operating-regime
        # changes show up as episodes of elevated noise on every channel
        # at once, which concentrates threshold crossings in time.
        if cfg.burst_period <= 0 or cfg.burst_len < 1 or cfg.burst_gain <= 0:
            raise ConfigError(f"bad burst knobs: period={cfg.burst_period}, "
                              f"len={cfg.burst_len}, gain={cfg.burst_gain}")
        starts = np.flatnonzero(rng.random(n_samples) < 1.0 / cfg.burst_period)
        mask = np.zeros(n_samples)
        for s0 in starts:
            mask[s0:s0 + cfg.burst_len] = 1.0
        noise *= 1.0 + (cfg.burst_gain - 1.0) * mask
    values += noise
    return SensorSeries(values, default_names(n_sensors))
