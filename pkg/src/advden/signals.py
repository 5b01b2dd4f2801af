"""Synthetic signals, noise models, windowing, SNR, CSV I/O and latent export."""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CLEAN_KINDS = ("sine", "multisine", "synthetic_ecg")
NOISE_KINDS = ("gaussian", "random_walk", "powerline", "composite")


@dataclass
class SignalPair:
    """An aligned clean/noisy recording. ``clean`` is None for unlabeled input."""

    clean: Optional[np.ndarray]
    noisy: np.ndarray
    sample_rate_hz: float = 200.0
    id: str = "signal"

    def __post_init__(self):
        self.noisy = np.asarray(self.noisy, dtype=np.float64)
        if self.noisy.ndim != 1 or self.noisy.size < 1:
            raise DataError(f"{self.id}: noisy signal must be a nonempty 1D sequence")
        if self.clean is not None:
            self.clean = np.asarray(self.clean, dtype=np.float64)
            if self.clean.shape != self.noisy.shape:
                raise DataError(f"{self.id}: clean and noisy lengths differ "
                                f"({self.clean.size} vs {self.noisy.size})")
            if not np.all(np.isfinite(self.clean)):
                raise DataError(f"{self.id}: clean signal has non-finite values")
        if not np.all(np.isfinite(self.noisy)):
            raise DataError(f"{self.id}: noisy signal has non-finite values")
        if not self.sample_rate_hz > 0:
            raise DataError(f"{self.id}: sample rate must be positive")

    def __len__(self):
        return self.noisy.size


@dataclass
class NoiseSpec:
    kind: str = "gaussian"
    sigma: float = 0.0
    line_freq_hz: float = 50.0
    amplitude: float = 0.0
    seed: int = 0
    components: list = field(default_factory=list)

    def validate(self) -> "NoiseSpec":
        if self.kind not in NOISE_KINDS:
            raise ConfigError("noise.kind", f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.sigma < 0:
            raise ConfigError("noise.sigma", "must be nonnegative")
        if self.kind == "powerline" and not self.line_freq_hz > 0:
            raise ConfigError("noise.line_freq_hz", "must be positive")
        if self.kind == "composite":
            if not self.components:
                raise ConfigError("noise.components", "composite noise needs at least one component")
            for c in self.components:
                if c.kind == "composite":
                    raise ConfigError("noise.components", "composite noise cannot nest")
                c.validate()
        return self

    def scaled(self, factor: float) -> "NoiseSpec":
        """Every noise magnitude multiplied by ``factor`` (same realisation)."""
        return replace(
            self, sigma=self.sigma * factor, amplitude=self.amplitude * factor,
            components=[c.scaled(factor) for c in self.components],
        )


def default_noise(kind: str, seed: int = 0) -> NoiseSpec:
    """Unit-magnitude noise of ``kind``; rescale with :func:`noise_for_snr`."""
    if kind == "gaussian":
        return NoiseSpec("gaussian", sigma=1.0, seed=seed)
    if kind == "random_walk":
        return NoiseSpec("random_walk", sigma=1.0, seed=seed)
    if kind == "powerline":
        return NoiseSpec("powerline", amplitude=1.0, seed=seed)
    if kind == "composite":
        # contact noise and motion artifacts stand-in: drift plus mains hum
        return NoiseSpec("composite", seed=seed, components=[
            NoiseSpec("random_walk", sigma=0.1, seed=seed),
            NoiseSpec("powerline", amplitude=1.0, seed=seed + 1),
        ])
    raise ConfigError("noise.kind", f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


# ---------------------------------------------------------------------------
# Clean signals

def gen_clean(kind: str, length: int, sample_rate_hz: float = 200.0, seed: int = 0,
              base_freq_hz: float = 0.5) -> np.ndarray:
    """Deterministic synthetic clean signal.

    ``sine``: unit amplitude at ``4 * base_freq_hz`` with a random phase.
    ``multisine``: three random-phase sinusoids at distinct integer multiples
    (1..8) of ``base_freq_hz`` with amplitudes in [0.3, 1]; the sum repeats
    every ``1 / base_freq_hz`` seconds and has zero mean over that period.
    ``synthetic_ecg``: a periodic P/QRS/T bump template on a slow baseline.
    """
    if length < 1:
        raise ConfigError("length", "must be >= 1")
    if kind not in CLEAN_KINDS:
        raise ConfigError("kind", f"unknown signal kind {kind!r}; expected one of {CLEAN_KINDS}")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate_hz
    if kind == "sine":
        phase = rng.uniform(0, 2 * np.pi)
        return np.sin(2 * np.pi * 4 * base_freq_hz * t + phase)
    if kind == "multisine":
        harmonics = rng.choice(np.arange(1, 9), size=3, replace=False)
        amps = rng.uniform(0.3, 1.0, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        out = np.zeros(length)
        for h, a, p in zip(harmonics, amps, phases):
            out += a * np.sin(2 * np.pi * h * base_freq_hz * t + p)
        return out
    return _synthetic_ecg(t, rng)


def _synthetic_ecg(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    rate_hz = rng.uniform(1.0, 1.4)
    # (offset within the beat, width, height) in seconds / arbitrary units
    waves = [(-0.20, 0.025, 0.12), (-0.04, 0.010, -0.10), (0.0, 0.012, 1.0),
             (0.04, 0.010, -0.20), (0.25, 0.040, 0.30)]
    period = 1.0 / rate_hz
    phase = np.mod(t + rng.uniform(0, period), period) - 0.35 * period
    out = np.zeros_like(t)
    for center, width, height in waves:
        out += height * np.exp(-0.5 * ((phase - center) / width) ** 2)
    wander = 0.05 * np.sin(2 * np.pi * 0.2 * t + rng.uniform(0, 2 * np.pi))
    return out + wander


# ---------------------------------------------------------------------------
# Noise

def noise_only(length: int, spec: NoiseSpec, sample_rate_hz: float = 200.0) -> np.ndarray:
    """The additive noise realisation that :func:`corrupt` would add."""
    spec.validate()
    if spec.kind == "composite":
        total = np.zeros(length)
        for c in spec.components:
            total += noise_only(length, c, sample_rate_hz)
        return total
    if spec.kind == "powerline":
        t = np.arange(length)
        return spec.amplitude * np.sin(2 * np.pi * spec.line_freq_hz * t / sample_rate_hz)
    steps = np.random.default_rng(spec.seed).normal(0.0, 1.0, size=length) * spec.sigma
    if spec.kind == "random_walk":
        return np.cumsum(steps)
    return steps


def corrupt(clean, spec: NoiseSpec, sample_rate_hz: float = 200.0) -> np.ndarray:
    """clean + noise; every noise kind is independent of the signal."""
    clean = np.asarray(clean, dtype=np.float64)
    return clean + noise_only(clean.size, spec, sample_rate_hz)


def noise_for_snr(clean, spec: NoiseSpec, snr_db_target: float, sample_rate_hz: float = 200.0) -> NoiseSpec:
    """Rescale ``spec`` so that corrupting ``clean`` yields exactly ``snr_db_target``."""
    clean = np.asarray(clean, dtype=np.float64)
    n = noise_only(clean.size, spec, sample_rate_hz)
    noise_power = float(np.sum(n * n))
    if noise_power == 0.0:
        raise ConfigError("noise", "noise realisation has zero power; cannot reach a finite SNR")
    factor = math.sqrt(float(np.sum(clean * clean)) / (noise_power * 10.0 ** (snr_db_target / 10.0)))
    return spec.scaled(factor)


# ---------------------------------------------------------------------------
# Metrics and windowing

def snr_db(clean, estimate) -> float:
    """10 log10(sum clean^2 / sum (clean - estimate)^2); +inf for a perfect estimate."""
    clean = np.asarray(clean, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if clean.shape != estimate.shape:
        raise DataError(f"snr_db: length mismatch {clean.shape} vs {estimate.shape}")
    signal = float(np.sum(clean * clean))
    if signal == 0.0:
        raise DataError("snr_db: clean signal is all zeros")
    err = clean - estimate
    residual = float(np.sum(err * err))
    if residual == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / residual)


def format_snr(value: float) -> str:
    return "inf" if math.isinf(value) and value > 0 else f"{value:.2f}"


def window_split(pair: SignalPair, window_len: int, stride: Optional[int] = None):
    """Aligned ``(noisy, clean)`` windows of exactly ``window_len`` samples.

    Non-overlapping by default; a trailing remainder is dropped.
    """
    if window_len < 1:
        raise ConfigError("window_len", "must be >= 1")
    stride = window_len if stride is None else stride
    if stride < 1:
        raise ConfigError("stride", "must be >= 1")
    n = len(pair)
    if n < window_len:
        log.warning("signal %s has %d samples, shorter than the %d-sample window; no windows produced",
                    pair.id, n, window_len)
        return []
    starts = range(0, n - window_len + 1, stride)
    clean = pair.clean
    return [(pair.noisy[s:s + window_len], None if clean is None else clean[s:s + window_len])
            for s in starts]


def stack_windows(pairs: Sequence[SignalPair], window_len: int, stride: Optional[int] = None):
    """All windows of all pairs as two arrays of shape (n, 1, window_len)."""
    noisy, clean = [], []
    for pair in pairs:
        for xw, yw in window_split(pair, window_len, stride):
            noisy.append(xw)
            clean.append(yw)
    if not noisy:
        return np.zeros((0, 1, window_len)), np.zeros((0, 1, window_len))
    return np.stack(noisy)[:, None, :], np.stack(clean)[:, None, :]


# ---------------------------------------------------------------------------
# Files

def _atomic_write(path: Path, write_fn) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pair(pair: SignalPair, path) -> Path:
    """Write one pair as ``t,noisy,clean`` rows."""
    if pair.clean is None:
        raise DataError(f"{pair.id}: cannot save a pair without a clean signal")

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "noisy", "clean"])
        for i, (xn, yc) in enumerate(zip(pair.noisy, pair.clean)):
            w.writerow([repr(i / pair.sample_rate_hz), repr(float(xn)), repr(float(yc))])

    _atomic_write(Path(path), write)
    return Path(path)


def save_csv(pairs: Sequence[SignalPair], directory) -> list[Path]:
    """One ``<id>.csv`` per pair inside ``directory``."""
    directory = Path(directory)
    return [save_pair(p, directory / f"{p.id}.csv") for p in pairs]


def _parse_float(cell: str, path, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} in column {column!r}", path, line) from None


def _infer_rate(t: np.ndarray) -> float:
    if t.size < 2:
        return 200.0
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not dt > 0:
        return 200.0
    return float(f"{1.0 / dt:.9g}")


def load_pair(path, require_clean: bool = True) -> Optional[SignalPair]:
    """Read one ``t,noisy,clean`` file. Returns None for a header-only file."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty file (missing header)", path, 1)
    header = [h.strip() for h in rows[0]]
    needed = ["t", "noisy"] + (["clean"] if require_clean else [])
    for col in needed:
        if col not in header:
            raise DataError(f"missing column {col!r}", path, 1)
    idx = {name: header.index(name) for name in header}
    has_clean = "clean" in idx
    t, noisy, clean = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"ragged row: {len(row)} cells, header has {len(header)}", path, line)
        t.append(_parse_float(row[idx["t"]], path, line, "t"))
        noisy.append(_parse_float(row[idx["noisy"]], path, line, "noisy"))
        if has_clean:
            clean.append(_parse_float(row[idx["clean"]], path, line, "clean"))
    if not noisy:
        return None
    return SignalPair(np.array(clean) if has_clean else None, np.array(noisy),
                      _infer_rate(np.array(t)), path.stem)


def load_csv(path, require_clean: bool = True) -> list[SignalPair]:
    """Load a single pair file or every ``*.csv`` in a directory (sorted by name)."""
    path = Path(path)
    if not path.exists():
        raise DataError("no such file or directory", path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    pairs = []
    for f in files:
        pair = load_pair(f, require_clean=require_clean)
        if pair is not None:
            pairs.append(pair)
    return pairs


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal directions of the centered set."""
    X = np.asarray(vectors, dtype=np.float64)
    X = X - X.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    comps = np.zeros((2, X.shape[1]))
    comps[: min(2, vt.shape[0])] = vt[:2]
    return X @ comps.T


def export_latents_2d(latents, labels: Sequence[str], path) -> np.ndarray:
    """Flatten each latent, project to 2D and write ``pc1,pc2,label`` rows."""
    vectors = [np.asarray(getattr(v, "values", v), dtype=np.float64).reshape(-1) for v in latents]
    if len(vectors) < 3:
        raise DataError(f"need at least 3 latent vectors, got {len(vectors)}")
    if len(labels) != len(vectors):
        raise DataError(f"{len(vectors)} latents but {len(labels)} labels")
    coords = pca_2d(np.stack(vectors))

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pc1", "pc2", "label"])
        for (a, b), lab in zip(coords, labels):
            w.writerow([repr(float(a)), repr(float(b)), lab])

    _atomic_write(Path(path), write)
    return coords
