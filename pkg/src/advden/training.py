"""Reconstruction loss, gated adversarial loss and the alternating fit loop."""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NonFiniteError
from .model import ModelConfig, ModelParams, build_model, denoise, discriminate, encode, forward
from .optim import AdaDelta
from .signals import SignalPair, snr_db, stack_windows
from .tensor import Var

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7
REPORT_COLUMNS = ("epoch", "l_ed", "l_adv_disc", "l_adv_enc", "disc_accuracy", "val_snr_db")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    disc_steps: int = 1
    stride: Optional[int] = None
    dtype: str = "float32"
    rho: float = 0.95
    eps: float = 1e-6
    weight_decay: float = 5e-4
    disc_eps: Optional[float] = None
    drop_last: bool = True
    snapshot_windows: int = 200

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.disc_steps < 1:
            raise ConfigError("disc_steps", "must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride", "must be >= 1")
        if self.disc_eps is not None and not self.disc_eps > 0:
            raise ConfigError("disc_eps", "must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", "must be float32 or float64")
        return self


@dataclass
class LossBundle:
    l_ed: float
    l_adv_disc: float = math.nan
    l_adv_enc: float = math.nan
    disc_accuracy: float = math.nan


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBundle
    val_snr_db: float
    wall_seconds: float

    def row(self) -> list[str]:
        b = self.losses
        return [str(self.epoch)] + [repr(float(v)) for v in
                                    (b.l_ed, b.l_adv_disc, b.l_adv_enc, b.disc_accuracy, self.val_snr_db)]


@dataclass
class TrainReport:
    seed: int
    config_hash: str
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        lines += [",".join(rec.row()) for rec in self.epochs]
        return "\n".join(lines) + "\n"

    def to_log(self) -> str:
        out = io.StringIO()
        out.write(f"seed={self.seed} config={self.config_hash}\n")
        for rec in self.epochs:
            b = rec.losses
            out.write(f"epoch {rec.epoch:4d}  l_ed={b.l_ed:.6g}  l_adv_disc={b.l_adv_disc:.6g}  "
                      f"l_adv_enc={b.l_adv_enc:.6g}  disc_acc={b.disc_accuracy:.4f}  "
                      f"val_snr={rec.val_snr_db:.3f} dB  ({rec.wall_seconds:.2f}s)\n")
        return out.getvalue()

    def column(self, name: str) -> np.ndarray:
        if name in ("epoch", "val_snr_db", "wall_seconds"):
            return np.array([getattr(r, name) for r in self.epochs], dtype=float)
        return np.array([getattr(r.losses, name) for r in self.epochs], dtype=float)


# ---------------------------------------------------------------------------
# Losses

def loss_ed(f_out: Var, y) -> Var:
    """Mean squared reconstruction error over batch, channels and length."""
    return T.mse(f_out, y)


def loss_adv(ds_clean: Var, ds_noisy: Var, lam: int) -> Var:
    """lam * E[log DS(phi(y))] + E[log(1 - DS(phi(x)))] with clamped probabilities.

    ``lam = 0`` multiplies the clean term by zero, so nothing flows back
    through the clean path while the value equals the noisy term alone.
    """
    if lam not in (0, 1):
        raise ConfigError("lambda", f"control term must be 0 or 1, got {lam!r}")
    if not isinstance(ds_clean, Var):
        ds_clean = Var(ds_clean)
    if not isinstance(ds_noisy, Var):
        ds_noisy = Var(ds_noisy)
    hi = 1.0 - PROB_FLOOR
    clean_term = T.mean(T.log(T.clamp(ds_clean, PROB_FLOOR, hi)))
    noisy_term = T.mean(T.log(T.affine(T.clamp(ds_noisy, PROB_FLOOR, hi), -1.0, 1.0)))
    return T.add(T.scale(clean_term, float(lam)), noisy_term)


def disc_accuracy(ds_clean: np.ndarray, ds_noisy: np.ndarray) -> float:
    """Fraction classified correctly at threshold 0.5 (clean = 1, noisy = 0)."""
    ds_clean = np.asarray(ds_clean).reshape(-1)
    ds_noisy = np.asarray(ds_noisy).reshape(-1)
    correct = np.count_nonzero(ds_clean > 0.5) + np.count_nonzero(ds_noisy <= 0.5)
    return correct / (ds_clean.size + ds_noisy.size)


# ---------------------------------------------------------------------------
# One alternating step

@dataclass
class Optimizers:
    enc_dec: AdaDelta
    disc: Optional[AdaDelta]

    @classmethod
    def for_params(cls, params: ModelParams, cfg: TrainConfig) -> "Optimizers":
        kw = dict(rho=cfg.rho, eps=cfg.eps, weight_decay=cfg.weight_decay)
        disc_kw = dict(kw, eps=cfg.disc_eps if cfg.disc_eps is not None else cfg.eps)
        disc = params.discriminator()
        return cls(AdaDelta(params.encoder_decoder(), **kw), AdaDelta(disc, **disc_kw) if disc else None)

    def states(self) -> dict:
        out = {}
        for opt in (self.enc_dec, self.disc):
            if opt is not None:
                out.update(opt.states)
        return out


@contextlib.contextmanager
def frozen(tensors: dict):
    """Temporarily exclude parameters from gradient tracking."""
    flags = {k: v.requires_grad for k, v in tensors.items()}
    for v in tensors.values():
        v.requires_grad = False
    try:
        yield
    finally:
        for k, v in tensors.items():
            v.requires_grad = flags[k]


def _check(v: Var, where: str) -> None:
    if not np.all(np.isfinite(v.values)):
        T.get_tape().clear()
        raise NonFiniteError(where, "loss became non-finite")


def discriminator_step(params: ModelParams, opts: Optimizers, x: np.ndarray, y: np.ndarray, steps: int = 1):
    """Ascend the adversarial objective (lambda = 1) on discriminator weights only.

    Latents are computed without recording, so no encoder gradient exists.
    Returns ``(objective value, batch accuracy, clean latent)``.
    """
    with T.no_grad():
        lat_y = encode(params, Var(y))
        lat_x = encode(params, Var(x))
    value, acc = math.nan, math.nan
    for _ in range(steps):
        opts.disc.zero_grad()
        ds_c = discriminate(params, lat_y)
        ds_n = discriminate(params, lat_x)
        l_disc = loss_adv(ds_c, ds_n, 1)
        _check(l_disc, "discriminator step")
        T.backward(T.scale(l_disc, -1.0))
        opts.disc.step()
        value = l_disc.item()
        acc = disc_accuracy(ds_c.values, ds_n.values)
    return value, acc, lat_y


def encoder_decoder_step(params: ModelParams, opts: Optimizers, x: np.ndarray, y: np.ndarray,
                         lat_y: Optional[Var] = None):
    """Descend loss_ed + loss_adv(lambda = 0) on encoder-decoder weights.

    The adversarial term reaches the encoder through the noisy path only.
    Returns ``(l_ed, l_adv_enc, total)`` as Vars (already backpropagated).
    """
    cfg = params.config
    opts.enc_dec.zero_grad()
    disc_params = params.discriminator()
    with frozen(disc_params):
        out, lat_x = forward(params, Var(x))
        l_ed = loss_ed(out, y)
        if cfg.use_adversarial:
            if lat_y is None:
                with T.no_grad():
                    lat_y = encode(params, Var(y))
            with T.no_grad():
                ds_c = discriminate(params, lat_y.detach())
            l_enc = loss_adv(ds_c, discriminate(params, lat_x), 0)
            total = T.add(l_ed, l_enc)
        else:
            l_enc = None
            total = l_ed
        _check(total, "encoder-decoder step")
        T.backward(total)
    opts.enc_dec.step()
    return l_ed, l_enc, total


def train_step(x: np.ndarray, y: np.ndarray, params: ModelParams, opts: Optimizers,
               disc_steps: int = 1) -> LossBundle:
    """Discriminator maximisation followed by encoder-decoder minimisation.

    ``x`` and ``y`` are paired noisy/clean windows of shape (batch, 1, window_len).
    Without the adversarial flag only the reconstruction step runs.
    """
    if params.config.use_adversarial:
        l_disc, acc, lat_y = discriminator_step(params, opts, x, y, disc_steps)
        l_ed, l_enc, _ = encoder_decoder_step(params, opts, x, y, lat_y)
        return LossBundle(l_ed.item(), l_disc, l_enc.item(), acc)
    l_ed, _, _ = encoder_decoder_step(params, opts, x, y)
    return LossBundle(l_ed.item())


# ---------------------------------------------------------------------------
# Fit

@dataclass
class FitResult:
    report: TrainReport
    params: ModelParams
    best_params: ModelParams
    optimizers: Optimizers
    snapshots: dict = field(default_factory=dict)


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    blob = json.dumps({"model": model_cfg.to_dict(), "train": asdict(train_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validation_snr(params: ModelParams, pairs: Sequence[SignalPair]) -> float:
    """Mean SNR (dB) of full-length denoised validation signals."""
    if not pairs:
        return math.nan
    return float(np.mean([snr_db(p.clean, denoise(params, p.noisy)) for p in pairs]))


def heldout_accuracy(params: ModelParams, xv: np.ndarray, yv: np.ndarray) -> float:
    if not params.config.use_adversarial or len(xv) == 0:
        return math.nan
    with T.no_grad():
        ds_c = discriminate(params, encode(params, Var(yv)))
        ds_n = discriminate(params, encode(params, Var(xv)))
    return disc_accuracy(ds_c.values, ds_n.values)


def latent_snapshot(params: ModelParams, xv: np.ndarray, yv: np.ndarray):
    """Clean and noisy latents of the given windows, with labels."""
    with T.no_grad():
        lat_c = encode(params, Var(yv)).values
        lat_n = encode(params, Var(xv)).values
    latents = list(lat_c) + list(lat_n)
    labels = ["clean"] * len(lat_c) + ["noisy"] * len(lat_n)
    return latents, labels


def fit(train_set: Sequence[SignalPair], val_set: Sequence[SignalPair], model_cfg: ModelConfig,
        train_cfg: TrainConfig, params: Optional[ModelParams] = None, progress=None) -> FitResult:
    """Train for ``train_cfg.epochs`` epochs, keeping the best-validation-SNR weights.

    Everything random derives from ``train_cfg.seed``. Latent snapshots of the
    validation windows are taken after epoch 1 and after the final epoch.
    """
    model_cfg.validate()
    train_cfg.validate()
    dtype = np.dtype(train_cfg.dtype)
    if not train_set:
        raise DataError("training set is empty")
    x_all, y_all = stack_windows(train_set, model_cfg.window_len, train_cfg.stride)
    if len(x_all) == 0:
        raise DataError(f"training set yields no windows of length {model_cfg.window_len}")
    x_all, y_all = x_all.astype(dtype), y_all.astype(dtype)
    xv, yv = stack_windows(val_set, model_cfg.window_len)
    xv, yv = xv.astype(dtype), yv.astype(dtype)
    snap = slice(0, train_cfg.snapshot_windows)

    init_seed, shuffle_seed = np.random.SeedSequence(train_cfg.seed).spawn(2)
    if params is None:
        params = build_model(model_cfg, np.random.default_rng(init_seed), dtype=dtype)
    rng = np.random.default_rng(shuffle_seed)
    opts = Optimizers.for_params(params, train_cfg)
    report = TrainReport(train_cfg.seed, config_hash(model_cfg, train_cfg))
    best, best_snr = params.copy(), -math.inf
    snapshots = {}

    n = len(x_all)
    if train_cfg.drop_last and n >= train_cfg.batch_size:
        n_used = n - n % train_cfg.batch_size
    else:
        n_used = n
    for epoch in range(1, train_cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for lo in range(0, n_used, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            b = train_step(x_all[idx], y_all[idx], params, opts, train_cfg.disc_steps)
            sums += len(idx) * np.array([b.l_ed, b.l_adv_disc, b.l_adv_enc])
        means = sums / n_used
        val_snr = validation_snr(params, val_set)
        bundle = LossBundle(float(means[0]), float(means[1]), float(means[2]),
                            heldout_accuracy(params, xv, yv))
        if epoch == 1 and len(xv):
            snapshots["epoch1"] = latent_snapshot(params, xv[snap], yv[snap])
        if val_snr > best_snr or (not val_set and epoch == train_cfg.epochs):
            best, best_snr = params.copy(), val_snr
        record = EpochRecord(epoch, bundle, val_snr, time.perf_counter() - started)
        report.epochs.append(record)
        log.info("epoch %d l_ed=%.6g val_snr=%.3f dB disc_acc=%.3f", epoch, bundle.l_ed, val_snr,
                 bundle.disc_accuracy)
        if progress is not None:
            progress(record)
    if train_cfg.epochs >= 1 and len(xv):
        snapshots["final"] = latent_snapshot(params, xv[snap], yv[snap])
    return FitResult(report, params, best, opts, snapshots)
