"""Command-line front end.

Exit codes: 0 ok, 1 check failure, 2 config error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, signals
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import CheckpointError, ConfigError, DataError, NonFiniteError
from .model import closed_form_count, denoise, param_count
from .signals import SignalPair, format_snr, snr_db
from .training import fit

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4

log = logging.getLogger("advden")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        run = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config error: {exc}")
    model_cfg, train_cfg = run.model_config(), run.train_config()
    try:
        train_set = signals.load_csv(run.path("train_data"))
        val_path = run.path("val_data")
        val_set = signals.load_csv(val_path) if val_path is not None else []
        result = fit(train_set, val_set, model_cfg, train_cfg,
                     progress=lambda rec: log.info("epoch %d val_snr=%.3f", rec.epoch, rec.val_snr_db))
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    except NonFiniteError as exc:
        return _fail(EXIT_CHECK, str(exc))

    out = run.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.cfg").write_text(run.render())
    (out / "report.csv").write_text(result.report.to_csv())
    (out / "train.log").write_text(result.report.to_log())
    save_checkpoint(out / "model.ckpt", result.best_params, result.optimizers.states(),
                    extra={"seed": train_cfg.seed, "config_hash": result.report.config_hash})
    for tag in ("epoch1", "final"):
        if tag in result.snapshots:
            latents, labels = result.snapshots[tag]
            signals.export_latents_2d(latents, labels, out / f"latents_{tag}.csv")
    last = result.report.epochs[-1] if result.report.epochs else None
    if last is not None:
        print(f"trained {len(result.report.epochs)} epochs; final val SNR {format_snr(last.val_snr_db)} dB")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _load_model(path):
    try:
        return load_checkpoint(path)[0]
    except CheckpointError:
        raise
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def cmd_denoise(args) -> int:
    try:
        params = _load_model(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    if params.config.input_channels != 1:
        return _fail(EXIT_CHECKPOINT, f"checkpoint expects {params.config.input_channels} input channels; "
                                      "CSV signals have 1")
    try:
        pairs = signals.load_csv(args.input, require_clean=False)
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    if not pairs:
        return _fail(EXIT_DATA, f"{args.input}: no signals found")
    outputs = [denoise(params, p.noisy) for p in pairs]
    n = max(len(o) for o in outputs)
    rate = pairs[0].sample_rate_hz
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [p.id for p in pairs])
    for i in range(n):
        w.writerow([repr(i / rate)] + [repr(float(o[i])) if i < len(o) else "" for o in outputs])
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    signals._atomic_write(Path(args.output), lambda fh: fh.write(buf.getvalue()))
    return EXIT_OK


def evaluate(params, pairs: list[SignalPair]) -> tuple[float, float]:
    """Mean (initial, model) SNR in dB over ``pairs``."""
    initial = [snr_db(p.clean, p.noisy) for p in pairs]
    model = [snr_db(p.clean, denoise(params, p.noisy)) for p in pairs]
    return float(np.mean(initial)), float(np.mean(model))


def snr_table(initial: float, model: float, label: str = "Model") -> str:
    width = max(len(label), len("Initial noise"))
    return "\n".join([
        f"{'':<{width}}  SNR(dB)",
        f"{'Initial noise':<{width}}  {format_snr(initial):>7}",
        f"{label:<{width}}  {format_snr(model):>7}",
    ])


def cmd_eval(args) -> int:
    try:
        params = _load_model(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    try:
        pairs = signals.load_csv(args.dataset, require_clean=True)
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    if not pairs:
        return _fail(EXIT_DATA, f"{args.dataset}: no signals found")
    try:
        initial, model = evaluate(params, pairs)
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    print(snr_table(initial, model))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    results = gradcheck.run_gradcheck(seeds, model_samples=args.model_samples,
                                      include_model=not args.skip_model)
    print(gradcheck.format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        for r in failed:
            print(f"FAILED {r.op}: max relative error {r.max_rel_error:.3e} > {r.tol:.0e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _split_seeds(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(3)
    out = {}
    for split, child in zip(("train", "val", "test"), children):
        clean_seed, noise_seed = (int(s) for s in child.generate_state(2))
        out[split] = (clean_seed, noise_seed)
    return out


def generate_dataset(out, kind: str, noise: str, snr_db_target: float, seed: int = 0,
                     lengths=(10_000, 1_000, 1_000), sample_rate_hz: float = 200.0,
                     line_freq_hz: float = 50.0) -> dict:
    """Write ``train/``, ``val/`` and ``test/`` CSVs; returns the realised SNR per split."""
    out = Path(out)
    realised = {}
    for (split, (clean_seed, noise_seed)), length in zip(_split_seeds(seed).items(), lengths):
        clean = signals.gen_clean(kind, length, sample_rate_hz, clean_seed)
        spec = signals.default_noise(noise, noise_seed)
        for c in [spec] + spec.components:
            c.line_freq_hz = line_freq_hz
        spec = signals.noise_for_snr(clean, spec, snr_db_target, sample_rate_hz)
        noisy = signals.corrupt(clean, spec, sample_rate_hz)
        pair = SignalPair(clean, noisy, sample_rate_hz, f"{split}_{kind}_{noise}_s{seed}")
        signals.save_csv([pair], out / split)
        realised[split] = snr_db(clean, noisy)
    return realised


def cmd_gen(args) -> int:
    try:
        realised = generate_dataset(args.out, args.kind, args.noise, args.snr_db, args.seed,
                                    (args.train_len, args.val_len, args.test_len),
                                    args.sample_rate, args.line_freq)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    for split, value in realised.items():
        print(f"{split}: initial SNR {value:.2f} dB")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        params = _load_model(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    cfg = params.config
    print(f"{'layer':<16} {'weight':<16} {'params':>9}")
    for name, (w, b) in params.layers.items():
        print(f"{name:<16} {'x'.join(map(str, w.shape)):<16} {w.size + b.size:>9d}")
    print(f"encoder-decoder parameters: {param_count(params)} (closed form {closed_form_count(cfg)})")
    print(f"with discriminator:         {param_count(params, include_discriminator=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advden", description="Adversarial encoder-decoder signal denoiser")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train from a run config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="denoise full-length signals with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="signal CSV or directory of CSVs")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("eval", help="print initial and model SNR over a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True, help="directory of t,noisy,clean CSVs")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    s.add_argument("--model-samples", type=int, default=3, help="entries checked per model tensor")
    s.add_argument("--skip-model", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("gen", help="generate a synthetic train/val/test dataset")
    s.add_argument("--kind", required=True, choices=signals.CLEAN_KINDS)
    s.add_argument("--noise", required=True, choices=signals.NOISE_KINDS)
    s.add_argument("--snr-db", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-len", type=int, default=10_000)
    s.add_argument("--val-len", type=int, default=1_000)
    s.add_argument("--test-len", type=int, default=1_000)
    s.add_argument("--sample-rate", type=float, default=200.0)
    s.add_argument("--line-freq", type=float, default=50.0)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("inspect", help="list layers and parameter counts of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
