"""Flat ``key = value`` run configuration for the command line."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import ConfigError
from .model import DiscriminatorConfig, ModelConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple:
    items = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in items)


def _optional(parse: Callable) -> Callable:
    def inner(text: str):
        return None if text.strip().lower() in ("", "none", "null") else parse(text)
    return inner


def _dtype(text: str) -> str:
    text = text.strip()
    if text not in ("float32", "float64"):
        raise ValueError("expected float32 or float64")
    return text


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "input_channels": (int, 1),
    "feature_channels": (int, 128),
    "kernel_size": (int, 3),
    "encoder_dilations": (_int_list, (3, 3, 6)),
    "decoder_dilations": (_optional(_int_list), None),
    "use_dilation": (_bool, True),
    "use_residual": (_bool, True),
    "use_adversarial": (_bool, True),
    "window_len": (int, 10),
    "disc_reduce_kernel": (int, 1),
    "disc_hidden_units": (int, 150),
    "disc_hidden_layers": (int, 2),
    "rho": (float, 0.95),
    "eps": (float, 1e-6),
    "disc_eps": (_optional(float), None),
    "weight_decay": (float, 5e-4),
    "epochs": (int, 200),
    "batch_size": (int, 32),
    "seed": (int, 0),
    "stride": (_optional(int), None),
    "disc_steps": (int, 1),
    "drop_last": (_bool, True),
    "dtype": (_dtype, "float32"),
    "train_data": (str, None),
    "val_data": (_optional(str), None),
    "output_dir": (str, None),
}
REQUIRED = ("train_data", "output_dir")


@dataclass
class RunConfig:
    values: dict
    base_dir: Path

    def model_config(self) -> ModelConfig:
        v = self.values
        enc = tuple(v["encoder_dilations"])
        dec = v["decoder_dilations"]
        return ModelConfig(
            input_channels=v["input_channels"], feature_channels=v["feature_channels"],
            kernel_size=v["kernel_size"], encoder_dilations=enc,
            decoder_dilations=enc[::-1] if dec is None else tuple(dec),
            use_dilation=v["use_dilation"], use_residual=v["use_residual"],
            use_adversarial=v["use_adversarial"], window_len=v["window_len"],
            discriminator=DiscriminatorConfig(v["disc_reduce_kernel"], v["disc_hidden_units"],
                                              v["disc_hidden_layers"]),
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"], seed=v["seed"],
                           disc_steps=v["disc_steps"], stride=v["stride"], dtype=v["dtype"],
                           rho=v["rho"], eps=v["eps"], weight_decay=v["weight_decay"],
                           disc_eps=v["disc_eps"], drop_last=v["drop_last"])

    def path(self, key: str) -> Optional[Path]:
        raw = self.values.get(key)
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else (self.base_dir / p)

    def validate(self) -> "RunConfig":
        try:
            self.model_config().validate()
            self.train_config().validate()
        except ConfigError as exc:
            key = {"discriminator.reduce_kernel": "disc_reduce_kernel",
                   "discriminator.hidden_units": "disc_hidden_units",
                   "discriminator.hidden_layers": "disc_hidden_layers"}.get(exc.key, exc.key)
            raise ConfigError(key, str(exc).split(": ", 1)[-1]) from None
        return self

    def render(self) -> str:
        """Every key with its resolved value, in schema order."""
        lines = ["# resolved configuration (defaults applied)"]
        for key in SCHEMA:
            lines.append(f"{key} = {_render(self.values[key])}")
        return "\n".join(lines) + "\n"


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config(text: str, base_dir=".") -> RunConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        parse, _ = SCHEMA[key]
        try:
            values[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {value!r}: {exc}") from None
    for key in REQUIRED:
        if values[key] is None:
            raise ConfigError(key, "required key is missing")
    return RunConfig(values, Path(base_dir)).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)
