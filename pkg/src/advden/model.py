"""Residual dilated encoder-decoder and latent discriminator.

Layer names are stable and double as checkpoint keys::

    enc.conv0            1 -> C, d=1
    enc.dil1..n          C -> C, dilated convolutions
    dec.dil1..n          C -> C, dilated deconvolutions (reversed dilations)
    dec.shortcut1..n     C -> C, weighting conv after each skip addition
    dec.conv_out         C -> 1, linear
    disc.reduce          C -> 1 convolution
    disc.fc1..k+1        dense layers, ReLU between, sigmoid at the end
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .optim import conv_fans, glorot_uniform
from .tensor import Var


@dataclass(frozen=True)
class DiscriminatorConfig:
    reduce_kernel: int = 1
    hidden_units: int = 150
    hidden_layers: int = 2


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    feature_channels: int = 128
    kernel_size: int = 3
    encoder_dilations: tuple = (3, 3, 6)
    decoder_dilations: tuple = (6, 3, 3)
    use_dilation: bool = True
    use_residual: bool = True
    use_adversarial: bool = True
    window_len: int = 10
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        object.__setattr__(self, "encoder_dilations", tuple(int(v) for v in self.encoder_dilations))
        object.__setattr__(self, "decoder_dilations", tuple(int(v) for v in self.decoder_dilations))
        if isinstance(self.discriminator, dict):
            object.__setattr__(self, "discriminator", DiscriminatorConfig(**self.discriminator))

    @property
    def levels(self) -> int:
        return len(self.encoder_dilations)

    def effective_encoder_dilations(self) -> tuple:
        return self.encoder_dilations if self.use_dilation else (1,) * self.levels

    def effective_decoder_dilations(self) -> tuple:
        return self.decoder_dilations if self.use_dilation else (1,) * self.levels

    def validate(self) -> "ModelConfig":
        checks = [
            ("input_channels", self.input_channels >= 1, "must be >= 1"),
            ("feature_channels", self.feature_channels >= 1, "must be >= 1"),
            ("kernel_size", self.kernel_size >= 1 and self.kernel_size % 2 == 1, "must be a positive odd number"),
            ("encoder_dilations", len(self.encoder_dilations) >= 1, "needs at least one level"),
            ("encoder_dilations", all(v >= 1 for v in self.encoder_dilations), "dilations must be >= 1"),
            ("decoder_dilations", self.decoder_dilations == self.encoder_dilations[::-1],
             "must be the reverse of encoder_dilations"),
            ("window_len", self.window_len >= 1, "must be >= 1"),
            ("discriminator.reduce_kernel",
             self.discriminator.reduce_kernel >= 1 and self.discriminator.reduce_kernel % 2 == 1,
             "must be a positive odd number"),
            ("discriminator.hidden_units", self.discriminator.hidden_units >= 1, "must be >= 1"),
            ("discriminator.hidden_layers", self.discriminator.hidden_layers >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_dilations"] = list(self.encoder_dilations)
        d["decoder_dilations"] = list(self.decoder_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "discriminator" in d:
            d["discriminator"] = DiscriminatorConfig(**d["discriminator"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def ablation_ladder(base: Optional[ModelConfig] = None) -> list[tuple[str, ModelConfig]]:
    """The five component-analysis rungs, from the 2+2 plain stack to the full model."""
    base = base or ModelConfig()
    two = base.encoder_dilations[:2]
    plain = replace(base, use_dilation=False, use_residual=False, use_adversarial=False)
    return [
        ("2+2 layers", replace(plain, encoder_dilations=two, decoder_dilations=two[::-1])),
        ("3+3 layers", plain),
        ("+ dilated conv/deconv", replace(plain, use_dilation=True)),
        ("+ residual learning", replace(plain, use_dilation=True, use_residual=True)),
        ("+ adversarial learning", replace(plain, use_dilation=True, use_residual=True, use_adversarial=True)),
    ]


class ModelParams:
    """Named weights and biases of one built architecture."""

    def __init__(self, config: ModelConfig, layers: dict[str, tuple[Var, Var]]):
        self.config = config
        self.layers = layers

    def __getitem__(self, name) -> tuple[Var, Var]:
        return self.layers[name]

    def __contains__(self, name) -> bool:
        return name in self.layers

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def tensors(self, prefix: str = "") -> dict[str, Var]:
        """Flat ``{"<layer>.weight": Var, "<layer>.bias": Var}`` view."""
        out = {}
        for name, (w, b) in self.layers.items():
            if name.startswith(prefix):
                out[f"{name}.weight"] = w
                out[f"{name}.bias"] = b
        return out

    def encoder_decoder(self) -> dict[str, Var]:
        return {k: v for k, v in self.tensors().items() if not k.startswith("disc.")}

    def encoder(self) -> dict[str, Var]:
        return self.tensors("enc.")

    def discriminator(self) -> dict[str, Var]:
        return self.tensors("disc.")

    def copy(self) -> "ModelParams":
        layers = {
            name: (Var(w.values.copy(), True, w.name), Var(b.values.copy(), True, b.name))
            for name, (w, b) in self.layers.items()
        }
        return ModelParams(self.config, layers)

    def astype(self, dtype) -> "ModelParams":
        layers = {
            name: (Var(w.values.astype(dtype), True, w.name), Var(b.values.astype(dtype), True, b.name))
            for name, (w, b) in self.layers.items()
        }
        return ModelParams(self.config, layers)

    @property
    def dtype(self):
        return next(iter(self.layers.values()))[0].dtype


def _layer_shapes(config: ModelConfig) -> list[tuple[str, tuple, int]]:
    """(name, weight shape, bias length) for every layer, in build order."""
    c, k, n = config.feature_channels, config.kernel_size, config.levels
    shapes = [("enc.conv0", (c, config.input_channels, k), c)]
    shapes += [(f"enc.dil{i}", (c, c, k), c) for i in range(1, n + 1)]
    for i in range(1, n + 1):
        shapes.append((f"dec.dil{i}", (c, c, k), c))
        if config.use_residual:
            shapes.append((f"dec.shortcut{i}", (c, c, k), c))
    shapes.append(("dec.conv_out", (config.input_channels, c, k), config.input_channels))
    if config.use_adversarial:
        dc = config.discriminator
        shapes.append(("disc.reduce", (1, c, dc.reduce_kernel), 1))
        width = config.window_len
        for i in range(1, dc.hidden_layers + 1):
            shapes.append((f"disc.fc{i}", (dc.hidden_units, width), dc.hidden_units))
            width = dc.hidden_units
        shapes.append((f"disc.fc{dc.hidden_layers + 1}", (1, width), 1))
    return shapes


def build_model(config: ModelConfig, seed=0, dtype=np.float64) -> ModelParams:
    """Glorot-uniform weights and zero biases for ``config``.

    The discriminator is built only when ``config.use_adversarial`` is set.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    layers = {}
    for name, wshape, nbias in _layer_shapes(config):
        fan_in, fan_out = conv_fans(wshape)
        w = glorot_uniform(fan_in, fan_out, rng, shape=wshape, dtype=dtype)
        layers[name] = (
            Var(w, requires_grad=True, name=f"{name}.weight"),
            Var(np.zeros(nbias, dtype=dtype), requires_grad=True, name=f"{name}.bias"),
        )
    return ModelParams(config, layers)


def param_count(params, include_discriminator: bool = False) -> int:
    """Number of scalar parameters.

    By default only the encoder-decoder is counted, i.e. what inference uses.
    Accepts ModelParams or any mapping of name -> Var/array.
    """
    if isinstance(params, ModelParams):
        tensors = params.tensors() if include_discriminator else params.encoder_decoder()
    else:
        tensors = {k: v for k, v in params.items() if include_discriminator or not k.startswith("disc.")}
    return int(sum(np.asarray(getattr(v, "values", v)).size for v in tensors.values()))


def closed_form_count(config: ModelConfig, include_discriminator: bool = False) -> int:
    total = 0
    for name, wshape, nbias in _layer_shapes(config):
        if name.startswith("disc.") and not include_discriminator:
            continue
        total += int(np.prod(wshape)) + nbias
    return total


def _conv(params, name, x, d=1):
    w, b = params[name]
    return T.conv1d_dilated(x, w, b, d=d)


def encode(params: ModelParams, x, return_acts: bool = False):
    """Noisy signal (batch, in_ch, L) -> latent (batch, C, L).

    With ``return_acts`` the output of every dilated stage is returned too,
    in encoder order; the last one is the latent itself.
    """
    cfg = params.config
    if not isinstance(x, Var):
        x = Var(np.asarray(x, dtype=params.dtype))
    if x.values.ndim != 3 or x.shape[1] != cfg.input_channels:
        raise ShapeError("encode", "input must be (batch, input_channels, length)",
                         expected=("*", cfg.input_channels, "*"), got=x.shape)
    h = T.relu(_conv(params, "enc.conv0", x))
    acts = []
    for i, d in enumerate(cfg.effective_encoder_dilations(), start=1):
        h = T.relu(_conv(params, f"enc.dil{i}", h, d))
        acts.append(h)
    return (h, acts) if return_acts else h


def decode(params: ModelParams, latent: Var, encoder_acts=None) -> Var:
    """Latent -> reconstructed signal, adding symmetric encoder features.

    Decoder stage ``k`` is paired with encoder stage ``n + 1 - k``. Each skip
    addition is followed by a weighting convolution. ``encoder_acts`` is
    ignored when the config disables residual connections.
    """
    cfg = params.config
    n = cfg.levels
    if cfg.use_residual:
        if encoder_acts is None or len(encoder_acts) != n:
            raise ShapeError("decode", "need one encoder activation per level",
                             expected=n, got=None if encoder_acts is None else len(encoder_acts))
    h = latent
    for k, d in enumerate(cfg.effective_decoder_dilations(), start=1):
        w, b = params[f"dec.dil{k}"]
        h = T.relu(T.deconv1d_dilated(h, w, b, d=d, out_len=h.shape[2]))
        if cfg.use_residual:
            skip = encoder_acts[n - k]
            if skip.shape != h.shape:
                raise ShapeError("decode", f"shortcut for stage {k} is misaligned", expected=h.shape, got=skip.shape)
            h = T.relu(_conv(params, f"dec.shortcut{k}", T.add(h, skip)))
    return _conv(params, "dec.conv_out", h)


def forward(params: ModelParams, x):
    """Full denoiser. Returns ``(reconstruction, latent)``."""
    latent, acts = encode(params, x, return_acts=True)
    return decode(params, latent, acts), latent


def denoise(params: ModelParams, signal: np.ndarray) -> np.ndarray:
    """Run inference on one 1D signal of any length; no graph is recorded."""
    sig = np.asarray(signal, dtype=params.dtype)
    with T.no_grad():
        out, _ = forward(params, Var(sig.reshape(1, 1, -1)))
    return out.values.reshape(-1)


def discriminate(params: ModelParams, latent: Var) -> Var:
    """Latent (batch, C, window_len) -> probability of 'clean', shape (batch, 1, 1)."""
    cfg = params.config
    if "disc.reduce" not in params:
        raise ConfigError("use_adversarial", "model was built without a discriminator")
    if latent.values.ndim != 3 or latent.shape[1] != cfg.feature_channels:
        raise ShapeError("discriminate", "latent must be (batch, feature_channels, length)",
                         expected=("*", cfg.feature_channels, cfg.window_len), got=latent.shape)
    if latent.shape[2] != cfg.window_len:
        raise ShapeError("discriminate", "latent length must equal the training window",
                         expected=cfg.window_len, got=latent.shape[2])
    h = T.flatten(_conv(params, "disc.reduce", latent))
    n_fc = cfg.discriminator.hidden_layers + 1
    for i in range(1, n_fc + 1):
        w, b = params[f"disc.fc{i}"]
        h = T.dense(h, w, b)
        h = T.relu(h) if i < n_fc else T.sigmoid(h)
    return h
