"""Encoder, decoder and adversarial distorter networks.

Layout for the default 32x32 configuration::

    encoder    1 -> 32 -> 64 -> 128 -> latent_dim   (3x3 convs, stride 2) + global average pool
    decoder    dense latent_dim -> 128x2x2, then six transposed convs:
               four 4x4/stride-2 (2 -> 32 px) and two 3x3/stride-1, channels 128 -> 64 -> 32 -> 16 -> 8 -> 4 -> 1
    distorter  1 -> 32 -> 64 -> 128 -> 128 (3x3 convs, stride 2) + global average pool + dense,
               bounded as delta_max * tanh(.)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from alps import tensor as T
from alps.nn import Conv2d, ConvTranspose2d, Dense, Module
from alps.tensor import ShapeError, Tensor

ENCODER_CONVS = 4
DECODER_TRANSPOSE_CONVS = 6
UPSAMPLING_LAYERS = 4


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 64
    delta_max: float = 1.0
    resolution: int = 32
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16, 8, 4)
    distorter_channels: tuple[int, ...] = (32, 64, 128, 128)
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.encoder_channels) != ENCODER_CONVS - 1:
            raise ValueError(f"encoder needs {ENCODER_CONVS - 1} hidden widths; the last conv emits latent_dim")
        if len(self.decoder_channels) != DECODER_TRANSPOSE_CONVS:
            raise ValueError(f"decoder needs {DECODER_TRANSPOSE_CONVS} input widths (seed + 5 hidden)")
        if len(self.distorter_channels) != ENCODER_CONVS:
            raise ValueError(f"distorter needs {ENCODER_CONVS} conv widths")
        if self.resolution % 2 ** UPSAMPLING_LAYERS:
            raise ValueError(f"resolution must be a multiple of {2 ** UPSAMPLING_LAYERS}")
        if self.delta_max < 0:
            raise ValueError("delta_max must be non-negative")

    @property
    def seed_size(self) -> int:
        return self.resolution // 2 ** UPSAMPLING_LAYERS


def _check_input(x: Tensor, resolution: int) -> None:
    if x.data.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (resolution, resolution):
        raise ShapeError(f"expected input of shape [N, 1, {resolution}, {resolution}], got {list(x.shape)}")


class Encoder(Module):
    def __init__(self, config: ModelConfig, rng, dtype=T.DEFAULT_DTYPE):
        self.config = config
        widths = (1, *config.encoder_channels, config.latent_dim)
        self.convs = [Conv2d(a, b, 3, 2, 1, rng=rng, dtype=dtype) for a, b in zip(widths, widths[1:])]

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.config.resolution)
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = T.leaky_relu(h, self.config.leaky_slope)
        return T.global_avg_pool(h)


class Decoder(Module):
    def __init__(self, config: ModelConfig, rng, dtype=T.DEFAULT_DTYPE):
        self.config = config
        seed = config.decoder_channels[0]
        self.fc = Dense(config.latent_dim, seed * config.seed_size ** 2, rng=rng, dtype=dtype)
        widths = (*config.decoder_channels, 1)
        self.deconvs = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            if i < UPSAMPLING_LAYERS:
                self.deconvs.append(ConvTranspose2d(a, b, 4, 2, 1, rng=rng, dtype=dtype))
            else:
                self.deconvs.append(ConvTranspose2d(a, b, 3, 1, 1, rng=rng, dtype=dtype))

    def forward(self, z: Tensor) -> Tensor:
        c = self.config
        if z.data.ndim != 2 or z.shape[1] != c.latent_dim:
            raise ShapeError(f"expected latent of shape [N, {c.latent_dim}], got {list(z.shape)}")
        h = T.leaky_relu(self.fc(z), c.leaky_slope)
        h = T.reshape(h, (z.shape[0], c.decoder_channels[0], c.seed_size, c.seed_size))
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            h = T.leaky_relu(h, c.leaky_slope) if i < len(self.deconvs) - 1 else T.sigmoid(h)
        return h


class Distorter(Module):
    def __init__(self, config: ModelConfig, rng, dtype=T.DEFAULT_DTYPE):
        self.config = config
        widths = (1, *config.distorter_channels)
        self.convs = [Conv2d(a, b, 3, 2, 1, rng=rng, dtype=dtype) for a, b in zip(widths, widths[1:])]
        self.fc = Dense(widths[-1], config.latent_dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.config.resolution)
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h), self.config.leaky_slope)
        raw = self.fc(T.global_avg_pool(h))
        delta = T.mul(T.tanh(raw), self.config.delta_max)
        # tanh rounds to exactly +-1 for large inputs; keep the bound strict
        edge = float(np.nextafter(delta.dtype.type(self.config.delta_max), delta.dtype.type(0)))
        return T.clip(delta, -edge, edge)


@dataclass
class LatentCode:
    z: Tensor
    delta: Tensor | None = field(default=None)


def encode(enc: Encoder, x: Tensor) -> LatentCode:
    return LatentCode(enc(x))


def decode(dec: Decoder, code: LatentCode | Tensor) -> Tensor:
    return dec(code.z if isinstance(code, LatentCode) else code)


def distort(distorter: Distorter, x: Tensor) -> Tensor:
    return distorter(x)


def perturb(code: LatentCode, delta: Tensor) -> LatentCode:
    """Shift the latent by ``delta``; gradients reach both the code and the perturbation."""
    if code.z.shape != delta.shape:
        raise ShapeError(f"perturbation {list(delta.shape)} does not match latent {list(code.z.shape)}")
    return LatentCode(T.add(code.z, delta), delta)


@dataclass
class Networks:
    """The autoencoder (encoder + decoder) and the distorter, built from one seed."""

    config: ModelConfig
    encoder: Encoder
    decoder: Decoder
    distorter: Distorter

    @classmethod
    def build(cls, config: ModelConfig, seed: int, dtype=T.DEFAULT_DTYPE) -> Networks:
        # independent streams so that changing one network never shifts another's init
        enc_rng, dec_rng, dist_rng = (np.random.default_rng([seed, k]) for k in range(3))
        return cls(config, Encoder(config, enc_rng, dtype), Decoder(config, dec_rng, dtype),
                   Distorter(config, dist_rng, dtype))

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder), ("distorter", self.distorter)):
            out.update(net.named_parameters(prefix + "."))
        return out

    def autoencoder_parameters(self) -> dict[str, Tensor]:
        params = self.encoder.named_parameters("encoder.")
        params.update(self.decoder.named_parameters("decoder."))
        return params

    def distorter_parameters(self) -> dict[str, Tensor]:
        return self.distorter.named_parameters("distorter.")

    def reconstruct(self, x: Tensor, perturbed: bool = True) -> Tensor:
        code = encode(self.encoder, x)
        if perturbed:
            code = perturb(code, distort(self.distorter, x))
        return decode(self.decoder, code)
