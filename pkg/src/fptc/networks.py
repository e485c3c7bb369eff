"""Conditional encoder-decoder networks for the two construction stages.

Both stages share a pix2pix-style U-Net generator (Conv/BN/LeakyReLU down,
ConvT/BN/Dropout/ReLU up, skip connections, sigmoid head).  The prediction
generator inserts self-attention layers at configured feature-map
resolutions; the correction generator stacks residual blocks at the
bottleneck.  The discriminator is conditioned: it scores the input stack
concatenated with a candidate map through a downsampling trunk, a flatten
and a dense sigmoid head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import DomainError, ValidationError
from .scene import _set

#: numerical clamp applied to discriminator probabilities inside the losses
PROB_EPS = 1e-7


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture knobs for one generator.

    ``sa_resolutions`` lists feature-map side lengths that receive a
    self-attention layer (prediction stage); ``rc_block_count`` stacks
    residual blocks at the bottleneck (correction stage).  Exactly one of
    the two mechanisms must be active.
    """

    in_channels: int
    levels: int = 6
    base_channels: int = 64
    max_channels: int = 352
    sa_resolutions: tuple[int, ...] = ()
    rc_block_count: int = 0
    dropout_rate: float = 0.5
    leaky_slope: float = 0.2

    def __post_init__(self):
        _set(self, "sa_resolutions", tuple(sorted(set(self.sa_resolutions))))
        if self.in_channels < 1:
            raise ValidationError("generator needs at least one input channel")
        if self.levels < 3:
            raise ValidationError("generator needs at least 3 levels")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ValidationError("channel schedule out of range")
        if bool(self.sa_resolutions) == (self.rc_block_count > 0):
            raise ValidationError(
                "exactly one of self-attention resolutions or residual blocks "
                "must be configured")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        if self.leaky_slope <= 0:
            raise ValidationError("leaky_slope must be positive")

    def channel_schedule(self) -> list[int]:
        return [min(self.base_channels << i, self.max_channels)
                for i in range(self.levels)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Architecture knobs for the conditioned discriminator."""

    in_channels: int                 # condition channels + 1 candidate channel
    levels: int = 5
    base_channels: int = 64
    max_channels: int = 352

    def __post_init__(self):
        if self.in_channels < 2:
            raise ValidationError(
                "discriminator input must include condition and candidate channels")
        if self.levels < 1:
            raise ValidationError("discriminator needs at least one level")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ValidationError("channel schedule out of range")

    def channel_schedule(self) -> list[int]:
        return [min(self.base_channels << i, self.max_channels)
                for i in range(self.levels)]


@dataclass(frozen=True)
class LossWeights:
    """Relative weight of the reconstruction term in the generator objective."""

    lambda_l2: float = 100.0

    def __post_init__(self):
        if self.lambda_l2 < 0:
            raise ValidationError("lambda_l2 must be non-negative")


class SelfAttention2d(nn.Module):
    """Global content-based context added to a feature block.

    ``out = x + gamma * (softmax(Q K^T) V)`` with 1x1-convolution projections
    and ``gamma`` starting at 0, so the layer begins as an exact identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(1, channels // 8)
        self.query = nn.Conv2d(channels, inner, kernel_size=1)
        self.key = nn.Conv2d(channels, inner, kernel_size=1)
        self.value = nn.Conv2d(channels, channels, kernel_size=1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def attention_scores(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, N) row-stochastic attention over the N = H*W positions."""
        if x.dim() != 4:
            raise ValidationError("self-attention expects a (B, C, H, W) block")
        q = self.query(x).flatten(2).transpose(1, 2)     # B, N, C'
        k = self.key(x).flatten(2)                       # B, C', N
        return torch.softmax(torch.bmm(q, k), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        scores = self.attention_scores(x)
        v = self.value(x).flatten(2).transpose(1, 2)     # B, N, C
        attended = torch.bmm(scores, v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.gamma * attended


class ResidualBlock(nn.Module):
    """Channel-preserving block: ``out = ReLU(x + BN(Conv(ReLU(BN(Conv(x))))))``."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mid = torch.relu(self.bn1(self.conv1(x)))
        mid = self.bn2(self.conv2(mid))
        return torch.relu(x + mid)


def _init_weights(module: nn.Module) -> None:
    # DCGAN-style init keeps early adversarial training well-scaled
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)


class Generator(nn.Module):
    """U-Net generator configured for one square input resolution."""

    def __init__(self, spec: GeneratorSpec, image_px: int):
        super().__init__()
        if image_px % (1 << spec.levels) != 0 or image_px < (1 << spec.levels):
            raise ValidationError(
                f"image size {image_px} is not a multiple of 2^levels "
                f"({1 << spec.levels})")
        self.spec = spec
        self.image_px = int(image_px)
        ch = spec.channel_schedule()

        self.enc_blocks = nn.ModuleList()
        self.enc_extras = nn.ModuleList()
        in_ch, side = spec.in_channels, image_px
        for i, out_ch in enumerate(ch):
            layers: list[nn.Module] = [
                nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1,
                          bias=(i == 0))]
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(spec.leaky_slope))
            self.enc_blocks.append(nn.Sequential(*layers))
            side //= 2
            self.enc_extras.append(SelfAttention2d(out_ch)
                                   if side in spec.sa_resolutions else nn.Identity())
            in_ch = out_ch

        self.bottleneck = nn.Sequential(
            *[ResidualBlock(ch[-1]) for _ in range(spec.rc_block_count)])

        self.dec_blocks = nn.ModuleList()
        self.dec_extras = nn.ModuleList()
        for i in range(spec.levels - 1):
            out_ch = ch[spec.levels - 2 - i]
            dec_in = ch[-1] if i == 0 else 2 * ch[spec.levels - 1 - i]
            layers = [nn.ConvTranspose2d(dec_in, out_ch, kernel_size=4, stride=2,
                                         padding=1, bias=False),
                      nn.BatchNorm2d(out_ch)]
            if i < 3 and spec.dropout_rate > 0:
                layers.append(nn.Dropout(spec.dropout_rate))
            layers.append(nn.ReLU())
            self.dec_blocks.append(nn.Sequential(*layers))
            side = image_px >> (spec.levels - 1 - i)
            self.dec_extras.append(SelfAttention2d(out_ch)
                                   if side in spec.sa_resolutions else nn.Identity())
        self.head = nn.ConvTranspose2d(2 * ch[0], 1, kernel_size=4, stride=2, padding=1)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ValidationError("generator expects a (B, C, H, W) batch")
        if x.shape[1] != self.spec.in_channels:
            raise ValidationError(
                f"generator configured for {self.spec.in_channels} channels, "
                f"got {x.shape[1]}")
        if x.shape[2] != self.image_px or x.shape[3] != self.image_px:
            raise ValidationError(
                f"generator configured for {self.image_px}x{self.image_px} "
                f"inputs, got {x.shape[2]}x{x.shape[3]}")
        skips = []
        h = x
        for block, extra in zip(self.enc_blocks, self.enc_extras):
            h = extra(block(h))
            skips.append(h)
        h = self.bottleneck(h)
        for i, (block, extra) in enumerate(zip(self.dec_blocks, self.dec_extras)):
            h = extra(block(h))
            h = torch.cat([h, skips[self.spec.levels - 2 - i]], dim=1)
        return torch.sigmoid(self.head(h))


class Discriminator(nn.Module):
    """Conditioned critic: downsampling trunk, flatten, dense sigmoid head."""

    def __init__(self, spec: DiscriminatorSpec, image_px: int):
        super().__init__()
        if image_px % (1 << spec.levels) != 0 or image_px < (1 << spec.levels):
            raise ValidationError(
                f"image size {image_px} is not a multiple of 2^levels "
                f"({1 << spec.levels})")
        self.spec = spec
        self.image_px = int(image_px)
        ch = spec.channel_schedule()
        layers: list[nn.Module] = []
        in_ch = spec.in_channels
        for i, out_ch in enumerate(ch):
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1,
                                    bias=(i == 0)))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)
        flat = ch[-1] * (image_px >> spec.levels) ** 2
        self.classifier = nn.Linear(flat, 1)
        self.apply(_init_weights)

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if condition.dim() != 4 or candidate.dim() != 4:
            raise ValidationError("discriminator expects (B, C, H, W) batches")
        if condition.shape[0] != candidate.shape[0] or condition.shape[2:] != candidate.shape[2:]:
            raise ValidationError("condition and candidate shapes do not match")
        x = torch.cat([condition, candidate], dim=1)
        if x.shape[1] != self.spec.in_channels:
            raise ValidationError(
                f"discriminator configured for {self.spec.in_channels} channels, "
                f"got {x.shape[1]}")
        if x.shape[2] != self.image_px or x.shape[3] != self.image_px:
            raise ValidationError(
                f"discriminator configured for {self.image_px}px inputs, "
                f"got {x.shape[2]}x{x.shape[3]}")
        h = self.trunk(x).flatten(1)
        return torch.sigmoid(self.classifier(h)).squeeze(1)


# ---------------------------------------------------------------------------
# losses

def _check_probs(t: torch.Tensor, name: str) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.float64) if not torch.is_tensor(t) else t
    if not torch.all(torch.isfinite(t)):
        raise DomainError(f"{name} contains non-finite probabilities")
    if torch.any(t < 0) or torch.any(t > 1):
        raise DomainError(f"{name} probabilities must lie in [0, 1]")
    return torch.clamp(t, PROB_EPS, 1.0 - PROB_EPS)


def adversarial_loss(d_real, d_fake) -> torch.Tensor:
    """Mean of ``log d_real + log(1 - d_fake)`` — the value D maximizes.

    Probabilities are clamped to [1e-7, 1-1e-7] before the logarithm.
    """
    r = _check_probs(d_real, "d_real")
    f = _check_probs(d_fake, "d_fake")
    return torch.mean(torch.log(r)) + torch.mean(torch.log(1.0 - f))


def generator_adversarial_loss(d_fake) -> torch.Tensor:
    """Non-saturating generator objective: ``-mean log D(G(x))``."""
    f = _check_probs(d_fake, "d_fake")
    return -torch.mean(torch.log(f))


def reconstruction_loss(target, generated) -> torch.Tensor:
    """Mean squared difference between ground truth and generated map."""
    t = target if torch.is_tensor(target) else torch.as_tensor(target, dtype=torch.float64)
    g = generated if torch.is_tensor(generated) else torch.as_tensor(generated, dtype=torch.float64)
    if t.shape != g.shape:
        raise ValidationError(
            f"reconstruction loss shapes differ: {tuple(t.shape)} vs {tuple(g.shape)}")
    return torch.mean((t - g) ** 2)


def count_parameters(module: nn.Module) -> int:
    """Exact number of scalar parameters in a module."""
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# default full-size configurations

PREDICT_IMAGE_PX = 128


def default_generator_spec(stage: str) -> GeneratorSpec:
    """Full-size generator defaults for a 128-pixel interest area."""
    if stage == "predict":
        return GeneratorSpec(in_channels=4, levels=6, base_channels=64,
                             max_channels=352, sa_resolutions=(32,))
    if stage == "correct":
        return GeneratorSpec(in_channels=3, levels=6, base_channels=64,
                             max_channels=352, rc_block_count=2)
    raise ValidationError(f"unknown stage '{stage}'")


def default_discriminator_spec(stage: str) -> DiscriminatorSpec:
    if stage == "predict":
        return DiscriminatorSpec(in_channels=5, levels=5, base_channels=64,
                                 max_channels=352)
    if stage == "correct":
        return DiscriminatorSpec(in_channels=4, levels=5, base_channels=64,
                                 max_channels=352)
    raise ValidationError(f"unknown stage '{stage}'")
