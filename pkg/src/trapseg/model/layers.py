"""Building-block layers: rational activations, modulated deformable and
pixel-adaptive convolutions, and the variant-aware residual block.

Variant A uses leaky-ReLU activations, standard convolutions and additive
skip fusion; variant B swaps in rational (Pade) activation units, modulated
deformable convolutions and pixel-adaptive skip fusion.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision.ops
from torch import Tensor

LEAKY_SLOPE = 0.01

# Least-squares fit of P5(x) / (1 + |b1 x + ... + b4 x^4|) to leaky ReLU
# (slope 0.01) on [-3, 3]; max absolute deviation 0.034.
PADE_INIT_NUMERATOR = (
    0.0335634354,
    0.5050000166,
    1.6531762131,
    2.0093672823,
    0.9314525529,
    0.1523257617,
)
PADE_INIT_DENOMINATOR = (0.0, -3.9789449142, 0.0, -0.3016351555)


def pade(x: Tensor, numerator: Tensor, denominator: Tensor) -> Tensor:
    """Rational activation P(x) / Q(x) with a pole-free denominator.

    P(x) = sum_j numerator[j] * x^j (degree 5); Q(x) = 1 + |sum_j
    denominator[j] * x^(j+1)| (degree 4), so Q >= 1 and the output is finite
    for every finite input.
    """
    p = torch.zeros_like(x) + numerator[-1]
    for coeff in reversed(numerator[:-1]):
        p = p * x + coeff
    q = torch.zeros_like(x) + denominator[-1]
    for coeff in reversed(denominator[:-1]):
        q = q * x + coeff
    q = 1.0 + torch.abs(q * x)
    return p / q


class PadeActivation(nn.Module):
    """Learnable rational activation unit, initialized to approximate leaky ReLU."""

    def __init__(self):
        super().__init__()
        self.numerator = nn.Parameter(torch.tensor(PADE_INIT_NUMERATOR))
        self.denominator = nn.Parameter(torch.tensor(PADE_INIT_DENOMINATOR))

    def forward(self, x: Tensor) -> Tensor:
        return pade(x, self.numerator, self.denominator)


def modulated_deform_conv2d(
    x: Tensor,
    weight: Tensor,
    offset: Tensor,
    modulation: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Convolution sampled at bilinearly-interpolated offset positions.

    offset is [B, 2*k*k, H, W] (per-tap y/x displacements), modulation
    [B, k*k, H, W] scales each sampled value. Zero offsets with unit
    modulation reproduce a standard convolution; samples falling outside
    the zero-padded input read as zero.
    """
    return torchvision.ops.deform_conv2d(
        x,
        offset,
        weight,
        bias,
        stride=(stride, stride),
        padding=(padding, padding),
        mask=modulation,
    )


class DeformableConv2d(nn.Module):
    """Modulated deformable convolution with a parallel offset predictor.

    A standard convolution over the input predicts per-position sampling
    offsets and modulation logits (sigmoid-squashed to [0, 1]). The
    predictor is zero-initialized so sampling starts on the regular grid.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels, kernel_size, kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        taps = kernel_size * kernel_size
        self.offset_mask = nn.Conv2d(
            in_channels, 3 * taps, kernel_size, stride=stride, padding=padding
        )
        self.offset_mask.skip_global_init = True
        self._taps = taps
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.kaiming_normal_(self.weight, a=LEAKY_SLOPE, mode="fan_in",
                                nonlinearity="leaky_relu")
        nn.init.zeros_(self.offset_mask.weight)
        nn.init.zeros_(self.offset_mask.bias)

    def forward(self, x: Tensor) -> Tensor:
        pred = self.offset_mask(x)
        offset = pred[:, : 2 * self._taps]
        modulation = torch.sigmoid(pred[:, 2 * self._taps :])
        return modulated_deform_conv2d(
            x, self.weight, offset, modulation, self.bias,
            stride=self.stride, padding=self.padding,
        )


class PixelAdaptiveConv2d(nn.Module):
    """Convolution whose kernel is gated per pixel by guidance similarity.

    Each tap j contributing to output pixel i is scaled by
    exp(-0.5 * ||f_i - f_j||^2) over the guidance features f, so taps on
    dissimilar neighbours are suppressed. Constant guidance makes every
    gate 1 and the layer collapses to a standard convolution.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels, kernel_size, kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_normal_(self.weight, a=LEAKY_SLOPE, mode="fan_in",
                                nonlinearity="leaky_relu")

    def forward(self, x: Tensor, guidance: Tensor) -> Tensor:
        if x.shape[-2:] != guidance.shape[-2:]:
            raise ValueError(
                f"guidance spatial size {tuple(guidance.shape[-2:])} does not match "
                f"input {tuple(x.shape[-2:])}"
            )
        b, c, h, w = x.shape
        k = self.kernel_size
        taps = k * k
        pad = k // 2
        x_unf = F.unfold(x, k, padding=pad).view(b, c, taps, h * w)
        g_unf = F.unfold(guidance, k, padding=pad).view(b, guidance.shape[1], taps, h * w)
        g_center = guidance.reshape(b, guidance.shape[1], 1, h * w)
        gate = torch.exp(-0.5 * ((g_unf - g_center) ** 2).sum(dim=1))  # [B, taps, HW]
        gated = x_unf * gate[:, None]
        out = torch.einsum(
            "bctl,oct->bol", gated, self.weight.view(self.weight.shape[0], c, taps)
        )
        return out.view(b, -1, h, w) + self.bias[None, :, None, None]


def make_activation(variant: str) -> nn.Module:
    return PadeActivation() if variant == "B" else nn.LeakyReLU(LEAKY_SLOPE)


def make_conv(variant: str, in_channels: int, out_channels: int,
              kernel_size: int = 3, stride: int = 1, padding: int = 1) -> nn.Module:
    if variant == "B":
        return DeformableConv2d(in_channels, out_channels, kernel_size,
                                stride=stride, padding=padding)
    return nn.Conv2d(in_channels, out_channels, kernel_size,
                     stride=stride, padding=padding)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with batch norm and a projected identity shortcut."""

    def __init__(self, in_channels: int, out_channels: int, variant: str = "A"):
        super().__init__()
        self.conv1 = make_conv(variant, in_channels, out_channels)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.act1 = make_activation(variant)
        self.conv2 = make_conv(variant, out_channels, out_channels)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.act2 = make_activation(variant)
        if in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        y = self.act1(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return self.act2(y + self.shortcut(x))
