"""The instance-segmentation network: CNN encoder, transformer over object
queries, class/box prediction heads and an attention-seeded CNN mask decoder.

Every image yields a fixed set of N query predictions (class probabilities,
a sigmoid-bounded box and a mask logit map). Mask logits are normalized by a
softmax across queries, so per-pixel argmax instances can never overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from trapseg.model.layers import (
    LEAKY_SLOPE,
    PixelAdaptiveConv2d,
    ResidualBlock,
    make_activation,
)
from trapseg.sets import PredictionSet


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "A"
    in_channels: int = 1
    input_size: int = 128
    backbone_filters: tuple[int, ...] = (64, 128, 256, 256)
    transformer_dim: int = 128
    transformer_heads: int = 8
    encoder_blocks: int = 3
    decoder_blocks: int = 2
    ffnn_hidden: int = 512
    num_queries: int = 20
    num_classes: int = 3
    seg_decoder_blocks: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.variant not in ("A", "B"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.transformer_dim % self.transformer_heads != 0:
            raise ConfigurationError("transformer_dim must divide by transformer_heads")
        if self.input_size % (2 ** len(self.backbone_filters)) != 0:
            raise ConfigurationError("input_size must survive the pooling schedule")
        if self.variant == "B" and not hasattr(torch.ops.torchvision, "deform_conv2d"):
            raise ConfigurationError(
                "variant B needs torchvision deformable-convolution support"
            )


@dataclass
class ForwardOutput:
    """Batched set predictions: [B, N, K] / [B, N, 4] / [B, N, H, W]."""

    class_probs: Tensor
    boxes: Tensor
    mask_logits: Tensor

    @property
    def mask_probs(self) -> Tensor:
        return F.softmax(self.mask_logits, dim=1)

    @property
    def batch_size(self) -> int:
        return int(self.class_probs.shape[0])

    def __getitem__(self, b: int) -> PredictionSet:
        return PredictionSet(
            class_probs=self.class_probs[b],
            boxes=self.boxes[b],
            mask_logits=self.mask_logits[b],
        )


class ConvEncoder(nn.Module):
    """Residual blocks with 2x2 average pooling after each block.

    128 px input -> 64 -> 32 -> 16 -> 8; the three intermediate maps are
    exported for the long skip connections into the mask decoder.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = (cfg.in_channels,) + cfg.backbone_filters
        self.blocks = nn.ModuleList(
            ResidualBlock(channels[i], channels[i + 1], cfg.variant)
            for i in range(len(cfg.backbone_filters))
        )
        self.pool = nn.AvgPool2d(2)
        self.in_channels = cfg.in_channels
        self.input_size = cfg.input_size

    def forward(self, image: Tensor) -> tuple[Tensor, list[Tensor]]:
        expected = (self.in_channels, self.input_size, self.input_size)
        if image.ndim != 4 or tuple(image.shape[1:]) != expected:
            raise ValueError(
                f"expected input [B, {expected[0]}, {expected[1]}, {expected[2]}], "
                f"got {tuple(image.shape)}"
            )
        skips = []
        x = image
        for i, block in enumerate(self.blocks):
            x = self.pool(block(x))
            if i < len(self.blocks) - 1:
                skips.append(x)
        return x, skips


class _FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float, variant: str):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            make_activation(variant),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class TransformerEncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dim = cfg.transformer_dim
        self.self_attn = nn.MultiheadAttention(
            dim, cfg.transformer_heads, dropout=cfg.dropout, batch_first=True
        )
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim, cfg.ffnn_hidden, cfg.dropout, cfg.variant)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor) -> Tensor:
        attn, _ = self.self_attn(x, x, x, need_weights=False)
        x = self.norm1(x + self.dropout(attn))
        return self.norm2(x + self.dropout(self.ffn(x)))


class TransformerDecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dim = cfg.transformer_dim
        self.self_attn = nn.MultiheadAttention(
            dim, cfg.transformer_heads, dropout=cfg.dropout, batch_first=True
        )
        self.cross_attn = nn.MultiheadAttention(
            dim, cfg.transformer_heads, dropout=cfg.dropout, batch_first=True
        )
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = _FeedForward(dim, cfg.ffnn_hidden, cfg.dropout, cfg.variant)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, queries: Tensor, memory: Tensor) -> Tensor:
        attn, _ = self.self_attn(queries, queries, queries, need_weights=False)
        queries = self.norm1(queries + self.dropout(attn))
        attn, _ = self.cross_attn(queries, memory, memory, need_weights=False)
        queries = self.norm2(queries + self.dropout(attn))
        return self.norm3(queries + self.dropout(self.ffn(queries)))


class QueryTransformer(nn.Module):
    """Encoder over flattened image tokens, decoder over learned object queries.

    Learned positional encodings are added to the tokens once before the
    encoder stack.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        grid = cfg.input_size // (2 ** len(cfg.backbone_filters))
        self.grid = grid
        self.pos_embed = nn.Parameter(torch.randn(grid * grid, cfg.transformer_dim))
        self.query_embed = nn.Parameter(torch.randn(cfg.num_queries, cfg.transformer_dim))
        self.encoder = nn.ModuleList(
            TransformerEncoderBlock(cfg) for _ in range(cfg.encoder_blocks)
        )
        self.decoder = nn.ModuleList(
            TransformerDecoderBlock(cfg) for _ in range(cfg.decoder_blocks)
        )

    def forward(
        self, features: Tensor, query_embeddings: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        b, c, h, w = features.shape
        if h * w != self.pos_embed.shape[0] or c != self.pos_embed.shape[1]:
            raise ValueError(
                f"features {tuple(features.shape)} do not match the {self.grid}x"
                f"{self.grid} token grid of width {self.pos_embed.shape[1]}"
            )
        tokens = features.flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.encoder:
            tokens = block(tokens)
        if query_embeddings is None:
            query_embeddings = self.query_embed
        queries = query_embeddings.unsqueeze(0).expand(b, -1, -1)
        for block in self.decoder:
            queries = block(queries, tokens)
        return tokens, queries


class ClassHead(nn.Module):
    """Single shared linear map per query, softmax over classes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.transformer_dim, cfg.num_classes)

    def forward(self, queries: Tensor) -> Tensor:
        return F.softmax(self.proj(queries), dim=-1)


class BoxHead(nn.Module):
    """Three-layer shared FFNN per query; sigmoid keeps (cx, cy, w, h) in [0, 1]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        hidden = cfg.ffnn_hidden
        self.net = nn.Sequential(
            nn.Linear(cfg.transformer_dim, hidden),
            make_activation(cfg.variant),
            nn.Linear(hidden, hidden),
            make_activation(cfg.variant),
            nn.Linear(hidden, 4),
        )

    def forward(self, queries: Tensor) -> Tensor:
        return torch.sigmoid(self.net(queries))


class AttentionMapHead(nn.Module):
    """Multi-head attention weights of each query over the token grid.

    Only the softmaxed weight maps are kept (no value projection); each
    (query, head) map is a distribution over the grid cells.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.heads = cfg.transformer_heads
        self.head_dim = cfg.transformer_dim // cfg.transformer_heads
        self.q_proj = nn.Linear(cfg.transformer_dim, cfg.transformer_dim)
        self.k_proj = nn.Linear(cfg.transformer_dim, cfg.transformer_dim)
        self.grid = cfg.input_size // (2 ** len(cfg.backbone_filters))

    def forward(self, queries: Tensor, memory: Tensor) -> Tensor:
        b, n, _ = queries.shape
        t = memory.shape[1]
        q = self.q_proj(queries).view(b, n, self.heads, self.head_dim)
        k = self.k_proj(memory).view(b, t, self.heads, self.head_dim)
        logits = torch.einsum("bnhd,bthd->bnht", q, k) / math.sqrt(self.head_dim)
        maps = F.softmax(logits, dim=-1)
        return maps.view(b, n, self.heads, self.grid, self.grid)


class MaskDecoder(nn.Module):
    """CNN decoder from the 8x8 grid to per-query mask logits at full size.

    The per-query attention maps are flattened into the channel dimension and
    concatenated onto the projected image features. Three residual blocks
    upsample 8 -> 64 with long skip fusion from the encoder (addition for
    variant A, pixel-adaptive convolution for variant B), and a final block
    restores 128 px and emits one logit channel per query.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.variant = cfg.variant
        in_ch = cfg.transformer_dim + cfg.num_queries * cfg.transformer_heads
        widths = [cfg.transformer_dim // (2 ** (i + 1)) for i in range(cfg.seg_decoder_blocks)]
        skip_sources = list(reversed(cfg.backbone_filters[:-1]))  # deepest skip first
        blocks, adapters, fusions = [], [], []
        prev = in_ch
        for width, skip_ch in zip(widths, skip_sources):
            blocks.append(ResidualBlock(prev, width, cfg.variant))
            adapters.append(nn.Conv2d(skip_ch, width, 1))
            if cfg.variant == "B":
                fusions.append(PixelAdaptiveConv2d(width, width))
            prev = width
        self.blocks = nn.ModuleList(blocks)
        self.skip_adapters = nn.ModuleList(adapters)
        self.fusions = nn.ModuleList(fusions) if fusions else None
        self.final_block = ResidualBlock(prev, prev, cfg.variant)
        self.out_conv = nn.Conv2d(prev, cfg.num_queries, 1)

    @staticmethod
    def _up(x: Tensor) -> Tensor:
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, attention_maps: Tensor, features: Tensor, skips: list[Tensor]) -> Tensor:
        b, n, heads, gh, gw = attention_maps.shape
        x = torch.cat([features, attention_maps.reshape(b, n * heads, gh, gw)], dim=1)
        for i, block in enumerate(self.blocks):
            x = block(self._up(x))
            skip = self.skip_adapters[i](skips[len(skips) - 1 - i])
            if self.fusions is not None:
                x = self.fusions[i](x, skip)
            else:
                x = x + skip
        x = self.final_block(self._up(x))
        return self.out_conv(x)


class InstanceSegmenter(nn.Module):
    """End-to-end network from a grayscale image to a set of N predictions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = ConvEncoder(cfg)
        self.input_proj = nn.Conv2d(cfg.backbone_filters[-1], cfg.transformer_dim, 1)
        self.transformer = QueryTransformer(cfg)
        self.class_head = ClassHead(cfg)
        self.box_head = BoxHead(cfg)
        self.attention_head = AttentionMapHead(cfg)
        self.mask_decoder = MaskDecoder(cfg)
        self.apply(_init_weights)

    def backbone_forward(self, image: Tensor) -> tuple[Tensor, list[Tensor]]:
        return self.backbone(image)

    def transformer_forward(
        self, features: Tensor, query_embeddings: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """Project + flatten backbone features, run the encoder-decoder."""
        return self.transformer(self.input_proj(features), query_embeddings)

    def seg_attention(self, encoder_memory: Tensor, decoded_queries: Tensor) -> Tensor:
        return self.attention_head(decoded_queries, encoder_memory)

    def forward(self, image: Tensor) -> ForwardOutput:
        features, skips = self.backbone(image)
        projected = self.input_proj(features)
        memory, queries = self.transformer(projected)
        attention = self.attention_head(queries, memory)
        return ForwardOutput(
            class_probs=self.class_head(queries),
            boxes=self.box_head(queries),
            mask_logits=self.mask_decoder(attention, projected, skips),
        )


def _init_weights(module: nn.Module):
    if getattr(module, "skip_global_init", False):
        return
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(
            module.weight, a=LEAKY_SLOPE, mode="fan_in", nonlinearity="leaky_relu"
        )
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig) -> InstanceSegmenter:
    return InstanceSegmenter(cfg)


def count_parameters(model_or_cfg) -> int:
    """Number of trainable scalars of a model (or of a freshly built config)."""
    model = (
        build_model(model_or_cfg)
        if isinstance(model_or_cfg, ModelConfig)
        else model_or_cfg
    )
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
