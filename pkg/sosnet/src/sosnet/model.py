"""Encoder-decoder network from RF channel frames to sound-speed maps.

Stage numbering labels depth levels: encoder stages 1..7 run in order
(3 strided, then 4 pooled); decoder stages are numbered by the encoder
stage they mirror plus the pooled-stage count, so they execute 11, 10,
9, 8. A decoder stage consumes a feature map at the same resolution its
partner encoder stage produced: stage 11's input is stage 7's output
directly, stages 10 and 9 concatenate the outputs of stages 6 and 5,
and stage 8 runs skip-free. Each decoder stage convolves then upsamples
bilinearly; the head resizes to the output raster and applies a 1x1
convolution.
"""

from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError, ShapeIncompatible


@dataclass(frozen=True)
class ArchConfig:
    """Shape plan of the network; all fields overridable."""

    in_shape: Tuple[int, int] = (128, 1024)
    out_shape: Tuple[int, int] = (384, 384)
    strided_stages: int = 3
    pooled_stages: int = 4
    widths: Tuple[int, ...] = (32, 32, 32, 64, 64, 128, 128)
    skip_stages: Tuple[int, ...] = (5, 6, 7)
    negative_slope: float = 0.1

    def __post_init__(self):
        if self.strided_stages < 1 or self.pooled_stages < 1:
            raise ShapeIncompatible("need at least one strided and one pooled stage")
        if len(self.widths) != self.strided_stages + self.pooled_stages:
            raise ShapeIncompatible(
                f"{len(self.widths)} widths for "
                f"{self.strided_stages + self.pooled_stages} encoder stages")

    @property
    def n_encoder(self) -> int:
        return self.strided_stages + self.pooled_stages


@dataclass(frozen=True)
class StageInfo:
    """One census row: shapes and parameter count of a stage."""

    name: str
    in_hw: Tuple[int, int]
    out_hw: Tuple[int, int]
    channels: int
    params: int


def _conv_params(c_in: int, c_out: int, k: int) -> int:
    return c_out * c_in * k * k + c_out


def stage_census(cfg: ArchConfig) -> List[StageInfo]:
    """Walk the shape plan; raises ShapeIncompatible before any tensor
    is allocated when stages cannot line up."""
    for k in cfg.skip_stages:
        if not (cfg.strided_stages < k <= cfg.n_encoder):
            raise ShapeIncompatible(
                f"skip stage {k} outside the pooled encoder range "
                f"({cfg.strided_stages + 1}..{cfg.n_encoder})")
    rows: List[StageInfo] = []
    h, w = cfg.in_shape
    c_prev = 1
    enc_out = {}
    for i in range(1, cfg.n_encoder + 1):
        c = cfg.widths[i - 1]
        if i <= cfg.strided_stages:
            if w % 2:
                raise ShapeIncompatible(f"stage {i}: time axis {w} not even")
            out = (h, w // 2)
        else:
            if h % 2 or w % 2:
                raise ShapeIncompatible(f"stage {i}: cannot pool {h}x{w}")
            out = (h // 2, w // 2)
        rows.append(StageInfo(f"enc{i}", (h, w), out, c,
                              _conv_params(c_prev, c, 3)))
        enc_out[i] = (out, c)
        (h, w), c_prev = out, c
    for n in range(cfg.n_encoder + cfg.pooled_stages, cfg.n_encoder, -1):
        k = n - cfg.pooled_stages
        (skip_hw, skip_c) = enc_out[k]
        c = cfg.widths[k - 1]
        c_in = c_prev
        if k in cfg.skip_stages and k != cfg.n_encoder:
            if skip_hw != (h, w):
                raise ShapeIncompatible(
                    f"stage {n}: skip from enc{k} is {skip_hw}, input is {(h, w)}")
            c_in += skip_c
        elif k in cfg.skip_stages and skip_hw != (h, w):
            raise ShapeIncompatible(
                f"stage {n}: direct feed from enc{k} is {skip_hw}, not {(h, w)}")
        out = (h * 2, w * 2)
        rows.append(StageInfo(f"dec{n}", (h, w), out, c,
                              _conv_params(c_in, c, 3)))
        (h, w), c_prev = out, c
    rows.append(StageInfo("head", (h, w), cfg.out_shape, 1,
                          _conv_params(c_prev, 1, 1)))
    return rows


class SosNet(nn.Module):
    """Fully convolutional regressor, (B,1,H,W) -> (B,1,out_shape)."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.census = stage_census(cfg)
        self.act = nn.LeakyReLU(cfg.negative_slope)
        self.pool = nn.MaxPool2d(2)
        enc = []
        c_prev = 1
        for i in range(1, cfg.n_encoder + 1):
            c = cfg.widths[i - 1]
            stride = (1, 2) if i <= cfg.strided_stages else 1
            enc.append(nn.Conv2d(c_prev, c, 3, stride=stride, padding=1))
            c_prev = c
        self.enc = nn.ModuleList(enc)
        dec = []
        for n in range(cfg.n_encoder + cfg.pooled_stages, cfg.n_encoder, -1):
            k = n - cfg.pooled_stages
            c = cfg.widths[k - 1]
            c_in = c_prev
            if k in cfg.skip_stages and k != cfg.n_encoder:
                c_in += cfg.widths[k - 1]
            dec.append(nn.Conv2d(c_in, c, 3, padding=1))
            c_prev = c
        self.dec = nn.ModuleList(dec)
        self.head = nn.Conv2d(c_prev, 1, 1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=cfg.negative_slope,
                                        nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)
        # Zero head: predictions start at zero, so early training is
        # stable regardless of depth.
        nn.init.zeros_(self.head.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != self.cfg.in_shape:
            raise ShapeError(
                f"expected (batch, 1, {self.cfg.in_shape[0]}, "
                f"{self.cfg.in_shape[1]}), got {tuple(x.shape)}")
        cfg = self.cfg
        enc_out = {}
        y = x
        for i, conv in enumerate(self.enc, start=1):
            if i > cfg.strided_stages:
                y = self.pool(y)
            y = self.act(conv(y))
            enc_out[i] = y
        for j, conv in enumerate(self.dec):
            n = cfg.n_encoder + cfg.pooled_stages - j
            k = n - cfg.pooled_stages
            if k in cfg.skip_stages and k != cfg.n_encoder:
                y = torch.cat([y, enc_out[k]], dim=1)
            y = self.act(conv(y))
            y = F.interpolate(y, scale_factor=2, mode="bilinear",
                              align_corners=False)
        y = F.interpolate(y, size=cfg.out_shape, mode="bilinear",
                          align_corners=False)
        return self.head(y)


class TransferHead(nn.Module):
    """Residual block on the map output: two 3x3 convolutions plus the
    identity skip. The final convolution starts at zero, so the head is
    exactly the identity until trained."""

    def __init__(self, width: int = 16, negative_slope: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(1, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, 1, 3, padding=1)
        self.act = nn.LeakyReLU(negative_slope)
        nn.init.kaiming_normal_(self.conv1.weight, a=negative_slope,
                                nonlinearity="leaky_relu")
        nn.init.zeros_(self.conv1.bias)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return y + self.conv2(self.act(self.conv1(y)))


class TransferModel(nn.Module):
    """Frozen base network with a trainable residual head on its output."""

    def __init__(self, base: SosNet, head: TransferHead):
        super().__init__()
        self.base = base
        self.head = head
        for p in self.base.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.base(x))


def build_model(cfg: ArchConfig) -> Tuple[SosNet, List[StageInfo]]:
    """Model plus its stage census (shapes validated first)."""
    census = stage_census(cfg)
    return SosNet(cfg), census
