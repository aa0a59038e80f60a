"""Dual-decoder segmentation network for table and column masks.

A VGG-19-style convolutional encoder (conv1_1 .. pool5) is shared by two
decoder branches. The classifier head replaces the fully connected layers
with two 1x1 convolutions (conv6, each ReLU + dropout). The table branch adds
a 1x1 scoring convolution (conv7_table); the column branch adds conv7_column
(1x1 + ReLU + dropout) and a 1x1 scoring convolution (conv8_column). Each
branch upsamples its 2-channel score map x2, fuses a 1x1 projection of pool4
by element-wise addition, upsamples x2, fuses pool3, then upsamples x8 to the
input resolution. Transposed convolutions are initialized to bilinear
interpolation kernels.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import MaskPair
from .errors import ShapeError, WeightLoadError

# VGG-19 convolution counts per block; channel widths scale with base_width.
_VGG19_BLOCKS = (2, 2, 4, 4, 4)
_NUM_CLASSES = 2

PRETRAINED_CACHE_ENV = "TABLENET_CACHE"


@dataclass(frozen=True)
class NetworkSpec:
    """Hyperparameters of the computation graph.

    base_width=64 with conv6_width=4096 reproduces the full-size VGG-19
    configuration; smaller values give desk-scale networks with the same
    topology. Input size must be divisible by 32 (five poolings).
    """

    input_size: int = 1024
    base_width: int = 64
    conv6_width: int = 4096
    dropout_rate: float = 0.2  # keep-probability 0.8 on the conv6 bottleneck

    def __post_init__(self):
        if self.input_size % 32 != 0:
            raise ValueError("input_size must be divisible by 32")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def block_channels(self) -> tuple[int, ...]:
        b = self.base_width
        return (b, 2 * b, 4 * b, 8 * b, 8 * b)


@dataclass
class BranchOutput:
    """Raw logits and channel-softmax probabilities for one branch."""

    logits: torch.Tensor  # (N, 2, H, W)
    prob: torch.Tensor  # (N, 2, H, W), sums to 1 over channel axis


def bilinear_kernel(channels: int, kernel_size: int) -> torch.Tensor:
    """Bilinear interpolation weights for a transposed convolution.

    Diagonal across channels: channel c upsamples channel c only.
    """
    factor = (kernel_size + 1) // 2
    if kernel_size % 2 == 1:
        center = factor - 1
    else:
        center = factor - 0.5
    og = np.ogrid[:kernel_size, :kernel_size]
    filt = (1 - abs(og[0] - center) / factor) * (1 - abs(og[1] - center) / factor)
    weight = np.zeros((channels, channels, kernel_size, kernel_size), dtype=np.float64)
    for c in range(channels):
        weight[c, c] = filt
    return torch.from_numpy(weight)


def _upsample(channels: int, factor: int) -> nn.ConvTranspose2d:
    k = 2 * factor
    layer = nn.ConvTranspose2d(
        channels, channels, kernel_size=k, stride=factor, padding=factor // 2, bias=False
    )
    with torch.no_grad():
        layer.weight.copy_(bilinear_kernel(channels, k).to(layer.weight.dtype))
    return layer


class Encoder(nn.Module):
    """VGG-19-style convolutional stack; exposes pool3/pool4/pool5 features."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.blocks = nn.ModuleList()
        in_ch = 3
        for n_convs, out_ch in zip(_VGG19_BLOCKS, spec.block_channels):
            convs = []
            for _ in range(n_convs):
                convs.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1))
                convs.append(nn.ReLU(inplace=True))
                in_ch = out_ch
            convs.append(nn.MaxPool2d(2, 2))
            self.blocks.append(nn.Sequential(*convs))

    def forward(self, x: torch.Tensor):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        # pool3, pool4, pool5
        return feats[2], feats[3], feats[4]


class DecoderBranch(nn.Module):
    """Score, upsample, and fuse pool4/pool3 projections for one task."""

    def __init__(self, spec: NetworkSpec, extra_conv7: bool):
        super().__init__()
        ch = spec.block_channels
        layers = []
        if extra_conv7:  # column branch: conv7_column before the scoring conv
            layers += [
                nn.Conv2d(spec.conv6_width, spec.conv6_width, kernel_size=1),
                nn.ReLU(inplace=True),
                nn.Dropout2d(spec.dropout_rate),
            ]
        layers.append(nn.Conv2d(spec.conv6_width, _NUM_CLASSES, kernel_size=1))
        self.score = nn.Sequential(*layers)
        self.up_pool5 = _upsample(_NUM_CLASSES, 2)
        self.pool4_proj = nn.Conv2d(ch[3], _NUM_CLASSES, kernel_size=1)
        self.up_pool4 = _upsample(_NUM_CLASSES, 2)
        self.pool3_proj = nn.Conv2d(ch[2], _NUM_CLASSES, kernel_size=1)
        self.up_final = _upsample(_NUM_CLASSES, 8)

    def forward(self, conv6, pool3, pool4) -> torch.Tensor:
        x = self.score(conv6)
        x = self.up_pool5(x) + self.pool4_proj(pool4)
        x = self.up_pool4(x) + self.pool3_proj(pool3)
        return self.up_final(x)


class Network(nn.Module):
    """Shared encoder, conv6 head, and two independent decoder branches."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        enc_out = spec.block_channels[-1]
        self.conv6 = nn.Sequential(
            nn.Conv2d(enc_out, spec.conv6_width, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Dropout2d(spec.dropout_rate),
            nn.Conv2d(spec.conv6_width, spec.conv6_width, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Dropout2d(spec.dropout_rate),
        )
        self.table_branch = DecoderBranch(spec, extra_conv7=False)
        self.column_branch = DecoderBranch(spec, extra_conv7=True)

    def shared_parameters(self):
        yield from self.encoder.parameters()
        yield from self.conv6.parameters()

    def branch_parameters(self, branch: str):
        if branch == "table":
            return self.table_branch.parameters()
        if branch == "column":
            return self.column_branch.parameters()
        raise ValueError(f"unknown branch: {branch}")

    def forward(self, x: torch.Tensor) -> tuple[BranchOutput, BranchOutput]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (N,3,H,W) input, got {tuple(x.shape)}")
        pool3, pool4, pool5 = self.encoder(x)
        conv6 = self.conv6(pool5)
        table_logits = self.table_branch(conv6, pool3, pool4)
        column_logits = self.column_branch(conv6, pool3, pool4)
        return (
            BranchOutput(table_logits, F.softmax(table_logits, dim=1)),
            BranchOutput(column_logits, F.softmax(column_logits, dim=1)),
        )


def build_network(spec: NetworkSpec, pretrained: bool = False) -> Network:
    """Build the network; optionally load pretrained encoder weights.

    Pretrained weights are read from $TABLENET_CACHE/vgg19_encoder.pt, a
    state dict of 3x3 convolution weights/biases applied to the encoder in
    layer order. They must match the spec's channel widths.
    """
    net = Network(spec)
    if pretrained:
        cache = os.environ.get(PRETRAINED_CACHE_ENV)
        if not cache:
            raise WeightLoadError(
                f"pretrained requested but ${PRETRAINED_CACHE_ENV} is not set"
            )
        path = Path(cache) / "vgg19_encoder.pt"
        if not path.exists():
            raise WeightLoadError(f"pretrained weight file not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        load_encoder_weights(net, state)
    return net


def load_encoder_weights(net: Network, state: dict) -> None:
    """Copy conv weights into the encoder in layer order (torchvision
    `features.*` keys or plain ordered keys both work)."""
    src_weights = [v for k, v in state.items() if k.endswith("weight") and v.ndim == 4]
    src_biases = [v for k, v in state.items() if k.endswith("bias") and v.ndim == 1]
    convs = [
        m for block in net.encoder.blocks for m in block if isinstance(m, nn.Conv2d)
    ]
    if len(src_weights) < len(convs) or len(src_biases) < len(convs):
        raise WeightLoadError(
            f"expected >= {len(convs)} conv layers, got {len(src_weights)}"
        )
    with torch.no_grad():
        for conv, w, b in zip(convs, src_weights, src_biases):
            if conv.weight.shape != w.shape or conv.bias.shape != b.shape:
                raise WeightLoadError(
                    f"shape mismatch: encoder {tuple(conv.weight.shape)} vs "
                    f"pretrained {tuple(w.shape)}"
                )
            conv.weight.copy_(w)
            conv.bias.copy_(b)


# Per-channel means of the encoder's pretraining corpus (RGB, 0..255 scale).
INPUT_MEAN = (123.675, 116.28, 103.53)


def image_to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWx3 uint8 RGB image -> normalized (1,3,H,W) tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {arr.shape}")
    arr = arr - np.asarray(INPUT_MEAN, dtype=np.float32)
    t = torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)
    return t.to(dtype)


def branch_loss(output: BranchOutput, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel 2-class cross-entropy against a binary mask."""
    logits = output.logits
    if target.ndim == 2:
        target = target.unsqueeze(0)
    if logits.shape[0] != target.shape[0] or logits.shape[2:] != target.shape[1:]:
        raise ShapeError(
            f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}"
        )
    return F.cross_entropy(logits, target.long())


def predict_masks(net: Network, image: np.ndarray) -> MaskPair:
    """Forward one preprocessed RGB page; returns foreground probabilities."""
    net.eval()
    with torch.no_grad():
        table_out, column_out = net(image_to_tensor(image))
    table_prob = table_out.prob[0, 1].numpy().astype(np.float64)
    column_prob = column_out.prob[0, 1].numpy().astype(np.float64)
    return MaskPair(np.clip(table_prob, 0, 1), np.clip(column_prob, 0, 1))


def save_checkpoint(net: Network, directory: str | Path, extra: dict | None = None):
    """Atomically write weights + spec sidecar into a checkpoint directory."""
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    tmp.mkdir(parents=True, exist_ok=True)
    torch.save(net.state_dict(), tmp / "weights.pt")
    sidecar = {"spec": asdict(net.spec)}
    if extra:
        sidecar.update(extra)
    (tmp / "spec.json").write_text(json.dumps(sidecar, indent=2))
    if directory.exists():
        import shutil

        shutil.rmtree(directory)
    tmp.rename(directory)


def load_checkpoint(directory: str | Path) -> tuple[Network, dict]:
    """Load a checkpoint directory; returns (network, sidecar metadata)."""
    directory = Path(directory)
    sidecar_path = directory / "spec.json"
    weights_path = directory / "weights.pt"
    if not sidecar_path.exists() or not weights_path.exists():
        raise WeightLoadError(f"incomplete checkpoint: {directory}")
    sidecar = json.loads(sidecar_path.read_text())
    try:
        spec = NetworkSpec(**sidecar["spec"])
    except (KeyError, TypeError, ValueError) as e:
        raise WeightLoadError(f"bad checkpoint spec: {e}") from e
    net = Network(spec)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    try:
        net.load_state_dict(state)
    except RuntimeError as e:
        raise WeightLoadError(f"incompatible checkpoint weights: {e}") from e
    return net, sidecar
