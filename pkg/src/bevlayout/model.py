"""Context encoder, layout decoders and patch discriminators."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .grid import GridSpec

IMAGE_SIZE = 512
CONTEXT_CHANNELS = 512
CONTEXT_SIZE = 32
LAYOUT_SIZE = 128
PATCH_SIZE = 8
CHECKPOINT_VERSION = 1
MIN_DECODER_WIDTH = 16


@dataclass
class ModelConfig:
    # Every channel width is divided by this; 1 is the full model, 8 the narrow variant.
    width_divisor: int = 1
    static_channels: int = 2
    dropout: float = 0.4
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def width(self, c: int) -> int:
        return max(1, c // self.width_divisor)


def _conv_bn(cin, cout, k=3, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride, k // 2, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ContextEncoder(nn.Module):
    """ResNet-18 trunk with a two-scale fusion head.

    The stride-32 ``layer4`` features are upsampled onto the stride-16
    ``layer3`` grid, concatenated and fused by a 3x3 convolution, giving a
    512x32x32 shared context for a 512x512 image.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.width
        self.register_buffer("mean", torch.tensor(cfg.mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(cfg.std).view(1, 3, 1, 1))
        self.stem = nn.Sequential(nn.Conv2d(3, w(64), 7, 2, 3, bias=False), nn.BatchNorm2d(w(64)),
                                  nn.ReLU(inplace=True), nn.MaxPool2d(3, 2, 1))
        self.layer1 = nn.Sequential(BasicBlock(w(64), w(64)), BasicBlock(w(64), w(64)))
        self.layer2 = nn.Sequential(BasicBlock(w(64), w(128), 2), BasicBlock(w(128), w(128)))
        self.layer3 = nn.Sequential(BasicBlock(w(128), w(256), 2), BasicBlock(w(256), w(256)))
        self.layer4 = nn.Sequential(BasicBlock(w(256), w(512), 2), BasicBlock(w(512), w(512)))
        self.fuse = _conv_bn(w(256) + w(512), w(CONTEXT_CHANNELS))
        self.out_channels = w(CONTEXT_CHANNELS)

    def forward(self, image):
        if image.dim() != 4 or image.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"expected images of shape (B, 3, {IMAGE_SIZE}, {IMAGE_SIZE}), got {tuple(image.shape)}")
        # channels-last inputs hit a crashing conv backward kernel on some CPU builds
        x = ((image - self.mean) / self.std).contiguous()
        x = self.layer2(self.layer1(self.stem(x)))
        c3 = self.layer3(x)
        c4 = self.layer4(c3)
        up = F.interpolate(c4, size=c3.shape[-2:], mode="nearest")
        return self.fuse(torch.cat([c3, up], dim=1))


class LayoutDecoder(nn.Module):
    """Two strided conv blocks down to 8x8, four x2 transposed-conv blocks up to 128x128."""

    def __init__(self, cfg: ModelConfig, out_channels: int):
        super().__init__()
        if out_channels not in (1, 2):
            raise ValueError(f"decoders emit 1 or 2 channels, got {out_channels}")
        w = cfg.width
        self.in_channels = w(CONTEXT_CHANNELS)
        self.out_channels = out_channels
        # floored so channel dropout never acts on a handful of maps in narrow variants
        widths = [max(MIN_DECODER_WIDTH, w(c)) for c in (128, 64, 32, 16)]
        self.down = nn.Sequential(_conv_bn(w(512), widths[0], stride=2), _conv_bn(widths[0], widths[0], stride=2))
        self.up = nn.Sequential(*[
            nn.Sequential(nn.ConvTranspose2d(a, b, 4, 2, 1, bias=False), nn.BatchNorm2d(b), nn.ReLU(inplace=True))
            for a, b in zip(widths[:-1], widths[1:])
        ])
        self.dropout = nn.Dropout2d(cfg.dropout)
        self.head = nn.ConvTranspose2d(widths[-1], out_channels, 4, 2, 1)

    def forward(self, context):
        if context.dim() != 4 or context.shape[1:] != (self.in_channels, CONTEXT_SIZE, CONTEXT_SIZE):
            raise ValueError(f"expected context of shape (B, {self.in_channels}, {CONTEXT_SIZE}, {CONTEXT_SIZE}), "
                             f"got {tuple(context.shape)}")
        x = self.up(self.down(context))
        return torch.sigmoid(self.head(self.dropout(x)))


class PatchDiscriminator(nn.Module):
    """Four 3x3 stride-2 convolutions, a 1x1 projection and tanh: 128x128 -> 8x8."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.width
        widths = [1, w(64), w(128), w(256), w(512)]
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Conv2d(a, b, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
        self.features = nn.Sequential(*layers)
        self.project = nn.Conv2d(widths[-1], 1, 1)

    def forward(self, layout):
        if layout.dim() == 3:
            layout = layout.unsqueeze(1)
        if layout.dim() != 4 or layout.shape[1:] != (1, LAYOUT_SIZE, LAYOUT_SIZE):
            raise ValueError(f"expected layouts of shape (B, 1, {LAYOUT_SIZE}, {LAYOUT_SIZE}), got {tuple(layout.shape)}")
        return torch.tanh(self.project(self.features(layout)))


class LayoutNet(nn.Module):
    """Encoder plus static and dynamic decoders over one shared context.

    The discriminators live alongside but are never used by :meth:`forward`.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = ContextEncoder(self.cfg)
        self.static_decoder = LayoutDecoder(self.cfg, self.cfg.static_channels)
        self.dynamic_decoder = LayoutDecoder(self.cfg, 1)
        self.static_discriminator = PatchDiscriminator(self.cfg)
        self.dynamic_discriminator = PatchDiscriminator(self.cfg)

    def forward(self, image, return_context: bool = False):
        context = self.encoder(image)
        static = self.static_decoder(context)
        dynamic = self.dynamic_decoder(context)
        if return_context:
            return static, dynamic, context
        return static, dynamic

    def generator_parameters(self):
        for m in (self.encoder, self.static_decoder, self.dynamic_decoder):
            yield from m.parameters()

    def discriminator_parameters(self):
        for m in (self.static_discriminator, self.dynamic_discriminator):
            yield from m.parameters()

    def named_groups(self) -> dict[str, dict[str, torch.Tensor]]:
        """Parameter groups keyed the way the training objective names them."""
        return {
            "encoder": dict(self.encoder.named_parameters()),
            "static_decoder": dict(self.static_decoder.named_parameters()),
            "dynamic_decoder": dict(self.dynamic_decoder.named_parameters()),
            "static_discriminator": dict(self.static_discriminator.named_parameters()),
            "dynamic_discriminator": dict(self.dynamic_discriminator.named_parameters()),
        }


def encode_context(image: torch.Tensor, model: LayoutNet) -> torch.Tensor:
    """Shared context for a batch (or single image) with the encoder in eval mode."""
    single = image.dim() == 3
    if single:
        image = image.unsqueeze(0)
    was_training = model.encoder.training
    model.encoder.eval()
    try:
        out = model.encoder(image)
    finally:
        model.encoder.train(was_training)
    return out[0] if single else out


def decode_layout(context: torch.Tensor, decoder: LayoutDecoder, training: bool = False) -> torch.Tensor:
    """Run a decoder; dropout is active only when ``training`` is set."""
    single = context.dim() == 3
    if single:
        context = context.unsqueeze(0)
    was_training = decoder.training
    decoder.train(training)
    try:
        out = decoder(context)
    finally:
        decoder.train(was_training)
    return out[0] if single else out


def discriminate(layout: torch.Tensor, discriminator: PatchDiscriminator) -> torch.Tensor:
    single = layout.dim() == 2
    if single:
        layout = layout[None, None]
    out = discriminator(layout)
    return out[0, 0] if single else out


def count_parameters(params, include_discriminators: bool = False) -> int:
    """Scalar parameter count.

    ``params`` may be a :class:`LayoutNet`, a mapping of named arrays, or an
    iterable of arrays.
    """
    if isinstance(params, LayoutNet):
        tensors = list(params.generator_parameters())
        if include_discriminators:
            tensors += list(params.discriminator_parameters())
        return sum(t.numel() for t in tensors)
    if isinstance(params, nn.Module):
        return sum(p.numel() for p in params.parameters())
    if isinstance(params, dict):
        params = params.values()
    return int(sum(np.prod(np.shape(p), dtype=np.int64) for p in params))


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(path: str | Path, model: LayoutNet, grid_spec: GridSpec | None = None,
                    channel_names: dict | None = None, extra: dict | None = None) -> None:
    manifest = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "grid_spec": asdict(grid_spec or GridSpec()),
        "channels": channel_names or {"static": ["road", "sidewalk"][:model.cfg.static_channels],
                                      "dynamic": ["vehicle"]},
        "normalization": {"mean": list(model.cfg.mean), "std": list(model.cfg.std)},
    }
    if extra:
        manifest.update(extra)
    torch.save({"manifest": manifest, "state_dict": model.state_dict()}, path)


def load_checkpoint(path: str | Path) -> tuple[LayoutNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    manifest = blob["manifest"]
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    cfg_dict = dict(manifest["model_config"])
    cfg_dict["mean"] = tuple(cfg_dict["mean"])
    cfg_dict["std"] = tuple(cfg_dict["std"])
    model = LayoutNet(ModelConfig(**cfg_dict))
    model.load_state_dict(blob["state_dict"])
    return model, manifest
