"""Trainable stylization networks and checkpoint persistence.

UNetStyler is the lightweight from-scratch network optimized per content
image: three strided-conv downsampling stages (16, 32, 64 channels), a
128-channel residual bottleneck, three nearest-neighbor-upsample stages with
skip connections, one extra input-to-output skip, and a sigmoid head.
FastStyler pairs a frozen pre-trained feature encoder with a mirrored
trainable decoder so a single trained checkpoint stylizes any content image
in one forward pass.

Checkpoints are single files: magic, format version, a JSON architecture
header, the serialized parameter payload, and a SHA-256 trailer so
truncation or corruption is detected before any weight is used.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .core import CheckpointError, derive_seed

_MAGIC = b"TSTY"
_VERSION = 1


def _pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Reflect-pad (B, C, H, W) on the bottom/right to the next multiple."""
    h, w = x.shape[-2], x.shape[-1]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, pad_h, pad_w


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="reflect")


class ResidualBlock(nn.Module):
    """Two 3x3 convs with instance norm; identity skip around both."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = _conv(channels, channels)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = _conv(channels, channels)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(x + y)


class _DownBlock(nn.Module):
    """Strided conv halving the resolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = _conv(in_ch, out_ch, stride=2)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.norm(self.conv(x)))


class _UpBlock(nn.Module):
    """Nearest-neighbor upsample, channel reduction, skip fusion, residual refine."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.reduce = _conv(in_ch, out_ch)
        self.norm_r = nn.InstanceNorm2d(out_ch, affine=True)
        self.fuse = _conv(out_ch + skip_ch, out_ch)
        self.norm_f = nn.InstanceNorm2d(out_ch, affine=True)
        self.refine = ResidualBlock(out_ch)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.norm_r(self.reduce(x)))
        x = torch.cat([x, skip], dim=1)
        x = F.relu(self.norm_f(self.fuse(x)))
        return self.refine(x)


class UNetStyler(nn.Module):
    """Lightweight residual U-Net mapping an RGB image to a stylized RGB image.

    Output matches the input size for any H, W (reflect-padded up to a
    multiple of 8 internally and cropped back) and lies in (0, 1) thanks to
    the sigmoid head. Under one million parameters, so 200 optimization
    iterations stay cheap.
    """

    def __init__(self):
        super().__init__()
        self.stem = _conv(3, 16)
        self.norm_stem = nn.InstanceNorm2d(16, affine=True)
        self.down1 = _DownBlock(16, 16)
        self.down2 = _DownBlock(16, 32)
        self.down3 = _DownBlock(32, 64)
        self.bottleneck_in = _conv(64, 128)
        self.norm_bn = nn.InstanceNorm2d(128, affine=True)
        self.bottleneck = nn.Sequential(ResidualBlock(128), ResidualBlock(128))
        self.up1 = _UpBlock(128, 32, 64)
        self.up2 = _UpBlock(64, 16, 32)
        self.up3 = _UpBlock(32, 16, 16)
        self.head = _conv(16, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        h, w = x.shape[-2], x.shape[-1]
        x, _, _ = _pad_to_multiple(x, 8)
        s0 = F.relu(self.norm_stem(self.stem(x)))
        s1 = self.down1(s0)
        s2 = self.down2(s1)
        s3 = self.down3(s2)
        b = F.relu(self.norm_bn(self.bottleneck_in(s3)))
        b = self.bottleneck(b)
        u = self.up1(b, s2)
        u = self.up2(u, s1)
        u = self.up3(u, s0)
        # Input-to-output skip: the head predicts a residual on the input.
        out = torch.sigmoid(self.head(u) + x)
        out = out[..., :h, :w]
        return out[0] if single else out


def _vgg19_through_relu4_1() -> nn.Sequential:
    """The standard VGG-19 feature stack truncated after relu4_1 (uninitialized)."""
    from torchvision.models import vgg19

    return vgg19(weights=None).features[:21]


def _mirror_decoder() -> nn.Sequential:
    """Decoder mirroring the relu4_1 encoder: 3 upsamples back to full size."""
    return nn.Sequential(
        _conv(512, 256),
        nn.ReLU(inplace=True),
        nn.Upsample(scale_factor=2, mode="nearest"),
        _conv(256, 256),
        nn.ReLU(inplace=True),
        _conv(256, 256),
        nn.ReLU(inplace=True),
        _conv(256, 256),
        nn.ReLU(inplace=True),
        _conv(256, 128),
        nn.ReLU(inplace=True),
        nn.Upsample(scale_factor=2, mode="nearest"),
        _conv(128, 128),
        nn.ReLU(inplace=True),
        _conv(128, 64),
        nn.ReLU(inplace=True),
        nn.Upsample(scale_factor=2, mode="nearest"),
        _conv(64, 64),
        nn.ReLU(inplace=True),
        _conv(64, 3),
    )


class FastStyler(nn.Module):
    """Frozen pre-trained encoder plus a mirrored trainable decoder.

    Only decoder parameters receive gradients; the encoder stays bit-identical
    through training. With ``pretrained=False`` the encoder keeps its
    uninitialized skeleton, which is how checkpoints are re-materialized
    (their payload carries every weight, encoder included).
    """

    def __init__(self, pretrained: bool = True):
        super().__init__()
        if pretrained:
            from .encoders import load_vgg19_features

            self.encoder = load_vgg19_features()[:21]
        else:
            self.encoder = _vgg19_through_relu4_1()
        self.decoder = _mirror_decoder()
        self.encoder.requires_grad_(False)
        self.encoder.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        self.encoder.eval()
        return self

    def trainable_parameters(self):
        return self.decoder.parameters()

    def parameter_mask(self) -> dict[str, bool]:
        """True for every parameter the optimizer may update."""
        return {name: name.startswith("decoder.") for name, _ in self.named_parameters()}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        h, w = x.shape[-2], x.shape[-1]
        x, _, _ = _pad_to_multiple(x, 8)
        out = torch.sigmoid(self.decoder(self.encoder(x)))
        out = out[..., :h, :w]
        return out[0] if single else out


def stylize(net: nn.Module, content: torch.Tensor) -> torch.Tensor:
    """Run the network on a content image of any size; output matches it."""
    return net(content)


def init_weights(net: nn.Module, seed: int) -> nn.Module:
    """Deterministically (re)initialize all parameters from one seed.

    Conv/linear weights draw scaled normals through a dedicated generator in
    module order; biases and norm offsets start at zero, norm gains at one.
    Same seed, same architecture: identical parameters.
    """
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, "init-weights"))
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            fan_in = module.weight.shape[1] * module.weight[0, 0].numel()
            std = (2.0 / fan_in) ** 0.5
            module.weight.data = torch.randn(module.weight.shape, generator=gen) * std
            if module.bias is not None:
                module.bias.data.zero_()
        elif isinstance(module, (nn.InstanceNorm2d, nn.BatchNorm2d)):
            if module.weight is not None:
                module.weight.data.fill_(1.0)
            if module.bias is not None:
                module.bias.data.zero_()
    return net


_KINDS = {"unet": UNetStyler, "fast": FastStyler}


def _kind_of(net: nn.Module) -> str:
    for kind, cls in _KINDS.items():
        if isinstance(net, cls):
            return kind
    raise CheckpointError(f"unsupported network type {type(net).__name__}")


def save_checkpoint(net: nn.Module, path: str | Path) -> None:
    """Serialize a network to a self-verifying single-file checkpoint."""
    header = json.dumps({"kind": _kind_of(net)}).encode()
    buf = io.BytesIO()
    torch.save(net.state_dict(), buf)
    payload = buf.getvalue()
    blob = (
        _MAGIC
        + struct.pack("<I", _VERSION)
        + struct.pack("<I", len(header))
        + header
        + struct.pack("<Q", len(payload))
        + payload
    )
    digest = hashlib.sha256(blob).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob + digest)


def load_checkpoint(path: str | Path) -> nn.Module:
    """Rebuild a network from a checkpoint, verifying structure and checksum."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(_MAGIC) + 4 + 4 + 8 + 32:
        raise CheckpointError(f"checkpoint {path} is truncated")
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic bytes")
    blob, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise CheckpointError(f"checkpoint {path} failed its checksum (corrupt file)")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != _VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}; this build reads {_VERSION}"
        )
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off : off + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} has an unreadable header: {exc}") from exc
    off += header_len
    (payload_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    payload = blob[off : off + payload_len]
    if len(payload) != payload_len:
        raise CheckpointError(f"checkpoint {path} is truncated")
    kind = header.get("kind")
    if kind not in _KINDS:
        raise CheckpointError(f"checkpoint {path} declares unknown network kind {kind!r}")
    net = UNetStyler() if kind == "unet" else FastStyler(pretrained=False)
    try:
        state = torch.load(io.BytesIO(payload), weights_only=True)
        net.load_state_dict(state, strict=True)
    except Exception as exc:
        raise CheckpointError(f"checkpoint {path} payload rejected: {exc}") from exc
    net.eval()
    return net
