"""Text-image embedding backends and perceptual feature extractors.

Two families, each with a pre-trained real backend and a deterministic stub:

* EncoderBackend maps text and 224x224 images into one joint embedding space
  (D = 512). Real backend: pre-trained contrastive vision-language model.
  Stub: hash-seeded text vectors and a small fixed smooth conv stack, usable
  fully offline and differentiable for gradient tests.
* Perceptual extractors expose named convolutional feature maps used by the
  content loss. Real backend: pre-trained VGG-19. Stub: fixed random convs.

All encode paths return unit-norm embeddings. Backends are frozen; gradients
flow through image inputs only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .core import BackendUnavailableError, derive_seed

EMBED_DIM = 512

DEFAULT_TEMPLATES = (
    "a photo of {}",
    "an image of {}",
    "a picture with the texture of {}",
    "a rendering in the style of {}",
    "artwork in the style of {}",
    "a painting in the style of {}",
    "a photo with {} style",
    "an image showing {}",
)

# Published channel statistics used to normalize inputs for each real backend.
_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

CLIP_DIR_ENV = "TEXTSTYLER_CLIP_DIR"
VGG19_WEIGHTS_ENV = "TEXTSTYLER_VGG19_WEIGHTS"


@dataclass
class FeatureMap:
    """One named convolutional feature map (C, H', W') or batched (B, C, H', W')."""

    layer_name: str
    tensor: torch.Tensor


def _normalize_rows(v: torch.Tensor) -> torch.Tensor:
    return v / v.norm(dim=-1, keepdim=True).clamp_min(1e-8)


def _channel_normalize(images: torch.Tensor, mean, std) -> torch.Tensor:
    m = torch.tensor(mean, dtype=images.dtype, device=images.device).view(1, 3, 1, 1)
    s = torch.tensor(std, dtype=images.dtype, device=images.device).view(1, 3, 1, 1)
    return (images - m) / s


def _as_batch(image: torch.Tensor, resolution: int) -> tuple[torch.Tensor, bool]:
    """Accept (3, R, R) or (B, 3, R, R); return (B, 3, R, R) plus a squeeze flag."""
    if image.ndim == 3:
        batch, single = image.unsqueeze(0), True
    elif image.ndim == 4:
        batch, single = image, False
    else:
        raise ValueError(f"expected (3, R, R) or (B, 3, R, R), got {tuple(image.shape)}")
    b, c, h, w = batch.shape
    if c != 3 or h != resolution or w != resolution:
        raise ValueError(
            f"encoder expects 3x{resolution}x{resolution} inputs, got {tuple(image.shape)}"
        )
    return batch, single


class StubEncoder(nn.Module):
    """Deterministic offline stand-in for the joint text-image encoder.

    Text: each string hashes to a seed that draws a fixed pseudo-random
    unit vector, so equal texts collide and distinct texts land apart.
    Image: a frozen seeded conv stack with tanh nonlinearities (smooth
    everywhere, so finite-difference gradient checks apply).
    """

    def __init__(self, seed: int = 0, input_resolution: int = 224, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.input_resolution = input_resolution
        self.embed_dim = embed_dim
        self.seed = seed
        self.conv1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(7)
        self.proj = nn.Linear(16 * 7 * 7, embed_dim)
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "stub-image-encoder"))
        for p in self.parameters():
            fan_in = p.shape[1] * p[0, 0].numel() if p.ndim > 1 else max(p.shape[0], 1)
            scale = fan_in ** -0.5 if p.ndim > 1 else 0.01
            p.data = torch.randn(p.shape, generator=gen) * scale
        self.requires_grad_(False)
        self.eval()

    def encode_text(self, text: str) -> torch.Tensor:
        if not text.strip():
            raise ValueError("text must be non-empty")
        gen = torch.Generator()
        gen.manual_seed(derive_seed(self.seed, f"stub-text:{text}"))
        vec = torch.randn(self.embed_dim, generator=gen, dtype=torch.float32)
        return _normalize_rows(vec.to(self.proj.weight.dtype))

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        batch, single = _as_batch(image, self.input_resolution)
        x = batch.to(self.proj.weight.dtype) * 2.0 - 1.0
        x = torch.tanh(self.conv1(x))
        x = torch.tanh(self.conv2(x))
        x = self.pool(x).flatten(1)
        emb = _normalize_rows(self.proj(x))
        return emb[0] if single else emb


class ClipEncoder(nn.Module):
    """Pre-trained contrastive text-image encoder (ViT-B/32 projection head).

    Weights must already be on disk: either a local directory named by the
    TEXTSTYLER_CLIP_DIR environment variable or a populated model cache.
    Nothing is downloaded at runtime.
    """

    def __init__(self, input_resolution: int = 224):
        super().__init__()
        self.input_resolution = input_resolution
        try:
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise BackendUnavailableError(
                "the transformers package is required for the real encoder backend; "
                "install it or run with --backend stub"
            ) from exc
        source = os.environ.get(CLIP_DIR_ENV, "openai/clip-vit-base-patch32")
        try:
            self.model = CLIPModel.from_pretrained(source, local_files_only=True)
            self.tokenizer = CLIPTokenizer.from_pretrained(source, local_files_only=True)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load pre-trained encoder weights from {source!r}: {exc}; "
                f"set {CLIP_DIR_ENV} to a local model directory or run with --backend stub"
            ) from exc
        self.model.eval()
        self.model.requires_grad_(False)
        self.embed_dim = int(self.model.config.projection_dim)

    def encode_text(self, text: str) -> torch.Tensor:
        if not text.strip():
            raise ValueError("text must be non-empty")
        tokens = self.tokenizer([text], padding=True, return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_text_features(**tokens)
        return _normalize_rows(feats)[0]

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        batch, single = _as_batch(image, self.input_resolution)
        pixels = _channel_normalize(batch, _CLIP_MEAN, _CLIP_STD)
        feats = self.model.get_image_features(pixel_values=pixels)
        emb = _normalize_rows(feats)
        return emb[0] if single else emb


def encode_text(backend, text: str) -> torch.Tensor:
    """Unit-norm embedding of a text string."""
    return backend.encode_text(text)


def encode_image(backend, image: torch.Tensor) -> torch.Tensor:
    """Unit-norm embedding of an image (or batch) at the backend's resolution."""
    return backend.encode_image(image)


def embed_prompt_ensemble(backend, text: str, templates=DEFAULT_TEMPLATES) -> torch.Tensor:
    """Average the embeddings of ``text`` under each template, re-normalized.

    Averaging several phrasings of the same style smooths out wording
    sensitivity in the text encoder.
    """
    templates = tuple(templates)
    if not templates:
        raise ValueError("templates must be non-empty")
    for t in templates:
        if "{}" not in t:
            raise ValueError(f"template {t!r} lacks a {{}} placeholder")
    embeddings = torch.stack([backend.encode_text(t.format(text)) for t in templates])
    return _normalize_rows(embeddings.mean(dim=0))


class StubPerceptual(nn.Module):
    """Fixed random conv stack standing in for the pre-trained feature extractor.

    Exposes the same layer names the content loss asks for by default, with
    smooth activations so gradient checks carry over.
    """

    LAYERS = ("conv4_2", "conv5_2")

    def __init__(self, seed: int = 0):
        super().__init__()
        self.conv_a = nn.Conv2d(3, 8, 3, padding=1)
        self.conv_b = nn.Conv2d(8, 12, 3, stride=2, padding=1)
        self.conv_c = nn.Conv2d(12, 16, 3, stride=2, padding=1)
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "stub-perceptual"))
        for p in self.parameters():
            fan_in = p.shape[1] * p[0, 0].numel() if p.ndim > 1 else max(p.shape[0], 1)
            scale = fan_in ** -0.5 if p.ndim > 1 else 0.01
            p.data = torch.randn(p.shape, generator=gen) * scale
        self.requires_grad_(False)
        self.eval()

    def features(self, image: torch.Tensor, layers) -> list[FeatureMap]:
        unknown = [name for name in layers if name not in self.LAYERS]
        if unknown:
            raise ValueError(f"unknown layer names {unknown}; supported: {self.LAYERS}")
        single = image.ndim == 3
        x = (image.unsqueeze(0) if single else image).to(self.conv_a.weight.dtype)
        x = torch.tanh(self.conv_a(x))
        taps = {}
        x = torch.tanh(self.conv_b(x))
        taps["conv4_2"] = x
        x = torch.tanh(self.conv_c(x))
        taps["conv5_2"] = x
        return [
            FeatureMap(name, taps[name][0] if single else taps[name]) for name in layers
        ]


def _vgg19_layer_indices() -> dict[str, int]:
    """Map conv layer names to their position in the standard VGG-19 stack."""
    names = {}
    idx = 0
    for block, n_convs in enumerate([2, 2, 4, 4, 4], start=1):
        for conv in range(1, n_convs + 1):
            names[f"conv{block}_{conv}"] = idx
            idx += 2  # conv + relu
        idx += 1  # maxpool
    return names


VGG19_LAYER_INDICES = _vgg19_layer_indices()


def load_vgg19_features() -> nn.Sequential:
    """Build the VGG-19 feature stack and load pre-trained weights from disk.

    The weights file path comes from the TEXTSTYLER_VGG19_WEIGHTS environment
    variable; nothing is downloaded at runtime.
    """
    try:
        from torchvision.models import vgg19
    except ImportError as exc:
        raise BackendUnavailableError(
            "torchvision is required for the pre-trained perceptual backend; "
            "install it or run with --backend stub"
        ) from exc
    model = vgg19(weights=None)
    weights_path = os.environ.get(VGG19_WEIGHTS_ENV, "")
    if not weights_path or not Path(weights_path).is_file():
        raise BackendUnavailableError(
            "pre-trained VGG-19 weights not found; set the "
            f"{VGG19_WEIGHTS_ENV} environment variable to a local weights file "
            "or run with --backend stub"
        )
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except Exception as exc:
        raise BackendUnavailableError(
            f"cannot load VGG-19 weights from {weights_path!r}: {exc}"
        ) from exc
    features = model.features.eval()
    features.requires_grad_(False)
    return features


class VggPerceptual(nn.Module):
    """Pre-trained VGG-19 feature extractor exposing named conv outputs."""

    def __init__(self):
        super().__init__()
        self.vgg = load_vgg19_features()

    def features(self, image: torch.Tensor, layers) -> list[FeatureMap]:
        unknown = [name for name in layers if name not in VGG19_LAYER_INDICES]
        if unknown:
            raise ValueError(
                f"unknown layer names {unknown}; supported: {sorted(VGG19_LAYER_INDICES)}"
            )
        single = image.ndim == 3
        x = image.unsqueeze(0) if single else image
        x = _channel_normalize(x, _IMAGENET_MEAN, _IMAGENET_STD)
        wanted = {VGG19_LAYER_INDICES[name]: name for name in layers}
        taps = {}
        last = max(wanted)
        for idx, module in enumerate(self.vgg):
            x = module(x)
            if idx in wanted:
                taps[wanted[idx]] = x
            if idx == last:
                break
        return [FeatureMap(name, taps[name][0] if single else taps[name]) for name in layers]


def content_features(extractor, image: torch.Tensor, layers) -> list[FeatureMap]:
    """Named feature maps of ``image``, differentiable w.r.t. its pixels."""
    return extractor.features(image, list(layers))


def make_backend(name: str, seed: int = 0, input_resolution: int = 224):
    """Factory for the text-image encoder: 'real' or 'stub'."""
    if name == "stub":
        return StubEncoder(seed=seed, input_resolution=input_resolution)
    if name == "real":
        return ClipEncoder(input_resolution=input_resolution)
    raise ValueError(f"unknown backend {name!r}; choose 'real' or 'stub'")


def make_extractor(name: str, seed: int = 0):
    """Factory for the perceptual feature extractor: 'real' or 'stub'."""
    if name == "stub":
        return StubPerceptual(seed=seed)
    if name == "real":
        return VggPerceptual()
    raise ValueError(f"unknown extractor {name!r}; choose 'real' or 'stub'")
