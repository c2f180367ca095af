"""Image I/O and validation.

Internal convention everywhere in this package: images are torch float32
tensors shaped (3, H, W) with values in [0, 1]. Batches add a leading dim.
Conversion to/from HWC uint8 happens only at the file boundary here.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage


def validate_image(image: torch.Tensor, name: str = "image") -> None:
    """Raise ValueError unless ``image`` follows the (3, H, W) [0, 1] convention."""
    if not isinstance(image, torch.Tensor):
        raise ValueError(f"{name} must be a torch.Tensor, got {type(image).__name__}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {tuple(image.shape)}")
    if image.dtype != torch.float32:
        raise ValueError(f"{name} must be float32, got {image.dtype}")
    if not torch.isfinite(image).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = image.min().item(), image.max().item()
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]")


def load_image(path: str | Path) -> torch.Tensor:
    """Load a PNG or JPEG file as a (3, H, W) float32 tensor in [0, 1].

    Grayscale and alpha inputs are converted to plain RGB.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as img:
            rgb = img.convert("RGB")
            array = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc
    tensor = torch.from_numpy(array.astype(np.float32) / 255.0)
    return tensor.permute(2, 0, 1).contiguous()


def save_image(image: torch.Tensor, path: str | Path) -> None:
    """Write a (3, H, W) float32 tensor in [0, 1] as a PNG file.

    Values are clamped then rounded to uint8. The extension must be .png;
    lossy formats would silently break exact re-load comparisons.
    """
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValueError(f"output must be a .png file, got {path.name!r}")
    if not isinstance(image, torch.Tensor) or image.ndim != 3 or image.shape[0] != 3:
        shape = tuple(image.shape) if isinstance(image, torch.Tensor) else type(image).__name__
        raise ValueError(f"image must have shape (3, H, W), got {shape}")
    array = (
        (image.detach().clamp(0.0, 1.0) * 255.0)
        .round()
        .to(torch.uint8)
        .permute(1, 2, 0)
        .cpu()
        .numpy()
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(array, mode="RGB").save(path, format="PNG")


def enhance_contrast(image: torch.Tensor) -> torch.Tensor:
    """Stretch each channel's value range to [0, 1] (simple autocontrast)."""
    out = image.clone()
    for c in range(out.shape[0]):
        lo, hi = out[c].min(), out[c].max()
        if (hi - lo) > 1e-6:
            out[c] = (out[c] - lo) / (hi - lo)
    return out.clamp(0.0, 1.0)
