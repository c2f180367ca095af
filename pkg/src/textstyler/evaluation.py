"""Quantitative metrics: patch-wise text-image score and content preservation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import torch

from .encoders import content_features, encode_image, encode_text
from .losses import content_loss
from .patches import resize_bilinear


@dataclass
class EvalReport:
    """Patch-score summary for one output image."""

    mean_clip_score: float
    per_patch_scores: tuple[float, ...]
    content_mse: float | None
    n_patches: int
    size_range: tuple[int, int]

    def lines(self) -> list[str]:
        out = [
            f"patches:        {self.n_patches}",
            f"crop sizes:     {self.size_range[0]}..{self.size_range[1]}",
            f"mean score:     {self.mean_clip_score:.4f}",
            f"min/max score:  {min(self.per_patch_scores):.4f} / "
            f"{max(self.per_patch_scores):.4f}",
        ]
        if self.content_mse is not None:
            out.append(f"content MSE:    {self.content_mse:.6f}")
        return out

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["patch", "score"])
            for i, score in enumerate(self.per_patch_scores):
                writer.writerow([i, repr(score)])
            writer.writerow(["mean", repr(self.mean_clip_score)])


def patchwise_clip_score(
    output: torch.Tensor,
    style_text: str,
    backend,
    n: int = 64,
    size_range: tuple[int, int] = (64, 224),
    rng: torch.Generator | None = None,
) -> EvalReport:
    """Mean cosine similarity between random output crops and the style text.

    n crops with sizes uniform over the integer range are resized to the
    encoder resolution and scored against the plain (un-ensembled) text
    embedding.
    """
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid size_range {size_range}")
    _, h, w = output.shape
    if min(h, w) < hi:
        raise ValueError(
            f"image {h}x{w} is smaller than the largest crop size {hi}"
        )
    if rng is None:
        rng = torch.Generator()
        rng.manual_seed(0)
    with torch.no_grad():
        text_embed = encode_text(backend, style_text)
        views = []
        for _ in range(n):
            size = int(torch.randint(lo, hi + 1, (1,), generator=rng))
            y = int(torch.randint(0, h - size + 1, (1,), generator=rng))
            x = int(torch.randint(0, w - size + 1, (1,), generator=rng))
            crop = output[:, y : y + size, x : x + size]
            views.append(resize_bilinear(crop, backend.input_resolution))
        embeds = encode_image(backend, torch.stack(views).clamp(0.0, 1.0))
        scores = (embeds @ text_embed).clamp(-1.0, 1.0)
    per_patch = tuple(float(s) for s in scores)
    return EvalReport(
        mean_clip_score=float(scores.mean()),
        per_patch_scores=per_patch,
        content_mse=None,
        n_patches=n,
        size_range=(lo, hi),
    )


def content_preservation(
    content: torch.Tensor,
    output: torch.Tensor,
    extractor,
    layers=("conv4_2", "conv5_2"),
) -> float:
    """Feature-space MSE between content and output at the given layers."""
    if content.shape != output.shape:
        raise ValueError(
            f"size mismatch: content {tuple(content.shape)} vs output {tuple(output.shape)}"
        )
    with torch.no_grad():
        cf = content_features(extractor, content, layers)
        of = content_features(extractor, output, layers)
        return float(content_loss(cf, of))
