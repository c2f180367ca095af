"""Objective terms for text-driven stylization.

Five terms: whole-image embedding distance, directional embedding loss,
patch-wise directional loss with threshold rejection, perceptual content
loss, and total-variation smoothness. Each returns a scalar tensor that
stays on the autodiff graph; reports carry detached floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .core import ConfigError, LossReport, NonFiniteLossError, TrainConfig

_EPS = 1e-8


@dataclass
class DirectionPair:
    """An image-space direction and a text-space direction in the joint space.

    Differences of unit embeddings, so neither is unit-norm itself.
    """

    delta_i: torch.Tensor
    delta_t: torch.Tensor


def _cos(dot: torch.Tensor, norm_a: torch.Tensor, norm_b: torch.Tensor) -> torch.Tensor:
    # clamp_min keeps the quotient exact for well-scaled inputs while bounding
    # the degenerate zero-direction case; the outer clamp pins float drift
    # inside [-1, 1] so every loss stays in [0, 2].
    return (dot / (norm_a.clamp_min(_EPS) * norm_b.clamp_min(_EPS))).clamp(-1.0, 1.0)


def global_clip_loss(out_embed: torch.Tensor, text_embed: torch.Tensor) -> torch.Tensor:
    """Cosine distance 1 - cos between the output image embedding and the text."""
    dot = (out_embed * text_embed).sum()
    return 1.0 - _cos(dot, out_embed.norm(), text_embed.norm())


def directional_loss(pair: DirectionPair) -> torch.Tensor:
    """1 - cos between the image-space and text-space directions.

    A zero text direction means style and source prompts collide: that is a
    configuration error. A zero image direction (output still equals the
    content) yields the maximum-uninformative value 1.
    """
    t_norm = pair.delta_t.norm()
    if float(t_norm.detach()) < _EPS:
        raise ConfigError(
            "style and source text embeddings coincide; choose distinct prompts"
        )
    dot = (pair.delta_i * pair.delta_t).sum()
    return 1.0 - _cos(dot, pair.delta_i.norm(), t_norm)


def patch_clip_loss(
    patch_embeds: torch.Tensor,
    content_embed: torch.Tensor,
    delta_t: torch.Tensor,
    tau: float,
) -> tuple[torch.Tensor, tuple[float, ...], tuple[bool, ...]]:
    """Threshold-rejected mean of per-patch directional losses.

    l_i = 1 - cos(patch_embed_i - content_embed, delta_t); patches with
    l_i <= tau are rejected. The mean keeps N in the denominator, and the
    rejection mask is built outside the autodiff graph, so rejected patches
    contribute exactly zero to both the value and the gradient.

    content_embed may be a single (D,) anchor shared by all patches or a
    per-patch (N, D) array.
    """
    if patch_embeds.ndim != 2 or patch_embeds.shape[0] < 1:
        raise ValueError(f"expected (N, D) patch embeddings, got {tuple(patch_embeds.shape)}")
    if not 0.0 <= tau <= 2.0:
        raise ValueError(f"tau must be in [0, 2], got {tau}")
    t_norm = delta_t.norm()
    if float(t_norm.detach()) < _EPS:
        raise ConfigError(
            "style and source text embeddings coincide; choose distinct prompts"
        )
    diffs = patch_embeds - content_embed
    dots = diffs @ delta_t
    losses = 1.0 - _cos(dots, diffs.norm(dim=1), t_norm)
    with torch.no_grad():
        keep = losses > tau
    mask = keep.to(losses.dtype)
    loss = (losses * mask).sum() / losses.shape[0]
    per_patch = tuple(float(v) for v in losses.detach())
    rejected = tuple(not bool(k) for k in keep)
    return loss, per_patch, rejected


def content_loss(content_feats, output_feats) -> torch.Tensor:
    """Mean over layers of the elementwise MSE between matching feature maps."""
    if len(content_feats) != len(output_feats) or not content_feats:
        raise ValueError(
            f"feature lists must be non-empty and equal length, got "
            f"{len(content_feats)} and {len(output_feats)}"
        )
    per_layer = []
    for cf, of in zip(content_feats, output_feats):
        if cf.layer_name != of.layer_name:
            raise ValueError(f"layer mismatch: {cf.layer_name!r} vs {of.layer_name!r}")
        if cf.tensor.shape != of.tensor.shape:
            raise ValueError(
                f"shape mismatch at {cf.layer_name}: "
                f"{tuple(cf.tensor.shape)} vs {tuple(of.tensor.shape)}"
            )
        per_layer.append(((of.tensor - cf.tensor) ** 2).mean())
    return torch.stack(per_layer).mean()


def tv_loss(image: torch.Tensor) -> torch.Tensor:
    """Anisotropic squared total variation, mean-reduced per axis.

    Mean of squared horizontal forward differences plus mean of squared
    vertical ones; an axis of extent 1 contributes 0. Mean reduction keeps
    the weight resolution-independent.
    """
    if image.ndim < 3:
        raise ValueError(f"expected (..., C, H, W), got {tuple(image.shape)}")
    h, w = image.shape[-2], image.shape[-1]
    if h < 2 and w < 2:
        raise ValueError("total variation is undefined on a 1x1 image")
    total = image.new_zeros(())
    if w >= 2:
        total = total + ((image[..., :, 1:] - image[..., :, :-1]) ** 2).mean()
    if h >= 2:
        total = total + ((image[..., 1:, :] - image[..., :-1, :]) ** 2).mean()
    return total


def _as_float(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def _check_finite(name: str, value) -> None:
    if not math.isfinite(_as_float(value)):
        raise NonFiniteLossError(name)


def total_loss(
    config: TrainConfig,
    *,
    l_dir=0.0,
    l_patch=0.0,
    per_patch: tuple[float, ...] = (),
    rejected: tuple[bool, ...] = (),
    l_content=0.0,
    l_tv=0.0,
    l_global=0.0,
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the objective terms, plus a detached per-step report.

    Terms whose weight is zero are left out of the graph entirely, so
    ablations change the computation, not just its value. Any non-finite
    term aborts with an error naming it.
    """
    terms = {
        "l_dir": l_dir,
        "l_patch": l_patch,
        "l_content": l_content,
        "l_tv": l_tv,
        "l_global": l_global,
    }
    for name, value in terms.items():
        _check_finite(name, value)
    weights = {
        "l_dir": config.lambda_dir,
        "l_patch": config.lambda_patch,
        "l_content": config.lambda_content,
        "l_tv": config.lambda_tv,
        "l_global": config.lambda_global,
    }
    total = None
    for name in ("l_dir", "l_patch", "l_content", "l_tv", "l_global"):
        if weights[name] == 0.0:
            continue
        piece = weights[name] * terms[name]
        total = piece if total is None else total + piece
    if total is None:
        total = torch.zeros(())
    elif not isinstance(total, torch.Tensor):
        total = torch.as_tensor(total, dtype=torch.float32)
    _check_finite("l_total", total)
    report = LossReport(
        l_global=_as_float(l_global),
        l_dir=_as_float(l_dir),
        l_patch=_as_float(l_patch),
        l_content=_as_float(l_content),
        l_tv=_as_float(l_tv),
        l_total=_as_float(total),
        per_patch=tuple(per_patch),
        rejected=tuple(rejected),
    )
    return total, report
