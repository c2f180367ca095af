"""Optimization loops for single-image stylization and fast texture transfer.

Both loops share the same recipe: embed the prompt pair once, then per step
forward the network, build the loss terms whose weights are nonzero, take an
Adam step under a halving learning-rate schedule, and append a LossReport to
the history. All randomness flows through named generator streams derived
from config.seed, so two runs with one seed are bit-identical on the same
hardware backend.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .core import LossReport, NonFiniteLossError, RngStreams, StylePrompt, TrainConfig
from .encoders import FeatureMap, content_features, embed_prompt_ensemble, encode_image
from .images import load_image
from .losses import (
    DirectionPair,
    content_loss,
    directional_loss,
    global_clip_loss,
    patch_clip_loss,
    total_loss,
    tv_loss,
)
from .networks import FastStyler, UNetStyler, init_weights
from .patches import (
    augment_batch,
    crop_patches,
    resize_bilinear,
    sample_perspective,
    warp_perspective,
)

logger = logging.getLogger(__name__)

# Consecutive all-rejected steps before warning that tau starves training.
ALL_REJECTED_WARN_STEPS = 10


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Piecewise-constant decay: lr * factor^(floor(step / decay_step))."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return config.lr * config.lr_decay_factor ** (step // config.lr_decay_step)


@dataclass
class TrainState:
    """Mutable bookkeeping for one run; history grows by one report per step."""

    iteration: int = 0
    lr: float = 0.0
    net: torch.nn.Module | None = None
    optimizer: torch.optim.Optimizer | None = None
    rng: RngStreams | None = None
    history: list[LossReport] = field(default_factory=list)


class TextureDataset:
    """Random fixed-size crops from a directory of texture images.

    Images smaller than the crop size are bilinearly upscaled first so every
    yielded patch is exactly crop_size^2 with values in [0, 1]. Decoded
    images are cached after first use.
    """

    EXTENSIONS = (".png", ".jpg", ".jpeg")

    def __init__(self, source: str | Path | list, crop_size: int = 224):
        if isinstance(source, (str, Path)):
            root = Path(source)
            if not root.is_dir():
                raise FileNotFoundError(f"texture directory not found: {root}")
            self.paths = sorted(
                p for p in root.iterdir() if p.suffix.lower() in self.EXTENSIONS
            )
        else:
            self.paths = [Path(p) for p in source]
        if not self.paths:
            raise ValueError("texture dataset is empty")
        self.crop_size = crop_size
        self._cache: dict[Path, torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def _load(self, path: Path) -> torch.Tensor:
        if path not in self._cache:
            image = load_image(path)
            _, h, w = image.shape
            if min(h, w) < self.crop_size:
                scale = self.crop_size / min(h, w)
                new_h = max(self.crop_size, int(round(h * scale)))
                new_w = max(self.crop_size, int(round(w * scale)))
                image = F.interpolate(
                    image.unsqueeze(0),
                    size=(new_h, new_w),
                    mode="bilinear",
                    align_corners=True,
                )[0].clamp(0.0, 1.0)
            self._cache[path] = image
        return self._cache[path]

    def sample_batch(self, batch_size: int, rng: torch.Generator) -> torch.Tensor:
        """Draw batch_size independent random crops, shaped (B, 3, s, s)."""
        crops = []
        for _ in range(batch_size):
            idx = int(torch.randint(0, len(self.paths), (1,), generator=rng))
            image = self._load(self.paths[idx])
            _, h, w = image.shape
            y = int(torch.randint(0, h - self.crop_size + 1, (1,), generator=rng))
            x = int(torch.randint(0, w - self.crop_size + 1, (1,), generator=rng))
            crops.append(image[:, y : y + self.crop_size, x : x + self.crop_size])
        return torch.stack(crops)


def _prompt_directions(backend, prompt: StylePrompt) -> tuple[torch.Tensor, torch.Tensor]:
    """Ensembled style embedding and the style-minus-source text direction."""
    with torch.no_grad():
        t_sty = embed_prompt_ensemble(backend, prompt.style_text)
        t_src = embed_prompt_ensemble(backend, prompt.source_text)
    return t_sty, t_sty - t_src


def _encoder_view(images: torch.Tensor, resolution: int) -> torch.Tensor:
    return resize_bilinear(images, resolution).clamp(0.0, 1.0)


def _detached_features(extractor, images: torch.Tensor, layers) -> list[FeatureMap]:
    with torch.no_grad():
        return [
            FeatureMap(f.layer_name, f.tensor.detach())
            for f in content_features(extractor, images, layers)
        ]


def _track_rejections(report: LossReport, streak: int) -> int:
    if report.rejected and all(report.rejected):
        streak += 1
        if streak == ALL_REJECTED_WARN_STEPS:
            logger.warning(
                "all patches rejected for %d consecutive steps; "
                "tau may be too high for this prompt",
                streak,
            )
    else:
        streak = 0
    return streak


def _abort(exc: NonFiniteLossError, step: int, net, history) -> NonFiniteLossError:
    exc.iteration = step
    exc.net = net
    exc.history = history
    exc.args = (f"non-finite loss term '{exc.term}' at iteration {step}",)
    return exc


def train_single(
    content: torch.Tensor,
    prompt: StylePrompt,
    config: TrainConfig,
    backend,
    extractor,
) -> tuple[UNetStyler, torch.Tensor, list[LossReport]]:
    """Optimize a fresh UNetStyler on one content image for one prompt.

    Returns the trained network, the final stylized image, and the per-step
    loss history. A non-finite loss aborts with the last good parameters
    attached to the raised error.
    """
    resolution = backend.input_resolution
    net = init_weights(UNetStyler(), config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr)
    state = TrainState(net=net, optimizer=optimizer, rng=RngStreams(config.seed))

    t_sty, delta_t = _prompt_directions(backend, prompt)
    with torch.no_grad():
        src_embed = encode_image(backend, _encoder_view(content, resolution))
    content_feats = _detached_features(extractor, content, config.content_layers)

    streak = 0
    for step in range(config.iterations):
        state.iteration = step
        state.lr = lr_schedule(step, config)
        for group in optimizer.param_groups:
            group["lr"] = state.lr

        out = net(content)
        terms: dict = {}
        out_embed = None
        if config.lambda_dir != 0.0 or config.lambda_global != 0.0:
            out_embed = encode_image(backend, _encoder_view(out, resolution))
        if config.lambda_dir != 0.0:
            terms["l_dir"] = directional_loss(DirectionPair(out_embed - src_embed, delta_t))
        if config.lambda_global != 0.0:
            terms["l_global"] = global_clip_loss(out_embed, t_sty)
        if config.lambda_patch != 0.0:
            batch = crop_patches(out, config.patch_size, config.num_patches, state.rng.crop)
            batch = augment_batch(batch, config.distortion_scale, state.rng.augment)
            patch_embeds = encode_image(backend, _encoder_view(batch.patches, resolution))
            l_patch, per_patch, rejected = patch_clip_loss(
                patch_embeds, src_embed, delta_t, config.tau
            )
            terms.update(l_patch=l_patch, per_patch=per_patch, rejected=rejected)
        if config.lambda_content != 0.0:
            out_feats = content_features(extractor, out, config.content_layers)
            terms["l_content"] = content_loss(content_feats, out_feats)
        if config.lambda_tv != 0.0:
            terms["l_tv"] = tv_loss(out)

        try:
            total, report = total_loss(config, **terms)
        except NonFiniteLossError as exc:
            raise _abort(exc, step, net, state.history)

        optimizer.zero_grad()
        if total.requires_grad:
            total.backward()
        optimizer.step()
        state.history.append(report)
        streak = _track_rejections(report, streak)

    with torch.no_grad():
        final = net(content).detach()
    return net, final, state.history


def train_fast(
    dataset: TextureDataset,
    prompt: StylePrompt,
    config: TrainConfig,
    backend,
    extractor,
    net: FastStyler | None = None,
) -> tuple[FastStyler, list[LossReport]]:
    """Train a FastStyler decoder on texture crops for one prompt.

    Each step styles a batch of already-cropped texture patches, so no
    further sub-cropping happens: every output patch is warped
    num_augmentations times to form the patch-loss views, while the
    directional term uses the un-augmented outputs. Only decoder parameters
    are ever updated.
    """
    resolution = backend.input_resolution
    if net is None:
        net = FastStyler(pretrained=True)
        init_weights(net.decoder, config.seed)
    optimizer = torch.optim.Adam(net.trainable_parameters(), lr=config.lr)
    state = TrainState(net=net, optimizer=optimizer, rng=RngStreams(config.seed))

    t_sty, delta_t = _prompt_directions(backend, prompt)

    streak = 0
    for step in range(config.iterations):
        state.iteration = step
        state.lr = lr_schedule(step, config)
        for group in optimizer.param_groups:
            group["lr"] = state.lr

        inputs = dataset.sample_batch(config.batch_size, state.rng.dataset)
        out = net(inputs)
        with torch.no_grad():
            in_embeds = encode_image(backend, _encoder_view(inputs, resolution))

        terms: dict = {}
        out_embeds = None
        if config.lambda_dir != 0.0 or config.lambda_global != 0.0:
            out_embeds = encode_image(backend, _encoder_view(out, resolution))
        if config.lambda_dir != 0.0:
            # Directional term on the pre-augmentation patches, one per batch
            # element, averaged.
            per_patch_dir = [
                directional_loss(DirectionPair(out_embeds[b] - in_embeds[b], delta_t))
                for b in range(out.shape[0])
            ]
            terms["l_dir"] = torch.stack(per_patch_dir).mean()
        if config.lambda_global != 0.0:
            dots = out_embeds @ t_sty
            terms["l_global"] = (1.0 - dots).mean()
        if config.lambda_patch != 0.0:
            views = []
            anchors = []
            for b in range(out.shape[0]):
                for _ in range(config.num_augmentations):
                    disp = sample_perspective(
                        out.shape[-2], out.shape[-1], config.distortion_scale, state.rng.augment
                    )
                    views.append(warp_perspective(out[b], disp))
                    anchors.append(in_embeds[b])
            view_embeds = encode_image(
                backend, _encoder_view(torch.stack(views), resolution)
            )
            l_patch, per_patch, rejected = patch_clip_loss(
                view_embeds, torch.stack(anchors), delta_t, config.tau
            )
            terms.update(l_patch=l_patch, per_patch=per_patch, rejected=rejected)
        if config.lambda_content != 0.0:
            in_feats = _detached_features(extractor, inputs, config.content_layers)
            out_feats = content_features(extractor, out, config.content_layers)
            terms["l_content"] = content_loss(in_feats, out_feats)
        if config.lambda_tv != 0.0:
            terms["l_tv"] = tv_loss(out)

        try:
            total, report = total_loss(config, **terms)
        except NonFiniteLossError as exc:
            raise _abort(exc, step, net, state.history)

        optimizer.zero_grad()
        if total.requires_grad:
            total.backward()
        optimizer.step()
        state.history.append(report)
        streak = _track_rejections(report, streak)

    net.eval()
    return net, state.history


HISTORY_COLUMNS = (
    "iteration",
    "l_global",
    "l_dir",
    "l_patch",
    "l_content",
    "l_tv",
    "l_total",
    "num_rejected",
)


def write_history_csv(history: list[LossReport], path: str | Path) -> None:
    """Persist one CSV row per training step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for i, rep in enumerate(history):
            writer.writerow(
                [
                    i,
                    repr(rep.l_global),
                    repr(rep.l_dir),
                    repr(rep.l_patch),
                    repr(rep.l_content),
                    repr(rep.l_tv),
                    repr(rep.l_total),
                    rep.num_rejected,
                ]
            )
