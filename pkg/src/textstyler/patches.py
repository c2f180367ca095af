"""Patch cropping, random perspective augmentation, and encoder-resolution resize.

Patches are cropped from the stylized output, independently warped by random
projective transforms, then resized to the encoder input resolution. Every
step is a differentiable tensor op (slicing, grid sampling, bilinear
interpolation) so gradients reach the stylization network through each patch.
Augmentation happens after cropping and before encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class PatchBatch:
    """N patch images plus where they came from and how they were warped.

    crops holds (x, y, size) source rectangles (x = left, y = top); aug_params
    holds one (4, 2) corner-displacement tensor per patch, all-zero when the
    patch has not been warped.
    """

    patches: torch.Tensor
    crops: tuple[tuple[int, int, int], ...]
    aug_params: tuple[torch.Tensor, ...]

    def __post_init__(self):
        n = self.patches.shape[0]
        if len(self.crops) != n or len(self.aug_params) != n:
            raise ValueError(
                f"size mismatch: {n} patches, {len(self.crops)} crops, "
                f"{len(self.aug_params)} aug_params"
            )

    def __len__(self) -> int:
        return self.patches.shape[0]


def crop_patches(
    image: torch.Tensor, patch_size: int, n: int, rng: torch.Generator
) -> PatchBatch:
    """Crop n uniformly random patch_size^2 squares from a (3, H, W) image.

    Crops are tensor views stacked into one batch, so gradients flow back to
    the source image.
    """
    if image.ndim != 3:
        raise ValueError(f"expected (3, H, W) image, got {tuple(image.shape)}")
    _, h, w = image.shape
    if patch_size > min(h, w):
        raise ValueError(f"patch_size {patch_size} exceeds image extent {h}x{w}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ys = torch.randint(0, h - patch_size + 1, (n,), generator=rng)
    xs = torch.randint(0, w - patch_size + 1, (n,), generator=rng)
    crops = tuple((int(x), int(y), patch_size) for x, y in zip(xs, ys))
    patches = torch.stack(
        [image[:, y : y + patch_size, x : x + patch_size] for x, y, _ in crops]
    )
    zeros = tuple(torch.zeros(4, 2) for _ in range(n))
    return PatchBatch(patches=patches, crops=crops, aug_params=zeros)


def sample_perspective(
    height: int, width: int, distortion_scale: float, rng: torch.Generator
) -> torch.Tensor:
    """Draw random inward corner displacements, shaped (4, 2).

    Each corner moves into the frame by up to distortion_scale times the
    half-extent along each axis, uniformly. Row order: top-left, top-right,
    bottom-right, bottom-left; columns are (dx, dy) with signs already
    pointing inward.
    """
    if not 0.0 <= distortion_scale <= 1.0:
        raise ValueError(f"distortion_scale must be in [0, 1], got {distortion_scale}")
    mag = torch.rand(4, 2, generator=rng)
    mag[:, 0] *= distortion_scale * (width / 2.0)
    mag[:, 1] *= distortion_scale * (height / 2.0)
    inward = torch.tensor(
        [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]
    )
    return mag * inward


def corner_points(height: int, width: int) -> torch.Tensor:
    """The four frame corners in pixel coordinates (x, y), clockwise from top-left."""
    return torch.tensor(
        [
            [0.0, 0.0],
            [float(width - 1), 0.0],
            [float(width - 1), float(height - 1)],
            [0.0, float(height - 1)],
        ]
    )


def solve_homography(from_pts: torch.Tensor, to_pts: torch.Tensor) -> torch.Tensor:
    """3x3 projective matrix H with H @ [x, y, 1] ~ [u, v, 1] for the 4 pairs.

    Standard direct linear solve with h33 fixed to 1; raises if the point
    configuration is degenerate.
    """
    from_pts = from_pts.to(torch.float64)
    to_pts = to_pts.to(torch.float64)
    a = torch.zeros(8, 8, dtype=torch.float64)
    b = torch.zeros(8, dtype=torch.float64)
    for i in range(4):
        x, y = from_pts[i]
        u, v = to_pts[i]
        a[2 * i] = torch.tensor([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y])
        a[2 * i + 1] = torch.tensor([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y])
        b[2 * i] = u
        b[2 * i + 1] = v
    h = torch.linalg.solve(a, b)
    return torch.cat([h, torch.ones(1, dtype=torch.float64)]).reshape(3, 3)


def warp_perspective(patch: torch.Tensor, displacements: torch.Tensor) -> torch.Tensor:
    """Warp a (3, H, W) patch so its corners land on the displaced positions.

    Out-of-frame samples are filled with 0. Differentiable w.r.t. pixel
    values (the warp grid itself is treated as a constant).
    """
    _, h, w = patch.shape
    if torch.count_nonzero(displacements) == 0:
        return patch
    start = corner_points(h, w)
    end = start + displacements.to(start.dtype)
    # Output pixel at an end corner shows the start corner: map end -> start.
    mat = solve_homography(end, start)
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=torch.float64),
        torch.arange(w, dtype=torch.float64),
        indexing="ij",
    )
    ones = torch.ones_like(xs)
    pts = torch.stack([xs, ys, ones]).reshape(3, -1)
    mapped = mat @ pts
    src = mapped[:2] / mapped[2:3]
    # Normalize pixel coords to [-1, 1] for grid sampling (align_corners).
    gx = 2.0 * src[0] / max(w - 1, 1) - 1.0
    gy = 2.0 * src[1] / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).reshape(1, h, w, 2).to(patch.dtype)
    warped = F.grid_sample(
        patch.unsqueeze(0),
        grid,
        mode="bilinear",
        padding_mode="zeros",
        align_corners=True,
    )
    return warped[0]


def perspective_augment(
    patch: torch.Tensor, distortion_scale: float, rng: torch.Generator
) -> torch.Tensor:
    """Apply one random perspective warp to a (3, H, W) patch."""
    _, h, w = patch.shape
    disp = sample_perspective(h, w, distortion_scale, rng)
    return warp_perspective(patch, disp)


def augment_batch(
    batch: PatchBatch, distortion_scale: float, rng: torch.Generator
) -> PatchBatch:
    """Independently warp every patch in the batch, recording the draws."""
    n, _, h, w = batch.patches.shape
    disps = tuple(sample_perspective(h, w, distortion_scale, rng) for _ in range(n))
    warped = torch.stack([warp_perspective(batch.patches[i], disps[i]) for i in range(n)])
    return PatchBatch(patches=warped, crops=batch.crops, aug_params=disps)


def resize_bilinear(images: torch.Tensor, size: int) -> torch.Tensor:
    """Bilinearly resize (N, 3, H, W) or (3, H, W) images to size x size."""
    single = images.ndim == 3
    x = images.unsqueeze(0) if single else images
    if x.shape[-2:] != (size, size):
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=True)
    return x[0] if single else x


def prepare_encoder_batch(batch: PatchBatch, resolution: int) -> PatchBatch:
    """Resize all patches to the encoder resolution, values clamped to [0, 1]."""
    resized = resize_bilinear(batch.patches, resolution).clamp(0.0, 1.0)
    return PatchBatch(patches=resized, crops=batch.crops, aug_params=batch.aug_params)
