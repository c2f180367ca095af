"""Independent reference implementations the tests check the package against.

Everything here is deliberately written with plain Python/numpy arithmetic,
not with the package's own tensor code, so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def cosine(a, b) -> float:
    """Plain-Python cosine similarity of two vectors."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def rejected_mean(per_patch: list[float], tau: float) -> tuple[float, list[bool]]:
    """Direct evaluation of the thresholded patch mean.

    R(l, tau) = 0 if l <= tau else l; result is mean over ALL N patches.
    """
    kept = [0.0 if l <= tau else l for l in per_patch]
    mask = [l <= tau for l in per_patch]
    return math.fsum(kept) / len(per_patch), mask


def patch_loss_reference(
    patch_embeds: np.ndarray, content_embed: np.ndarray, delta_t: np.ndarray, tau: float
) -> tuple[float, list[float], list[bool]]:
    """Brute-force per-patch directional losses plus the thresholded mean."""
    per_patch = []
    for i in range(patch_embeds.shape[0]):
        anchor = content_embed[i] if content_embed.ndim == 2 else content_embed
        diff = patch_embeds[i] - anchor
        c = max(-1.0, min(1.0, cosine(diff, delta_t)))
        per_patch.append(1.0 - c)
    mean, mask = rejected_mean(per_patch, tau)
    return mean, per_patch, mask


def central_differences(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Per-pixel central finite differences of a scalar function of an image."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        f_plus = float(fn(x))
        flat[i] = orig - h
        f_minus = float(fn(x))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def solve_homography_np(from_pts: np.ndarray, to_pts: np.ndarray) -> np.ndarray:
    """Reference 4-point homography via numpy's linear solver."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = from_pts[i]
        u, v = to_pts[i]
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def warp_reference(patch: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Per-pixel projective warp with bilinear sampling and zero fill.

    Mirrors the contract: output corners land on the displaced positions,
    so each output pixel samples the input through the end-to-start map.
    """
    c, h, w = patch.shape
    start = np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]]
    )
    end = start + displacements
    mat = solve_homography_np(end, start)
    out = np.zeros_like(patch)
    for y in range(h):
        for x in range(w):
            denom = mat[2, 0] * x + mat[2, 1] * y + mat[2, 2]
            sx = (mat[0, 0] * x + mat[0, 1] * y + mat[0, 2]) / denom
            sy = (mat[1, 0] * x + mat[1, 1] * y + mat[1, 2]) / denom
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            for ch in range(c):
                acc = 0.0
                for dy, wy in ((0, 1.0 - fy), (1, fy)):
                    for dx, wx in ((0, 1.0 - fx), (1, fx)):
                        yy, xx = y0 + dy, x0 + dx
                        val = (
                            patch[ch, yy, xx]
                            if 0 <= yy < h and 0 <= xx < w
                            else 0.0
                        )
                        acc += wy * wx * val
                out[ch, y, x] = acc
    return out


def bilinear_ramp(size: int) -> np.ndarray:
    """Horizontal unit ramp: column x has value x / (size - 1)."""
    row = np.linspace(0.0, 1.0, size)
    return np.tile(row, (size, 1))


def mse_by_hand(a, b) -> float:
    flat_a = np.asarray(a, dtype=np.float64).reshape(-1)
    flat_b = np.asarray(b, dtype=np.float64).reshape(-1)
    return float(np.mean((flat_a - flat_b) ** 2))
