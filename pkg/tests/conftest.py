"""Shared fixtures: stub backends, deterministic images, tiny configs."""

from __future__ import annotations

import sys
from dataclasses import replace

import pytest
import torch

from textstyler import (
    StubEncoder,
    StubPerceptual,
    default_config,
)


def pytest_terminal_summary(terminalreporter):
    """Print one verdict line per acceptance criterion after the run."""
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", []) if module else []
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n, label, verdict in sorted(verdicts):
            terminalreporter.write_line(f"ACCEPTANCE {n} {label}: {verdict}")


def seeded(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def rand_image(h: int, w: int, seed: int = 0) -> torch.Tensor:
    return torch.rand(3, h, w, generator=seeded(seed))


@pytest.fixture(scope="session")
def backend16():
    return StubEncoder(seed=0, input_resolution=16)


@pytest.fixture(scope="session")
def backend64():
    return StubEncoder(seed=0, input_resolution=64)


@pytest.fixture(scope="session")
def extractor():
    return StubPerceptual(seed=0)


@pytest.fixture()
def tiny_config():
    """Small, fast single-image config keeping the default loss weights."""
    return replace(
        default_config("single_image"),
        patch_size=16,
        num_patches=4,
        iterations=2,
        seed=11,
    )


@pytest.fixture()
def content_file(tmp_path):
    from textstyler import save_image

    path = tmp_path / "content.png"
    save_image(rand_image(64, 64, seed=5), path)
    return path


@pytest.fixture()
def texture_dir(tmp_path):
    from textstyler import save_image

    root = tmp_path / "textures"
    root.mkdir()
    for i in range(2):
        save_image(rand_image(96, 96, seed=20 + i), root / f"tex{i}.png")
    return root
