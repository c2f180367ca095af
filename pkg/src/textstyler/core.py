"""Shared domain types: training configuration, prompts, loss reports, RNG streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

import torch

MODES = ("single_image", "fast_transfer")

# Ablation presets: name -> config overrides applied on top of a resolved config.
# "global_only" drops both directional terms and steers with the whole-image
# embedding distance instead, weighted by the directional weight.
ABLATIONS = ("no_dir", "no_patch", "no_thresh", "no_aug", "global_only")


class ConfigError(ValueError):
    """Invalid configuration value or unparseable config file."""


class BackendUnavailableError(RuntimeError):
    """A real encoder backend could not load its pre-trained weights."""


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN/Inf; training must abort on the last good state."""

    def __init__(self, term: str, iteration: int | None = None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite loss term '{term}'{where}")
        # Filled by the trainer so callers can persist the last good state.
        self.net = None
        self.history: list[LossReport] = []


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or version-incompatible checkpoint file."""


@dataclass(frozen=True)
class StylePrompt:
    """Target style text plus the source-domain text the content is assumed to depict."""

    style_text: str
    source_text: str = "Photo"

    def __post_init__(self):
        if not self.style_text.strip():
            raise ConfigError("style_text must be non-empty")
        if not self.source_text.strip():
            raise ConfigError("source_text must be non-empty")


@dataclass(frozen=True)
class TrainConfig:
    """Full hyperparameter record for one training run.

    ``batch_size``, ``num_augmentations`` and ``crop_size`` only matter in
    fast_transfer mode; ``lambda_global`` is zero unless the whole-image
    embedding-distance ablation is enabled.
    """

    lambda_dir: float = 500.0
    lambda_patch: float = 9000.0
    lambda_content: float = 150.0
    lambda_tv: float = 2e-3
    lambda_global: float = 0.0
    tau: float = 0.7
    patch_size: int = 128
    num_patches: int = 64
    iterations: int = 200
    lr: float = 5e-4
    lr_decay_step: int = 100
    lr_decay_factor: float = 0.5
    seed: int = 0
    mode: str = "single_image"
    distortion_scale: float = 0.5
    content_layers: tuple[str, ...] = ("conv4_2", "conv5_2")
    batch_size: int = 1
    num_augmentations: int = 1
    crop_size: int = 224

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise ConfigError (with .field set) on the first violated invariant."""
        checks = [
            ("lambda_dir", self.lambda_dir >= 0, "must be >= 0"),
            ("lambda_patch", self.lambda_patch >= 0, "must be >= 0"),
            ("lambda_content", self.lambda_content >= 0, "must be >= 0"),
            ("lambda_tv", self.lambda_tv >= 0, "must be >= 0"),
            ("lambda_global", self.lambda_global >= 0, "must be >= 0"),
            ("tau", 0.0 <= self.tau <= 2.0, "must be in [0, 2]"),
            ("patch_size", self.patch_size >= 8, "must be >= 8"),
            ("num_patches", self.num_patches >= 1, "must be >= 1"),
            ("iterations", self.iterations >= 1, "must be >= 1"),
            ("lr", self.lr > 0, "must be > 0"),
            ("lr_decay_step", self.lr_decay_step >= 1, "must be >= 1"),
            ("lr_decay_factor", self.lr_decay_factor > 0, "must be > 0"),
            ("mode", self.mode in MODES, f"must be one of {MODES}"),
            ("distortion_scale", 0.0 <= self.distortion_scale <= 1.0, "must be in [0, 1]"),
            ("content_layers", len(self.content_layers) >= 1, "must name at least one layer"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("num_augmentations", self.num_augmentations >= 1, "must be >= 1"),
            ("crop_size", self.crop_size >= 8, "must be >= 8"),
        ]
        for name, ok, msg in checks:
            if not ok:
                err = ConfigError(f"{name} {msg} (got {getattr(self, name)!r})")
                err.field = name
                raise err


def default_config(mode: str) -> TrainConfig:
    """Published hyperparameters for the given training mode."""
    if mode == "single_image":
        return TrainConfig()
    if mode == "fast_transfer":
        return TrainConfig(
            lambda_dir=1.0,
            lambda_patch=10.0,
            lambda_content=1.0,
            lambda_tv=1e-4,
            tau=0.7,
            patch_size=128,
            num_patches=64,
            iterations=200,
            lr=1e-4,
            lr_decay_step=100,
            lr_decay_factor=0.5,
            mode="fast_transfer",
            batch_size=4,
            num_augmentations=16,
            crop_size=224,
        )
    raise ConfigError(f"mode must be one of {MODES} (got {mode!r})")


def apply_ablation(config: TrainConfig, name: str) -> TrainConfig:
    """Return a copy of ``config`` with one named ablation preset applied."""
    if name == "no_dir":
        return replace(config, lambda_dir=0.0)
    if name == "no_patch":
        return replace(config, lambda_patch=0.0)
    if name == "no_thresh":
        # tau=0 keeps every patch with a positive loss; only exact zeros reject.
        return replace(config, tau=0.0)
    if name == "no_aug":
        return replace(config, distortion_scale=0.0)
    if name == "global_only":
        return replace(config, lambda_global=config.lambda_dir, lambda_dir=0.0, lambda_patch=0.0)
    raise ConfigError(f"unknown ablation {name!r}; choose from {ABLATIONS}")


def _format_value(value) -> str:
    if isinstance(value, bool):  # not used today, but bool is an int subclass
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(name: str, ftype, raw: str):
    if ftype == "float":
        return float(raw)
    if ftype == "int":
        return int(raw)
    if ftype == "str":
        return raw
    if name == "content_layers":
        layers = tuple(part.strip() for part in raw.split(",") if part.strip())
        if not layers:
            raise ValueError("empty layer list")
        return layers
    raise ValueError(f"unsupported field type for {name}")


_FIELD_TYPES = {
    f.name: ("tuple" if f.name == "content_layers" else f.type.split("|")[0].strip())
    for f in fields(TrainConfig)
}


def save_config(config: TrainConfig, path: str | Path) -> None:
    """Write a config as flat `key = value` lines (stable order, diffable)."""
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in fields(TrainConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path: str | Path, mode: str | None = None) -> TrainConfig:
    """Load a `key = value` config file, filling unspecified keys from defaults.

    The mode defaults come from the file's own `mode` line if present, else
    from the ``mode`` argument, else single_image. Every parse or range error
    is reported with its line number.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    overrides: dict[str, object] = {}
    lineno_of: dict[str, int] = {}
    for lineno, raw_line in enumerate(path.read_text().splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key, raw_value = key.strip(), raw_value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            overrides[key] = _parse_value(key, _FIELD_TYPES[key], raw_value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        lineno_of[key] = lineno

    resolved_mode = overrides.get("mode", mode or "single_image")
    if resolved_mode not in MODES:
        where = f"{path}:{lineno_of['mode']}: " if "mode" in lineno_of else ""
        raise ConfigError(f"{where}mode must be one of {MODES} (got {resolved_mode!r})")
    base = default_config(resolved_mode)
    try:
        return replace(base, **overrides)
    except ConfigError as exc:
        bad = getattr(exc, "field", None)
        if bad in lineno_of:
            raise ConfigError(f"{path}:{lineno_of[bad]}: {exc}") from exc
        raise


@dataclass(frozen=True)
class LossReport:
    """Per-step record of every objective term plus the per-patch breakdown."""

    l_global: float
    l_dir: float
    l_patch: float
    l_content: float
    l_tv: float
    l_total: float
    per_patch: tuple[float, ...]
    rejected: tuple[bool, ...]

    @property
    def num_rejected(self) -> int:
        return sum(self.rejected)

    def check(self, config: TrainConfig, rel_tol: float = 1e-6) -> None:
        """Assert the report's internal consistency against its config."""
        if len(self.per_patch) != len(self.rejected):
            raise ValueError("per_patch and rejected length mismatch")
        for loss, rej in zip(self.per_patch, self.rejected):
            if rej != (loss <= config.tau):
                raise ValueError(f"rejection mask inconsistent at loss {loss}")
        n = len(self.per_patch)
        kept_sum = sum(0.0 if r else l for l, r in zip(self.per_patch, self.rejected))
        mean_kept = kept_sum / n if n else 0.0
        if abs(mean_kept - self.l_patch) > rel_tol * max(1.0, abs(self.l_patch)):
            raise ValueError(f"l_patch {self.l_patch} != mean of kept losses {mean_kept}")
        expected = (
            config.lambda_dir * self.l_dir
            + config.lambda_patch * self.l_patch
            + config.lambda_content * self.l_content
            + config.lambda_tv * self.l_tv
            + config.lambda_global * self.l_global
        )
        if abs(expected - self.l_total) > rel_tol * max(1.0, abs(expected)):
            raise ValueError(f"l_total {self.l_total} does not recompose to {expected}")


def derive_seed(master_seed: int, stream: str) -> int:
    """Stable child seed for a named stream; reproducible across processes."""
    digest = hashlib.blake2b(f"{master_seed}:{stream}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStreams:
    """Independent named torch RNG streams derived from one master seed.

    Separate streams for cropping, augmentation, weight init, dataset
    sampling and evaluation mean that toggling one consumer (e.g. disabling
    augmentation) cannot perturb the draws any other consumer sees.
    """

    STREAMS = ("crop", "augment", "weights", "dataset", "eval")

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._generators: dict[str, torch.Generator] = {}

    def generator(self, stream: str) -> torch.Generator:
        if stream not in self.STREAMS:
            raise ValueError(f"unknown stream {stream!r}; choose from {self.STREAMS}")
        if stream not in self._generators:
            gen = torch.Generator()
            gen.manual_seed(derive_seed(self.master_seed, stream))
            self._generators[stream] = gen
        return self._generators[stream]

    @property
    def crop(self) -> torch.Generator:
        return self.generator("crop")

    @property
    def augment(self) -> torch.Generator:
        return self.generator("augment")

    @property
    def weights(self) -> torch.Generator:
        return self.generator("weights")

    @property
    def dataset(self) -> torch.Generator:
        return self.generator("dataset")

    @property
    def eval(self) -> torch.Generator:
        return self.generator("eval")
