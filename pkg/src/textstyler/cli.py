"""Command-line interface.

Four subcommands: ``stylize`` optimizes a network for one content image and
prompt, ``fast-train`` fits a reusable decoder on texture crops,``apply``
runs a trained checkpoint on new content, and ``eval`` scores an output
image against a prompt. Every training run writes a self-contained directory
(final image, loss history, checkpoint, resolved config, manifest) so it can
be reproduced from the manifest alone.

Exit codes: 0 success, 2 bad arguments or config, 3 backend or checkpoint
failure, 4 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import torch

from .core import (
    ABLATIONS,
    BackendUnavailableError,
    CheckpointError,
    ConfigError,
    NonFiniteLossError,
    StylePrompt,
    TrainConfig,
    apply_ablation,
    default_config,
    load_config,
    save_config,
)
from .encoders import make_backend, make_extractor
from .evaluation import content_preservation, patchwise_clip_score
from .images import enhance_contrast, load_image, save_image
from .networks import FastStyler, init_weights, load_checkpoint, save_checkpoint
from .training import TextureDataset, train_fast, train_single, write_history_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_NONFINITE = 4


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _slug(text: str, limit: int = 24) -> str:
    s = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return s[:limit] or "run"


def _new_run_dir(out_root: Path, kind: str, text: str) -> tuple[str, Path]:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    base = f"{kind}-{_slug(text)}-{stamp}"
    run_id, n = base, 1
    while (out_root / run_id).exists():
        n += 1
        run_id = f"{base}-{n}"
    run_dir = out_root / run_id
    run_dir.mkdir(parents=True)
    return run_id, run_dir


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    """Atomic replace so a crash never leaves a half-written manifest."""
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, run_dir / "manifest.json")


def _manifest_skeleton(
    run_id: str, command: str, config: TrainConfig, prompt: StylePrompt, backend, args
) -> dict:
    return {
        "run_id": run_id,
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "completed_at": None,
        "status": "running",
        "seed": config.seed,
        "config": asdict(config),
        "prompt": {"style_text": prompt.style_text, "source_text": prompt.source_text},
        "backend": {
            "name": args.backend,
            "input_resolution": backend.input_resolution,
            "embed_dim": backend.embed_dim,
        },
        "inputs": {},
        "outputs": {},
        "timings": {},
    }


def _resolve_config(args, mode: str) -> TrainConfig:
    if getattr(args, "config", None):
        config = load_config(args.config, mode=mode)
    else:
        config = default_config(mode)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "patch_size", None) is not None:
        overrides["patch_size"] = args.patch_size
    if getattr(args, "tau", None) is not None:
        overrides["tau"] = args.tau
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "crop_size", None) is not None:
        overrides["crop_size"] = args.crop_size
    if overrides:
        config = replace(config, **overrides)
    if getattr(args, "ablation", None):
        config = apply_ablation(config, args.ablation)
    return config


def _make_backends(args, config: TrainConfig):
    backend = make_backend(args.backend, seed=config.seed)
    extractor = make_extractor(args.backend, seed=config.seed)
    return backend, extractor


def _write_run_outputs(run_dir: Path, *, final=None, history=None, net=None, enhance=False):
    outputs = {}
    if final is not None:
        image = enhance_contrast(final) if enhance else final
        save_image(image, run_dir / "final.png")
        outputs["final"] = "final.png"
    if history is not None:
        write_history_csv(history, run_dir / "history.csv")
        outputs["history"] = "history.csv"
    if net is not None:
        save_checkpoint(net, run_dir / "checkpoint.bin")
        outputs["checkpoint"] = "checkpoint.bin"
    return outputs


def cmd_stylize(args) -> int:
    try:
        config = _resolve_config(args, "single_image")
        prompt = StylePrompt(style_text=args.text, source_text=args.source_text)
        content = load_image(args.content)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    if config.lambda_patch != 0.0 and config.patch_size > min(content.shape[1:]):
        _err(
            f"patch_size {config.patch_size} exceeds the "
            f"{content.shape[1]}x{content.shape[2]} content image"
        )
        return EXIT_USAGE
    try:
        backend, extractor = _make_backends(args, config)
    except BackendUnavailableError as exc:
        _err(str(exc))
        return EXIT_BACKEND

    out_root = Path(args.out)
    run_id, run_dir = _new_run_dir(out_root, "stylize", args.text)
    manifest = _manifest_skeleton(run_id, "stylize", config, prompt, backend, args)
    manifest["inputs"]["content"] = str(Path(args.content).resolve())
    save_config(config, run_dir / "config.resolved")
    manifest["outputs"]["config"] = "config.resolved"
    _write_manifest(run_dir, manifest)

    start = time.monotonic()
    try:
        net, final, history = train_single(content, prompt, config, backend, extractor)
    except NonFiniteLossError as exc:
        _err(str(exc))
        with torch.no_grad():
            final = exc.net(content) if exc.net is not None else None
        manifest["outputs"].update(
            _write_run_outputs(
                run_dir, final=final, history=exc.history, net=exc.net, enhance=args.enhance
            )
        )
        manifest["status"] = "aborted-nonfinite"
        manifest["completed_at"] = datetime.now(timezone.utc).isoformat()
        manifest["timings"]["train_seconds"] = time.monotonic() - start
        _write_manifest(run_dir, manifest)
        return EXIT_NONFINITE

    manifest["outputs"].update(
        _write_run_outputs(
            run_dir, final=final, history=history, net=net, enhance=args.enhance
        )
    )
    manifest["status"] = "completed"
    manifest["completed_at"] = datetime.now(timezone.utc).isoformat()
    manifest["timings"]["train_seconds"] = time.monotonic() - start
    _write_manifest(run_dir, manifest)
    print(f"run {run_id}: final loss {history[-1].l_total:.4f}")
    print(run_dir / "final.png")
    return EXIT_OK


def cmd_fast_train(args) -> int:
    try:
        config = _resolve_config(args, "fast_transfer")
        prompt = StylePrompt(style_text=args.text, source_text=args.source_text)
        dataset = TextureDataset(args.textures, crop_size=config.crop_size)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        backend, extractor = _make_backends(args, config)
        if args.backend == "real":
            net = FastStyler(pretrained=True)
            init_weights(net.decoder, config.seed)
        else:
            # Offline runs get the same architecture with seeded random weights.
            net = init_weights(FastStyler(pretrained=False), config.seed)
    except BackendUnavailableError as exc:
        _err(str(exc))
        return EXIT_BACKEND

    out_root = Path(args.out)
    run_id, run_dir = _new_run_dir(out_root, "fast", args.text)
    manifest = _manifest_skeleton(run_id, "fast-train", config, prompt, backend, args)
    manifest["inputs"]["textures"] = str(Path(args.textures).resolve())
    manifest["inputs"]["num_textures"] = len(dataset)
    save_config(config, run_dir / "config.resolved")
    manifest["outputs"]["config"] = "config.resolved"
    _write_manifest(run_dir, manifest)

    start = time.monotonic()
    try:
        net, history = train_fast(dataset, prompt, config, backend, extractor, net=net)
    except NonFiniteLossError as exc:
        _err(str(exc))
        manifest["outputs"].update(
            _write_run_outputs(run_dir, history=exc.history, net=exc.net)
        )
        manifest["status"] = "aborted-nonfinite"
        manifest["completed_at"] = datetime.now(timezone.utc).isoformat()
        manifest["timings"]["train_seconds"] = time.monotonic() - start
        _write_manifest(run_dir, manifest)
        return EXIT_NONFINITE

    manifest["outputs"].update(_write_run_outputs(run_dir, history=history, net=net))
    manifest["status"] = "completed"
    manifest["completed_at"] = datetime.now(timezone.utc).isoformat()
    manifest["timings"]["train_seconds"] = time.monotonic() - start
    _write_manifest(run_dir, manifest)
    print(f"run {run_id}: final loss {history[-1].l_total:.4f}")
    print(run_dir / "checkpoint.bin")
    return EXIT_OK


def cmd_apply(args) -> int:
    try:
        content = load_image(args.content)
    except (FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        net = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_BACKEND
    out_path = Path(args.out) if args.out else Path(args.content).with_name(
        Path(args.content).stem + "-styled.png"
    )
    start = time.monotonic()
    with torch.no_grad():
        styled = net(content)
    if args.enhance:
        styled = enhance_contrast(styled)
    try:
        save_image(styled, out_path)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"stylized in {time.monotonic() - start:.2f}s")
    print(out_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        output = load_image(args.output)
        content = load_image(args.content) if args.content else None
    except (FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        backend = make_backend(args.backend, seed=args.seed)
        extractor = make_extractor(args.backend, seed=args.seed) if content is not None else None
    except BackendUnavailableError as exc:
        _err(str(exc))
        return EXIT_BACKEND
    rng = torch.Generator()
    rng.manual_seed(args.seed)
    try:
        report = patchwise_clip_score(
            output,
            args.text,
            backend,
            n=args.patches,
            size_range=(args.min_size, args.max_size),
            rng=rng,
        )
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if content is not None:
        if content.shape != output.shape:
            _err(
                f"content {tuple(content.shape)} and output {tuple(output.shape)} "
                "sizes differ"
            )
            return EXIT_USAGE
        report.content_mse = content_preservation(content, output, extractor)
    for line in report.lines():
        print(line)
    if args.report:
        report.write_csv(args.report)
        print(args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textstyler",
        description="Stylize images to match a free-text style description.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument(
            "--backend",
            choices=("real", "stub"),
            default="real",
            help="encoder backend; 'stub' runs fully offline (default: real)",
        )
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")

    p = sub.add_parser("stylize", help="optimize a stylization for one image and prompt")
    p.add_argument("--content", required=True, help="content image (PNG or JPEG)")
    p.add_argument("--text", required=True, help="target style description")
    p.add_argument("--source-text", default="Photo", help="source-domain text")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--tau", type=float, default=None, help="patch rejection threshold")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--ablation", choices=ABLATIONS, default=None)
    p.add_argument("--out", default="out", help="output root directory")
    p.add_argument("--enhance", action="store_true", help="autocontrast the final image")
    add_common(p)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("fast-train", help="train a reusable styler on texture crops")
    p.add_argument("--textures", required=True, help="directory of texture images")
    p.add_argument("--text", required=True, help="target style description")
    p.add_argument("--source-text", default="Photo", help="source-domain text")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--out", default="out", help="output root directory")
    add_common(p)
    p.set_defaults(func=cmd_fast_train)

    p = sub.add_parser("apply", help="run a trained checkpoint on a content image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--out", default=None, help="output PNG path")
    p.add_argument("--enhance", action="store_true", help="autocontrast the output")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="score an output image against a style prompt")
    p.add_argument("--output", required=True, help="image to score")
    p.add_argument("--text", required=True, help="style description")
    p.add_argument("--content", default=None, help="optional content image for MSE")
    p.add_argument("--patches", type=int, default=64)
    p.add_argument("--min-size", type=int, default=64)
    p.add_argument("--max-size", type=int, default=224)
    p.add_argument("--report", default=None, help="write per-patch scores CSV here")
    p.add_argument(
        "--backend",
        choices=("real", "stub"),
        default="real",
        help="encoder backend; 'stub' runs fully offline (default: real)",
    )
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
