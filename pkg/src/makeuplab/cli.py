"""Command-line interface: gen-data | train | infer | eval | serve."""

from __future__ import annotations

import sys
from dataclasses import fields as dataclass_fields

import click

from . import imagecore, synthfaces
from .errors import MakeuplabError
from .objectives import LossWeights
from .trainer import TrainConfig


def parse_config_file(path: str) -> dict[str, str]:
    """Plain-text config: one key=value per line, '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def build_train_config(overrides: dict[str, str]) -> TrainConfig:
    cfg = TrainConfig()
    field_types = {f.name: f.type for f in dataclass_fields(TrainConfig)}
    for key, raw in overrides.items():
        if key.startswith("weights."):
            name = key.split(".", 1)[1]
            if not hasattr(cfg.weights, name):
                raise ValueError(f"unknown loss weight {name!r}")
            setattr(cfg.weights, name, float(raw))
            continue
        if key not in field_types:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif isinstance(current, LossWeights):
            raise ValueError("set loss weights via weights.<name> keys")
        else:
            value = raw
        setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


def _fail(code: str, message: str) -> None:
    click.echo(f"error\tcode={code}\tmessage={message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Controllable makeup transfer on synthetic faces."""


@main.command("gen-data")
@click.option("--n", "n_pairs", type=int, required=True, help="pairs per domain")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--resolution", type=int, default=imagecore.DEFAULT_RESOLUTION)
@click.option("--aligned", is_flag=True, help="disable pose misalignment")
@click.option("--texture-noise", type=float, default=0.0)
def gen_data(n_pairs, seed, out_dir, resolution, aligned, texture_noise):
    """Generate a paired synthetic dataset with label maps and a manifest."""
    try:
        manifest = synthfaces.generate_dataset(n_pairs, seed, out_dir, resolution=resolution,
                                               misalign=not aligned, texture_noise=texture_noise)
    except (MakeuplabError, ValueError, OSError) as exc:
        _fail("gen_data_failed", str(exc))
    click.echo(f"wrote {len(manifest.entries)} samples to {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True,
              help="dataset directory containing manifest.tsv")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--steps", type=int, default=None, help="stop after this many steps")
@click.option("--epochs", type=int, default=None)
def train_cmd(data_dir, out_dir, seed, config_path, steps, epochs):
    """Train the full model on a generated dataset."""
    import os

    from .trainer import train

    overrides = parse_config_file(config_path) if config_path else {}
    try:
        cfg = build_train_config(overrides)
        if seed is not None:
            cfg.seed = seed
        if steps is not None:
            cfg.max_steps = steps
        if epochs is not None:
            cfg.epochs = epochs
        manifest = synthfaces.Manifest.read(os.path.join(data_dir, "manifest.tsv"))
        ckpt_path, metrics_path = train(manifest, cfg, out_dir,
                                        log_callback=lambda s, r: click.echo(
                                            f"step {s}: total={r['total']:.4f}") if s % 20 == 0 else None)
    except (MakeuplabError, ValueError, OSError) as exc:
        _fail("train_failed", str(exc))
    click.echo(f"checkpoint: {ckpt_path}")
    click.echo(f"metrics: {metrics_path}")


def _parse_parts(parts_str: str, n_refs: int) -> dict[str, int]:
    parts = {}
    for item in parts_str.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" in item:
            name, idx = item.split("=", 1)
            parts[name.strip()] = int(idx)
        else:
            parts[item] = 0
    if not parts:
        raise ValueError("no parts selected")
    for name, idx in parts.items():
        if not (0 <= idx < n_refs):
            raise ValueError(f"part {name!r} references missing slot {idx}")
    return parts


@main.command("infer")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--source-mask", type=click.Path(exists=True), required=True)
@click.option("--ref", "refs", type=(click.Path(exists=True), click.Path(exists=True)),
              multiple=True, required=True, help="reference IMAGE MASK (repeatable, up to 3)")
@click.option("--ref2", type=click.Choice(["source", "ref2"]), default="source",
              help="second interpolant for the shade control")
@click.option("--parts", default="lip,skin,eyes", help="e.g. lip=0,skin=1")
@click.option("--shade", type=float, default=1.0)
@click.option("--mode", type=click.Choice(["transfer", "removal"]), default="transfer")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--dump-intermediates", is_flag=True)
def infer_cmd(ckpt, source, source_mask, refs, ref2, parts, shade, mode, out_path,
              dump_intermediates):
    """Run a single controllable transfer from files to a PNG."""
    from .control import TransferRequest, transfer
    from .trainer import load_checkpoint

    try:
        state = load_checkpoint(ckpt)
        res = state.config.resolution
        references = [(imagecore.load_image(i, res), imagecore.load_label_map(m))
                      for i, m in refs]
        req = TransferRequest(
            source_image=imagecore.load_image(source, res),
            source_labels=imagecore.load_label_map(source_mask),
            references=references,
            parts=_parse_parts(parts, len(references)),
            shade=shade,
            second=ref2,
            mode=mode,
            return_intermediates=dump_intermediates,
        )
        result = transfer(req, state)
        imagecore.save_image(result.output, out_path)
        if dump_intermediates and result.warped_image is not None:
            base = out_path.rsplit(".", 1)[0]
            imagecore.save_image(result.warped_image, base + "_warped.png")
    except (MakeuplabError, ValueError, OSError) as exc:
        _fail("infer_failed", str(exc))
    click.echo(f"wrote {out_path}")


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--metrics-log", type=click.Path(exists=True), default=None)
@click.option("--n-pairs", type=int, default=8)
def eval_cmd(ckpt, data_dir, out_dir, metrics_log, n_pairs):
    """Evaluate a checkpoint on the held-out split; write TSV report and figures."""
    import os

    from .report import eval_pairs, write_report
    from .trainer import load_checkpoint

    try:
        state = load_checkpoint(ckpt)
        manifest = synthfaces.Manifest.read(os.path.join(data_dir, "manifest.tsv"))
        rows = eval_pairs(state, manifest, n_pairs=n_pairs)
        report_path = write_report(rows, metrics_log, out_dir)
    except (MakeuplabError, ValueError, OSError) as exc:
        _fail("eval_failed", str(exc))
    n_closer = sum(1 for r in rows if r["closer_to_reference"])
    click.echo(f"report: {report_path} (closer_to_reference {n_closer}/{len(rows)})")


@main.command("serve")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--gallery", "gallery_dir", type=click.Path(exists=True), default=None)
def serve_cmd(ckpt, host, port, gallery_dir):
    """Start the HTTP inference service."""
    from .server import serve

    try:
        serve(ckpt, host=host, port=port, gallery_dir=gallery_dir)
    except (MakeuplabError, ValueError, OSError) as exc:
        _fail("serve_failed", str(exc))


if __name__ == "__main__":
    main()
