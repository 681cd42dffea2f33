"""Command-line interface: train, eval, serve, and batch application runs."""

import json
import os

import click
import numpy as np

from .imgio import load_image, save_image


@click.group()
def main():
    """Texture synthesis and interpolation toolkit."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--families", default="stripes,blobs",
              help="comma-separated procedural families")
@click.option("--count", default=24, help="source images per family")
@click.option("--size", default=128, help="source image side length")
@click.option("--seed", default=0)
def synth(out, families, count, size, seed):
    """Generate a procedural texture dataset with a JSON manifest."""
    from .data import make_synthetic_dataset, save_manifest

    fams = [f.strip() for f in families.split(",") if f.strip()]
    train, test = make_synthetic_dataset(fams, count, size, seed)
    os.makedirs(out, exist_ok=True)
    for split in (train, test):
        for item in split.items:
            path = os.path.join(out, f"{item.key}.png")
            save_image(item.array, path)
            item.path = path
            item.key = path
    save_manifest(train, test, os.path.join(out, "manifest.json"))
    click.echo(f"wrote {len(train)} train / {len(test)} test images to {out}")


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file with 'model' and 'train' sections")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--ablation",
              type=click.Choice(["no_global", "no_blending", "no_shuffling"]),
              default=None)
@click.option("--preset", type=click.Choice(["desk", "full"]),
              default="desk")
@click.option("--steps", default=None, type=int,
              help="override the step count (desk schedules)")
@click.option("--resume", "resume_from", type=click.Path(exists=True),
              default=None, help="checkpoint to resume from")
def train(config_path, data_dir, out_dir, ablation, preset, steps,
          resume_from):
    """Train a model on a directory of texture images."""
    from .data import load_dataset
    from .models import ModelConfig, desk_config, full_config
    from .training import (TrainConfig, Trainer, desk_train_config,
                           full_train_config)

    cfg = _load_config(config_path)
    if preset == "desk":
        model_cfg, train_cfg = desk_config(), desk_train_config()
    else:
        model_cfg, train_cfg = full_config(), full_train_config()
    if "model" in cfg:
        model_cfg = ModelConfig(**{**model_cfg.to_dict(), **cfg["model"]})
    if "train" in cfg:
        train_cfg = TrainConfig(**{**train_cfg.to_dict(), **cfg["train"]})
    if ablation:
        train_cfg.ablation = ablation
    if steps:
        train_cfg.steps = steps

    train_ds, _ = load_dataset(data_dir, patch_size=model_cfg.patch_size)
    if resume_from:
        trainer = Trainer.resume(resume_from, train_ds, out_dir)
    else:
        trainer = Trainer(model_cfg, train_cfg, train_ds, out_dir)
    final = trainer.run()
    click.echo(f"final checkpoint: {final}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pairs", default=8, help="number of test pairs")
@click.option("--seed", default=0)
def eval_cmd(checkpoint, data_dir, out_path, pairs, seed):
    """Run the seven-metric evaluation suite and write a JSON report."""
    from .classifiers import (repetition_example_sampler,
                              seam_example_sampler,
                              train_binary_classifier,
                              train_family_classifier)
    from .data import load_dataset
    from .metrics import evaluate, write_report
    from .service import load_bundle
    from .training import build_patch_bank

    bundle = load_bundle(checkpoint)
    p = bundle.patch_size
    train_ds, test_ds = load_dataset(data_dir, patch_size=p)
    rng = np.random.default_rng(seed)

    sources = [it.load() for it in train_ds.items]
    labels = [it.label for it in train_ds.items]
    labels = labels if all(labels) else None
    seam_clf = train_binary_classifier(
        "seam", seam_example_sampler(sources, p, labels=labels), seed=seed)
    rep_clf = train_binary_classifier(
        "repetition", repetition_example_sampler(sources, p), seed=seed)
    fam_clf = train_family_classifier(
        sources, labels or ["texture"] * len(sources), p, seed=seed)

    test_bank, _ = build_patch_bank(test_ds, p, seed + 1)
    idx = rng.permutation(len(test_bank))
    test_pairs = [(test_bank[idx[2 * i]], test_bank[idx[2 * i + 1]])
                  for i in range(min(pairs, len(idx) // 2))]
    rows, per_pair = evaluate(bundle, test_pairs, seam_clf, rep_clf,
                              fam_clf, seed=seed)
    payload = write_report(out_path, rows, per_pair)
    click.echo(payload["table"])
    click.echo(f"report written to {out_path}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--port", default=8008)
@click.option("--host", default="127.0.0.1")
@click.option("--state-dir", default=None, type=click.Path())
def serve(checkpoint, port, host, state_dir):
    """Serve the painting API over HTTP."""
    from .service import serve as _serve

    click.echo(f"serving {checkpoint} on {host}:{port}")
    _serve(checkpoint, port, host=host, state_dir=state_dir)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--left", required=True, type=click.Path(exists=True))
@click.option("--right", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--aspect", default=8, help="canvas width in patch units")
@click.option("--seed", default=0)
def interpolate(checkpoint, left, right, out_path, aspect, seed):
    """Horizontal interpolation between two texture images."""
    from .metrics import run_horizontal_task
    from .service import load_bundle

    bundle = load_bundle(checkpoint)
    p = bundle.patch_size
    s_l = load_image(left)[:p, :p]
    s_r = load_image(right)[:p, :p]
    task = run_horizontal_task(bundle, s_l, s_r, seed=seed, aspect=aspect)
    save_image(task.canvas, out_path)
    click.echo(f"wrote {task.canvas.shape[1]}x{task.canvas.shape[0]} canvas "
               f"to {out_path}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.argument("image_a", type=click.Path(exists=True))
@click.argument("image_b", type=click.Path(exists=True))
@click.option("--frames", default=8)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0)
def dissolve(checkpoint, image_a, image_b, frames, out_dir, seed):
    """Write a cross-dissolve frame sequence between two textures."""
    from .canvas import dissolve as _dissolve
    from .service import load_bundle

    bundle = load_bundle(checkpoint)
    p = bundle.patch_size
    a = load_image(image_a)[:p, :p]
    b = load_image(image_b)[:p, :p]
    out = _dissolve(bundle, a, b, frames, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    for k, frame in enumerate(out):
        save_image(frame, os.path.join(out_dir, f"frame_{k:03d}.png"))
    click.echo(f"wrote {frames} frames to {out_dir}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.argument("image_a", type=click.Path(exists=True))
@click.argument("image_b", type=click.Path(exists=True))
@click.argument("hole_mask", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0)
def hybridize(checkpoint, image_a, image_b, hole_mask, out_path, seed):
    """Blend two pre-aligned images across a transition hole."""
    from PIL import Image

    from .canvas import hybridize as _hybridize
    from .service import load_bundle

    bundle = load_bundle(checkpoint)
    a = load_image(image_a)
    b = load_image(image_b)
    mask = np.asarray(Image.open(hole_mask).convert("L")) > 127
    out = _hybridize(bundle, a, b, mask, seed=seed)
    save_image(out, out_path)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
