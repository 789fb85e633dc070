"""Evaluation metrics and report rendering (TSV + matplotlib figures)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import imagecore, synthfaces
from .control import plain_transfer
from .trainer import TrainState, load_sample


def region_mean_color(image: np.ndarray, labels: np.ndarray, region: str) -> np.ndarray:
    """Mean RGB (in [0,1]) of one region; zeros when the region is empty."""
    mask = imagecore.region_mask(labels, region)
    total = mask.sum()
    if total < 1:
        return np.zeros(3)
    unit = imagecore.to_unit(image)
    return (unit * mask).sum(axis=(1, 2)) / total


def eval_pairs(state: TrainState, manifest: synthfaces.Manifest,
               n_pairs: int = 8) -> list[dict]:
    """Transfer held-out (test-split) X sources with Y references and measure
    how close the generated lip color lands to each side."""
    cfg = state.config
    xs = manifest.by_domain("X")
    ys = manifest.by_domain("Y")
    x_test = [e for i, e in enumerate(xs) if synthfaces.split_of(i, len(xs)) == "test"]
    y_test = [e for i, e in enumerate(ys) if synthfaces.split_of(i, len(ys)) == "test"]
    n = min(n_pairs, len(x_test), len(y_test))
    rows = []
    for k in range(n):
        x = load_sample(manifest, x_test[k], cfg)
        y = load_sample(manifest, y_test[k], cfg)
        result = plain_transfer(state, x.image, x.labels, y.image, y.labels)
        gen_lip = region_mean_color(result.output, x.labels, "lip")
        src_lip = region_mean_color(x.image, x.labels, "lip")
        ref_lip = region_mean_color(y.image, y.labels, "lip")
        d_ref = float(np.linalg.norm(gen_lip - ref_lip))
        d_src = float(np.linalg.norm(gen_lip - src_lip))
        rows.append({
            "source": x_test[k].sample_id,
            "reference": y_test[k].sample_id,
            "dist_to_ref_lip": d_ref,
            "dist_to_src_lip": d_src,
            "closer_to_reference": d_ref < d_src,
            "_images": (x.image, y.image, result.output),
        })
    return rows


def write_report(rows: list[dict], metrics_log: str | None, out_dir: str) -> str:
    """Write eval rows as TSV plus figures; returns the report path."""
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.tsv")
    columns = ["source", "reference", "dist_to_ref_lip", "dist_to_src_lip", "closer_to_reference"]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in columns) + "\n")
        n_closer = sum(1 for r in rows if r["closer_to_reference"])
        fh.write(f"# closer_to_reference: {n_closer}/{len(rows)}\n")

    if rows:
        fig, axes = plt.subplots(len(rows), 3, figsize=(6, 2 * len(rows)), squeeze=False)
        for i, row in enumerate(rows):
            for j, (img, title) in enumerate(zip(row["_images"], ("source", "reference", "output"))):
                axes[i][j].imshow(imagecore.to_unit(img).transpose(1, 2, 0).clip(0, 1))
                axes[i][j].set_axis_off()
                if i == 0:
                    axes[i][j].set_title(title)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "samples.png"), dpi=100)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(5, 4))
        idx = np.arange(len(rows))
        ax.bar(idx - 0.2, [r["dist_to_ref_lip"] for r in rows], width=0.4, label="to reference lip")
        ax.bar(idx + 0.2, [r["dist_to_src_lip"] for r in rows], width=0.4, label="to source lip")
        ax.set_xlabel("held-out pair")
        ax.set_ylabel("RGB distance of generated lip mean")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "lip_distance.png"), dpi=100)
        plt.close(fig)

    if metrics_log and os.path.exists(metrics_log):
        header, *lines = open(metrics_log, encoding="utf-8").read().strip().split("\n")
        names = header.split("\t")[1:]
        values = np.array([[float(v) for v in line.split("\t")] for line in lines])
        fig, ax = plt.subplots(figsize=(7, 4))
        for j, name in enumerate(names):
            ax.plot(values[:, 0], values[:, j + 1], label=name, linewidth=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.legend(ncol=4, fontsize=7)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "loss_curves.png"), dpi=100)
        plt.close(fig)
    return report_path
