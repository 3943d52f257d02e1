"""Figure rendering for evaluation reports and training logs.

Figures are rendered headlessly to PNG files next to the delimited
output; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricReport  # noqa: E402


def render_metric_figures(report: MetricReport, out_dir) -> list[Path]:
    """Bar charts of per-image PSNR and SSIM with their means marked."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [s.name for s in report.per_image]
    x = range(len(names))

    fig, (ax_psnr, ax_ssim) = plt.subplots(2, 1, figsize=(max(6, len(names) * 0.35), 7))
    ax_psnr.bar(x, [s.psnr_db for s in report.per_image], color="#4878cf")
    ax_psnr.axhline(report.mean_psnr, color="#d65f5f", ls="--", lw=1,
                    label=f"mean {report.mean_psnr:.2f} dB")
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_psnr.legend(loc="lower right")
    ax_ssim.bar(x, [s.ssim for s in report.per_image], color="#6acc65")
    ax_ssim.axhline(report.mean_ssim, color="#d65f5f", ls="--", lw=1,
                    label=f"mean {report.mean_ssim:.4f}")
    ax_ssim.set_ylabel("SSIM")
    ax_ssim.set_ylim(0, 1.05)
    ax_ssim.legend(loc="lower right")
    for ax in (ax_psnr, ax_ssim):
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=90, fontsize=7)
    fig.tight_layout()
    path = out_dir / "metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def render_training_curves(records: list[dict], path) -> Path:
    """Per-step loss curve plus per-epoch evaluation PSNR."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps = [r for r in records if r.get("kind") == "step"]
    epochs = [r for r in records if r.get("kind") == "epoch"]

    fig, (ax_loss, ax_psnr) = plt.subplots(1, 2, figsize=(11, 4))
    if steps:
        ax_loss.plot(range(len(steps)), [r["total"] for r in steps], lw=0.8)
        ax_loss.set_yscale("log")
    ax_loss.set_xlabel("optimizer step")
    ax_loss.set_ylabel("total loss")
    ax_loss.set_title("training loss")
    if epochs:
        xs = [r["epoch"] for r in epochs]
        ax_psnr.plot(xs, [r["eval_psnr"] for r in epochs], marker="o", ms=3,
                     label="eval PSNR")
        ax_psnr.plot(xs, [r["best_psnr"] for r in epochs], ls="--", lw=1,
                     label="best so far")
        if epochs[0].get("baseline_psnr") is not None:
            ax_psnr.axhline(epochs[0]["baseline_psnr"], color="gray", ls=":",
                            label="hazy baseline")
        ax_psnr.legend()
    ax_psnr.set_xlabel("epoch")
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_psnr.set_title("evaluation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
