"""Report figures rendered next to the delimited output files.

Everything here is presentation only; no numeric path imports this module.
The Agg backend keeps rendering headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .coeffs import CoeffSet
from .datagen import CoeffFieldSpec, gen_coeff_field

_DPI = 120


def save_loss_curves(history, path: Path) -> Path:
    """Training and validation loss per epoch, log scale."""
    epochs = [row.epoch for row in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(epochs, [row.train_loss for row in history], marker="o",
                markersize=3, label="train")
    ax.semilogy(epochs, [row.val_loss for row in history], marker="s",
                markersize=3, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_ood_curve(points, path: Path) -> Path:
    """Relative error against squared Hellinger distance."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p.achieved_h2 for p in points],
            [p.relative_error for p in points], marker="o")
    ax.axhline(0.01, linestyle="--", color="gray", linewidth=1, label="1% error")
    ax.set_xlabel("squared Hellinger distance")
    ax.set_ylabel("relative error")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_variance_curve(points, path: Path) -> Path:
    """Held-out error against ground-truth coefficient amplitude."""
    fig, ax = plt.subplots(figsize=(6, 4))
    amps = [p.amplitude for p in points]
    ax.plot(amps, [p.relative_error for p in points], marker="o",
            label="held-out relative error")
    ax.plot(amps, [p.recovery_error for p in points], marker="s",
            label="coefficient recovery error")
    ax.set_xlabel("coefficient amplitude")
    ax.set_ylabel("relative error")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def _plot_field_1d(ax, learned: np.ndarray, exact: np.ndarray | None, title: str):
    x = np.arange(learned.shape[0]) / learned.shape[0]
    ax.plot(x, learned, label="learned")
    if exact is not None:
        ax.plot(x, exact, linestyle="--", label="truth")
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.legend()


def _plot_field_2d(fig, axes, learned: np.ndarray, exact: np.ndarray | None, title: str):
    if exact is not None:
        vmin = min(learned.min(), exact.min())
        vmax = max(learned.max(), exact.max())
        im = axes[0].imshow(learned, origin="lower", vmin=vmin, vmax=vmax)
        axes[0].set_title(f"{title} (learned)")
        axes[1].imshow(exact, origin="lower", vmin=vmin, vmax=vmax)
        axes[1].set_title(f"{title} (truth)")
    else:
        im = axes[0].imshow(learned, origin="lower")
        axes[0].set_title(f"{title} (learned)")
    fig.colorbar(im, ax=list(axes), shrink=0.8)


def save_coeff_maps(coeffs: CoeffSet,
                    truth: Mapping[str, Sequence[CoeffFieldSpec]] | None,
                    outdir: Path) -> list[Path]:
    """One figure per coefficient field, learned next to the truth when known.

    Three-dimensional fields are shown as their middle slice along axis 0.
    """
    outdir = Path(outdir)
    written = []
    realized = coeffs.realized_fields()
    for kind, fields in realized.items():
        for i, field in enumerate(fields):
            learned = field.values
            exact = None
            if truth is not None and kind in truth:
                exact = gen_coeff_field(truth[kind][i], coeffs.grid).values
            if coeffs.grid.dim == 3:
                mid = coeffs.grid.n // 2
                learned = learned[mid]
                exact = exact[mid] if exact is not None else None
            name = f"coeff_{kind}_{i}.png"
            title = kind if len(fields) == 1 else f"{kind}[{i}]"
            if coeffs.grid.dim == 1:
                fig, ax = plt.subplots(figsize=(6, 4))
                _plot_field_1d(ax, learned, exact, title)
                fig.tight_layout()
            else:
                ncols = 2 if exact is not None else 1
                fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 4), squeeze=False)
                _plot_field_2d(fig, axes[0], learned, exact, title)
            fig.savefig(outdir / name, dpi=_DPI)
            plt.close(fig)
            written.append(outdir / name)
    return written
