"""TSV reports and the matplotlib figures written next to them."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.0, 2.8),
    "savefig.dpi": 150,
}


def format_tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(c) for c in row) for row in rows]
    return "\n".join(lines) + "\n"


def emit(text: str, out: str | Path | None = None, stream: TextIO | None = None) -> None:
    """Print ``text`` and optionally write it to ``out``."""
    (stream or sys.stdout).write(text)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def figure_path(out: str | Path, tag: str) -> Path:
    """``runs/report.tsv`` -> ``runs/report.<tag>.png``."""
    out = Path(out)
    return out.with_name(f"{out.stem}.{tag}.png")


def plot_loss_trace(losses: Sequence[float], path: str | Path, title: str = "") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=3, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_dropout_sweep(rates: Sequence[float], maps: Sequence[float], path: str | Path,
                       label: str = "") -> Path:
    """MAP against the dropout rate on the pre-trained text vector."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(rates, maps, marker="s", ms=4, lw=1.2, label=label or None)
        ax.set_xlabel("dropout rate on pre-trained embedding")
        ax.set_ylabel("MAP")
        ax.set_xlim(-0.05, 1.05)
        if label:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
