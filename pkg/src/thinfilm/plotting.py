"""PNG output for observables CSVs and height-field snapshots (Agg backend)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .torus import read_field, read_field_csv  # noqa: E402

__all__ = ["SchemaError", "load_observables", "plot_observables", "plot_field", "plot_support"]


class SchemaError(ValueError):
    """A CSV or field file does not have the expected layout."""


def load_observables(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "t" not in rows[0]:
        raise SchemaError(f"{path}: missing column 't'")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as err:
        raise SchemaError(f"{path}: non-numeric or ragged rows ({err})") from None
    return {name: data[:, i] for i, name in enumerate(header)}


def plot_observables(csv_path: str | Path, columns: list[str] | None, out_dir: str | Path) -> list[Path]:
    """One line plot per column against ``t``; ``None`` means every column."""
    obs = load_observables(csv_path)
    names = [c for c in obs if c != "t"] if columns is None else columns
    for c in names:
        if c not in obs:
            raise SchemaError(f"missing column '{c}'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in names:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(obs["t"], obs[c], lw=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel(c)
        fig.tight_layout()
        path = out_dir / f"{Path(csv_path).stem}_{c}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def _load_field(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        return read_field_csv(path) if path.suffix == ".csv" else read_field(path)
    except ValueError as err:
        raise SchemaError(f"{path}: {err}") from None


def plot_field(field_path: str | Path, out_dir: str | Path) -> Path:
    u = _load_field(field_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(u, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
    fig.colorbar(im, ax=ax, label="u")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    path = out_dir / f"{Path(field_path).stem}_heatmap.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_support(field_path: str | Path, out_dir: str | Path, threshold: float = 1e-7) -> tuple[Path, float]:
    """Render ``{u > threshold}``; returns the image path and the wetted fraction."""
    u = _load_field(field_path)
    mask = u > threshold
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    ax.imshow(mask, origin="lower", extent=(0, 1, 0, 1), cmap="Greys", vmin=0, vmax=1)
    ax.set_title(f"support, wet fraction {mask.mean():.3f}")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    path = out_dir / f"{Path(field_path).stem}_support.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path, float(mask.mean())
