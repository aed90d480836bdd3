"""Output plumbing: canonical config hashes, RFC-4180 CSV, JSON reports,
run manifests with file checksums, and figure rendering.

Every data row carries the (config hash, seed) lineage.  Data files are byte
deterministic for a fixed config; the manifest additionally records wall time,
which is the one field excluded from reproducibility comparisons.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ARTIFACT_VERSION = "0.1.0"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, rows: list, fieldnames=None) -> None:
    """RFC-4180 CSV (CRLF line endings, quoted as needed)."""
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else ["empty"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    import numpy as np

    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    artifact_version: str
    seed: int
    workers: int
    wall_time_s: float
    task_seeds: list
    outputs: dict = field(default_factory=dict)   # relative path -> sha256
    status: str = "complete"
    error: str | None = None

    def write(self, path) -> None:
        write_json(path, asdict(self))


def checksum_outputs(out_dir: Path, names) -> dict:
    return {name: sha256_file(Path(out_dir) / name) for name in names}


# ---------------------------------------------------------------------------
# figures (rendered alongside the delimited output)
# ---------------------------------------------------------------------------


def _save(fig, path):
    fig.savefig(path, dpi=140, metadata={"Software": None})
    plt.close(fig)


def figure_series(path, series, xlabel, ylabel, title, logx=False, logy=False):
    """Generic lines-with-errorbars figure; `series` is a list of dicts with
    keys label, x, y and optional yerr."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for s in series:
        if s.get("yerr") is not None:
            ax.errorbar(s["x"], s["y"], yerr=s["yerr"], label=s["label"],
                        marker="o", ms=3.5, lw=1.2, capsize=2.5)
        else:
            ax.plot(s["x"], s["y"], label=s["label"], marker="o", ms=3.5, lw=1.2)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1 or series and series[0].get("label"):
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3, lw=0.5)
    fig.tight_layout()
    _save(fig, path)


def figure_scatter(path, x, y, xlabel, ylabel, title, diagonal=False):
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.plot(x, y, ".", ms=4, alpha=0.7)
    if diagonal:
        lo = min(min(x), min(y))
        hi = max(max(x), max(y))
        ax.plot([lo, hi], [lo, hi], "k--", lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3, lw=0.5)
    fig.tight_layout()
    _save(fig, path)


def figure_heatmap(path, grid, title, xlabel="x_1", ylabel="x_2"):
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(grid.T, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
