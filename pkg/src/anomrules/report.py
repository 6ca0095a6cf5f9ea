"""Diagnostic dumps: delimited tables with figure renderings alongside.

A training run leaves behind the numbers that justify its choices -- the
bandwidth scan curve, the eigenvalue spectrum, the silhouette sweep, the
embedded points with their cluster ids, a cluster summary and the rule
grid.  Every quantity is written as a TSV under ``<model>/diag``; next to
each table the same thing is rendered as a PNG unless figures are turned
off.
"""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .clustering import ClusterModel  # noqa: E402
from .embedding import EpsilonScan, SpectralDecomposition  # noqa: E402
from .rules import RuleSet  # noqa: E402

log = logging.getLogger(__name__)

_FIGSIZE = (6.0, 4.0)
_DPI = 120


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def _write_tsv(path: Path, header: list[str], rows) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_epsilon_scan(diag: Path, scan: EpsilonScan, figures: bool = True) -> None:
    _write_tsv(
        diag / "epsilon_scan.tsv",
        ["epsilon", "kernel_sum"],
        zip(map(float, scan.epsilons), map(float, scan.kernel_sums)),
    )
    if figures:
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        ax.loglog(scan.epsilons, scan.kernel_sums, marker=".", lw=1)
        ax.axvline(scan.chosen, color="tab:red", lw=1, ls="--", label=f"chosen {scan.chosen:.4g}")
        ax.set_xlabel("bandwidth")
        ax.set_ylabel("kernel sum")
        ax.legend()
        _save(fig, diag / "epsilon_scan.png")


def write_spectrum(diag: Path, decomp: SpectralDecomposition, figures: bool = True) -> None:
    _write_tsv(
        diag / "eigenvalues.tsv",
        ["index", "eigenvalue"],
        ((i, float(v)) for i, v in enumerate(decomp.eigenvalues)),
    )
    if figures:
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        ax.plot(range(len(decomp.eigenvalues)), decomp.eigenvalues, "o-", ms=4, lw=1)
        ax.set_xlabel("eigenvalue index")
        ax.set_ylabel("eigenvalue")
        _save(fig, diag / "eigenvalues.png")


def write_silhouette_curve(
    diag: Path, curve: tuple[tuple[int, float], ...], figures: bool = True
) -> None:
    _write_tsv(diag / "silhouette.tsv", ["k", "mean_silhouette"], ((k, float(s)) for k, s in curve))
    if figures:
        ks = [k for k, _ in curve]
        ss = [s for _, s in curve]
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        ax.plot(ks, ss, "o-", ms=4, lw=1)
        ax.set_xlabel("number of clusters")
        ax.set_ylabel("mean silhouette")
        if ks:
            best = ks[int(np.argmax(ss))]
            ax.axvline(best, color="tab:red", lw=1, ls="--")
        _save(fig, diag / "silhouette.png")


def write_embedding(
    diag: Path, coords: np.ndarray, assignment: np.ndarray, figures: bool = True
) -> None:
    coords = np.asarray(coords)
    d = coords.shape[1]
    header = ["row"] + [f"c{j + 1}" for j in range(d)] + ["cluster"]
    rows = (
        (i + 1, *(float(v) for v in coords[i]), int(assignment[i]) + 1)
        for i in range(len(coords))
    )
    _write_tsv(diag / "embedding.tsv", header, rows)
    if figures:
        x = coords[:, 0]
        y = coords[:, 1] if d > 1 else np.zeros(len(coords))
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        for c in np.unique(assignment):
            sel = assignment == c
            ax.scatter(x[sel], y[sel], s=12, label=f"cluster {int(c) + 1}")
        ax.set_xlabel("coordinate 1")
        ax.set_ylabel("coordinate 2" if d > 1 else "")
        ax.legend(fontsize=8)
        _save(fig, diag / "embedding.png")


def write_clusters(diag: Path, model: ClusterModel, cluster_classes: tuple[str, ...]) -> None:
    sizes = np.bincount(model.assignment, minlength=model.k)
    _write_tsv(
        diag / "clusters.tsv",
        ["cluster", "size", "class"],
        ((c + 1, int(sizes[c]), cluster_classes[c]) for c in range(model.k)),
    )


def write_rule_grid(diag: Path, ruleset: RuleSet, figures: bool = True) -> None:
    _write_tsv(
        diag / "rules_summary.tsv",
        ["rule", "class", "required", "forbidden"],
        (
            (i + 1, r.class_token, int((r.mask == 1).sum()), int((r.mask == -1).sum()))
            for i, r in enumerate(ruleset.rules)
        ),
    )
    if figures:
        grid = np.stack([r.mask for r in ruleset.rules]).astype(int) + 1
        cmap = matplotlib.colors.ListedColormap(["#1a1a1a", "#c8c8c8", "#ffffff"])
        h = max(2.0, 0.3 * len(ruleset.rules) + 1.2)
        fig, ax = plt.subplots(figsize=(7.0, h))
        ax.imshow(grid, cmap=cmap, vmin=0, vmax=2, aspect="auto", interpolation="nearest")
        ax.set_yticks(range(len(ruleset.rules)))
        ax.set_yticklabels(
            [f"{i + 1}: {r.class_token}" for i, r in enumerate(ruleset.rules)], fontsize=7
        )
        ax.set_xlabel("feature column (white = required, black = forbidden)")
        _save(fig, diag / "rule_grid.png")


def write_diagnostics(
    model_dir: str | Path,
    *,
    scan: EpsilonScan | None = None,
    decomposition: SpectralDecomposition | None = None,
    curve: tuple[tuple[int, float], ...] | None = None,
    coords: np.ndarray | None = None,
    model: ClusterModel | None = None,
    cluster_classes: tuple[str, ...] | None = None,
    ruleset: RuleSet | None = None,
    figures: bool = True,
) -> Path:
    """Write whatever diagnostics are available into ``<model>/diag``."""
    diag = Path(model_dir) / "diag"
    diag.mkdir(parents=True, exist_ok=True)
    if scan is not None:
        write_epsilon_scan(diag, scan, figures)
    if decomposition is not None:
        write_spectrum(diag, decomposition, figures)
    if curve is not None:
        write_silhouette_curve(diag, curve, figures)
    if coords is not None and model is not None:
        write_embedding(diag, coords, model.assignment, figures)
    if model is not None and cluster_classes is not None:
        write_clusters(diag, model, cluster_classes)
    if ruleset is not None:
        write_rule_grid(diag, ruleset, figures)
    log.info("diagnostics written to %s", diag)
    return diag
