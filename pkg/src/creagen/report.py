"""Static markdown report assembled from the outputs of earlier commands."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting


def _table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _rel(target: Path, base: Path) -> str:
    return os.path.relpath(target, base).replace(os.sep, "/")


def build_report(
    out: Path,
    train: Optional[Path] = None,
    metrics: Optional[Path] = None,
    sets: Optional[Path] = None,
    analysis: Optional[Path] = None,
) -> list:
    """Write ``report.md`` and ``figures/*.png`` into `out`; returns written paths."""
    from .trainer import TrainLog

    out = Path(out)
    fig_dir = out / "figures"
    written = []
    parts = ["# Run report", ""]

    if train is not None and (train / "train_log.csv").is_file():
        log = TrainLog.read_csv(train / "train_log.csv")
        cfg = json.loads((train / "config.json").read_text()) if (train / "config.json").is_file() else {}
        written.append(plotting.plot_losses(log, fig_dir / "losses.png"))
        last = log.rows[-1]
        parts += [
            "## Training",
            "",
            _table(["setting", "value"], [(k, cfg[k]) for k in sorted(cfg)]),
            "",
            f"Final iteration {last['iteration']}: L_D = {last['L_D']:.4f}, L_G = {last['L_G']:.4f}.",
            "",
            "![losses](figures/losses.png)",
            "",
        ]

    if metrics is not None and (metrics / "summary.json").is_file():
        s = json.loads((metrics / "summary.json").read_text())
        keys = (
            "n_images",
            "inception_shape",
            "inception_texture",
            "am_shape",
            "am_texture",
            "mean_shape_confusion",
            "mean_texture_confusion",
            "mean_nn_distance",
        )
        parts += ["## Automatic metrics", "", _table(["metric", "value"], [(k, _fmt(s[k])) for k in keys if k in s]), ""]
        if "shape_names" in s:
            written.append(plotting.plot_histograms(s, s["shape_names"], s["texture_names"], fig_dir / "histograms.png"))
            parts += ["![predicted categories](figures/histograms.png)", ""]
        for w in s.get("classifier_warnings", []):
            parts += [f"> classifier warning: {w}", ""]

    if sets is not None and (sets / "sets.json").is_file():
        doc = json.loads((sets / "sets.json").read_text())
        parts += ["## Evaluation sets", ""]
        for name, ids in doc["sets"].items():
            parts.append(f"### {name} ({len(ids)} images)")
            g = sets / "galleries" / f"{name}.png"
            if g.is_file():
                parts += ["", f"![{name}]({_rel(g, out)})"]
            parts.append("")

    if analysis is not None and (analysis / "correlations.csv").is_file():
        from .analysis import CorrelationResult

        header, rows = _read_csv(analysis / "correlations.csv")
        mat = np.array([[float(v) if v else np.nan for v in r[1:]] for r in rows])
        corr = CorrelationResult([r[0] for r in rows], header[1:], mat, len(rows), 0)
        written.append(plotting.plot_correlations(corr, fig_dir / "correlations.png", "Metrics vs ratings (random set)"))
        parts += ["## Analysis", "", "![correlations](figures/correlations.png)", ""]
        if (analysis / "pca_projections.csv").is_file():
            _, prow = _read_csv(analysis / "pca_projections.csv")
            lhead, lrows = _read_csv(analysis / "pca_loadings.csv")
            ratio = [float(v) for v in next(r for r in lrows if r[0] == "explained_ratio")[1:]]
            proj = np.array([[float(v) for v in r[1:3]] for r in prow])
            ids = [int(r[0]) for r in prow]
            colour = np.zeros(len(ids))
            if (analysis / "ratings_aggregated.csv").is_file():
                _, arows = _read_csv(analysis / "ratings_aggregated.csv")
                q1 = {int(r[0]): float(r[1]) for r in arows}
                colour = np.array([q1.get(i, np.nan) for i in ids])
            written.append(plotting.plot_pca(proj, colour, fig_dir / "pca.png", ratio))
            parts += ["![pca](figures/pca.png)", "", _table(lhead, lrows), ""]
        if (analysis / "wundt.csv").is_file():
            _, wrows = _read_csv(analysis / "wundt.csv")
            points = [(r[0], float(r[1]), float(r[2])) for r in wrows]
            written.append(plotting.plot_wundt(points, fig_dir / "wundt.png"))
            parts += ["![wundt](figures/wundt.png)", "", _table(["model", "novelty", "rating"], [(m, f"{n:.4f}", f"{r:.4f}") for m, n, r in points]), ""]
        if (analysis / "ttests.csv").is_file():
            thead, trows = _read_csv(analysis / "ttests.csv")
            if trows:
                parts += ["Paired t-tests on per-set mean overall rating:", "", _table(thead, trows), ""]

    report = out / "report.md"
    report.write_text("\n".join(parts) + "\n", encoding="utf-8")
    written.append(report)
    return written
