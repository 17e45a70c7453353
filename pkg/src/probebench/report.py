"""Render result logs as marked-up tables and per-dataset shot curves.

Marker convention for tables: a provider's cell is bold when it strictly
beats every other provider on every seed, italic when it does so on all but
one seed. Markdown-style ** and * carry the markers in both text and CSV.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import log_odds
from .runner import RunRecord

TABLE_METRICS = ("top1", "auc")
# AUC levels eligible to become y-axis ticks on the log-odds scale.
_TICK_LEVELS = (
    0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 0.997, 0.999,
)
_GROUP_FIELDS = ("dataset", "k", "probe_kind", "resample_mode")


@dataclass(frozen=True)
class ResultsTable:
    text: str
    csv: str
    warnings: tuple[str, ...]


def _metric_value(record: RunRecord, metric: str) -> float:
    assert record.metrics is not None
    return record.metrics.top1 if metric == "top1" else record.metrics.macro_auc


def _row_label(record: RunRecord, multi_probe: bool) -> str:
    return f"{record.provider}/{record.probe_kind}" if multi_probe else record.provider


def _group_records(records, group_by):
    for field in group_by:
        if field not in _GROUP_FIELDS:
            raise ValueError(f"cannot group by {field!r}; choose from {_GROUP_FIELDS}")
    groups: dict[tuple, list[RunRecord]] = {}
    for record in records:
        key = tuple(getattr(record, field) for field in group_by)
        groups.setdefault(key, []).append(record)
    return groups


def _markers(per_seed: dict[str, dict[int, float]]) -> dict[str, str]:
    """per_seed: row -> seed -> value. Returns row -> "" | "italic" | "bold"."""
    rows = list(per_seed)
    if len(rows) < 2:
        return {row: "" for row in rows}
    common = set.intersection(*(set(per_seed[row]) for row in rows))
    out = {}
    for row in rows:
        wins = sum(
            1
            for seed in common
            if all(
                per_seed[row][seed] > per_seed[other][seed]
                for other in rows
                if other != row
            )
        )
        if common and wins == len(common):
            out[row] = "bold"
        elif len(common) >= 2 and wins == len(common) - 1:
            out[row] = "italic"
        else:
            out[row] = ""
    return out


def _marked(value: float, marker: str) -> str:
    text = f"{value:.4f}"
    if marker == "bold":
        return f"**{text}**"
    if marker == "italic":
        return f"*{text}*"
    return text


def render_results_table(records, group_by=("dataset", "k")) -> ResultsTable:
    """Seed-averaged table per group, rows = providers, with win markers."""
    usable = [r for r in records if r.ok and r.metrics is not None]
    if not usable:
        raise ValueError("no records")
    group_by = tuple(group_by)
    groups = _group_records(usable, group_by)
    warnings: list[str] = []
    text_blocks: list[str] = []
    csv_lines = [",".join(group_by + ("provider",) + TABLE_METRICS
                          + tuple(f"{m}_marker" for m in TABLE_METRICS))]
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        block = groups[key]
        multi_probe = len({r.probe_kind for r in block}) > 1 and "probe_kind" not in group_by
        rows: list[str] = []
        for record in block:
            label = _row_label(record, multi_probe)
            if label not in rows:
                rows.append(label)
        # row -> metric -> seed -> list of values (several records can share
        # a seed under coarse grouping; they average first)
        cells: dict[str, dict[str, dict[int, list[float]]]] = {
            row: {m: {} for m in TABLE_METRICS} for row in rows
        }
        for record in block:
            label = _row_label(record, multi_probe)
            for metric in TABLE_METRICS:
                cells[label][metric].setdefault(record.seed, []).append(
                    _metric_value(record, metric)
                )
        per_seed = {
            row: {
                metric: {
                    seed: sum(vals) / len(vals)
                    for seed, vals in cells[row][metric].items()
                }
                for metric in TABLE_METRICS
            }
            for row in rows
        }
        seed_sets = {frozenset(per_seed[row]["top1"]) for row in rows}
        header = " ".join(f"{f}={v}" for f, v in zip(group_by, key))
        if len(seed_sets) > 1:
            warnings.append(
                f"{header}: seed sets differ across providers; "
                "means use available seeds"
            )
        markers = {
            metric: _markers({row: per_seed[row][metric] for row in rows})
            for metric in TABLE_METRICS
        }
        table_rows = []
        for row in rows:
            formatted = [
                _marked(
                    sum(per_seed[row][m].values()) / len(per_seed[row][m]),
                    markers[m][row],
                )
                for m in TABLE_METRICS
            ]
            table_rows.append((row, formatted))
            csv_lines.append(",".join(
                tuple(str(v) for v in key) + (row,)
                + tuple(f"{sum(per_seed[row][m].values()) / len(per_seed[row][m]):.6f}"
                        for m in TABLE_METRICS)
                + tuple(markers[m][row] for m in TABLE_METRICS)
            ))
        name_width = max(len("provider"), max(len(r) for r, _ in table_rows))
        widths = [
            max(len(TABLE_METRICS[i]), max(len(f[i]) for _, f in table_rows))
            for i in range(len(TABLE_METRICS))
        ]
        lines = [header]
        lines.append("  " + "provider".ljust(name_width) + "  "
                     + "  ".join(m.rjust(w) for m, w in zip(TABLE_METRICS, widths)))
        for row, formatted in table_rows:
            lines.append("  " + row.ljust(name_width) + "  "
                         + "  ".join(f.rjust(w) for f, w in zip(formatted, widths)))
        text_blocks.append("\n".join(lines))
    text = "\n\n".join(text_blocks) + "\n"
    if warnings:
        text = "".join(f"warning: {w}\n" for w in warnings) + "\n" + text
    return ResultsTable(text=text, csv="\n".join(csv_lines) + "\n", warnings=tuple(warnings))


def shots_curve_data(records):
    """dataset -> provider row -> (points, means).

    points: (k, seed, macro_auc, log_odds) sorted by (k, seed); means:
    (k, mean_auc, log_odds of mean) sorted by k.
    """
    usable = [r for r in records if r.ok and r.metrics is not None]
    if len({r.k for r in usable}) < 2:
        raise ValueError("shot curves need records spanning at least 2 k values")
    multi_probe = len({r.probe_kind for r in usable}) > 1
    data: dict[str, dict[str, dict]] = {}
    for record in usable:
        rows = data.setdefault(record.dataset, {})
        label = _row_label(record, multi_probe)
        entry = rows.setdefault(label, {})
        entry.setdefault(record.k, []).append((record.seed, record.metrics.macro_auc))
    out: dict[str, dict[str, tuple[list, list]]] = {}
    for dataset, rows in data.items():
        out[dataset] = {}
        for label, by_k in rows.items():
            points = []
            means = []
            for k in sorted(by_k):
                values = sorted(by_k[k])
                for seed, auc in values:
                    points.append((k, seed, auc, log_odds(auc)))
                mean_auc = sum(a for _, a in values) / len(values)
                means.append((k, mean_auc, log_odds(mean_auc)))
            out[dataset][label] = (points, means)
    return out


def _log_odds_ticks(lo: float, hi: float) -> tuple[list[float], list[str]]:
    positions, labels = [], []
    for level in _TICK_LEVELS:
        y = log_odds(level)
        if lo - 0.5 <= y <= hi + 0.5:
            positions.append(y)
            labels.append(f"{level:g}")
    return positions, labels


def render_shots_curve(records, out_dir) -> list[Path]:
    """Per dataset: an SVG figure plus the CSV behind it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = shots_curve_data(records)
    plt.rcParams["svg.hashsalt"] = "probebench"
    written: list[Path] = []
    for dataset in sorted(data):
        rows = data[dataset]
        csv_lines = ["provider,k,seed,macro_auc,log_odds"]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        all_y: list[float] = []
        for label in sorted(rows):
            points, means = rows[label]
            for k, seed, auc, lo in points:
                csv_lines.append(f"{label},{k},{seed},{auc:.6f},{lo:.6f}")
            for k, mean_auc, lo in means:
                csv_lines.append(f"{label},{k},mean,{mean_auc:.6f},{lo:.6f}")
            xs = [p[0] for p in points]
            ys = [p[3] for p in points]
            all_y.extend(ys)
            scatter = ax.scatter(xs, ys, s=12, alpha=0.5)
            color = scatter.get_facecolor()[0]
            ax.plot(
                [m[0] for m in means],
                [m[2] for m in means],
                marker="o",
                color=color,
                label=label,
            )
        ax.set_xscale("log", base=2)
        ks = sorted({p[0] for pts, _ in rows.values() for p in pts})
        ax.set_xticks(ks)
        ax.set_xticklabels([str(k) for k in ks])
        positions, labels = _log_odds_ticks(min(all_y), max(all_y))
        if len(positions) >= 2:
            ax.set_yticks(positions)
            ax.set_yticklabels(labels)
        ax.set_xlabel("training examples per class")
        ax.set_ylabel("macro ROC-AUC (log-odds scale)")
        ax.set_title(dataset)
        ax.legend()
        fig.tight_layout()
        svg_path = out_dir / f"shots-curve-{dataset}.svg"
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        csv_path = out_dir / f"shots-curve-{dataset}.csv"
        csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        written.extend([svg_path, csv_path])
    return written
