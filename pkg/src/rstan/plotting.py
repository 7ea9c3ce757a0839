"""Static SVG learning curves from a metric CSV."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from .errors import ContractError
from .metrics import METRIC_COLUMNS, read_metric_rows


def plot_metrics(csv_path, out_dir) -> list[Path]:
    """One SVG per metric; one line per (run, stage, split, fold)."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    rows = read_metric_rows(csv_path)
    if rows and set(rows[0]) != set(METRIC_COLUMNS):
        raise ContractError(f"{csv_path}: columns {sorted(rows[0])} differ from {list(METRIC_COLUMNS)}")
    series = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["stage"] == "final":
            continue
        key = f"{r['run_id']} {r['stage']} {r['split']} fold{r['fold']}"
        series[r["metric"]][key].append((int(r["epoch"]), float(r["value"])))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, lines in sorted(series.items()):
        fig, ax = plt.subplots(figsize=(6, 4))
        for key, pts in sorted(lines.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=key, linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric)
        if len(lines) <= 8:
            ax.legend(fontsize=6)
        fig.tight_layout()
        path = out_dir / f"{metric}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths
