"""Plot data: success rate against environment steps, one table per method."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .harness import read_metrics

RENDER_STUB = '''"""Render the success-rate tables in this directory (needs matplotlib)."""
import glob
import os

import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots(figsize=(6, 4))
for path in sorted(glob.glob(os.path.join(here, "*.tsv"))):
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    label = os.path.splitext(os.path.basename(path))[0]
    ax.plot(data[:, 0], data[:, 1], label=label)
    ax.fill_between(data[:, 0], data[:, 1] - data[:, 2], data[:, 1] + data[:, 2], alpha=0.3)
ax.set_xlabel("environment steps")
ax.set_ylabel("success rate")
ax.set_ylim(0, 1)
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "success.png"), dpi=150)
'''


def find_metrics(run_dirs) -> list[Path]:
    """All ``metrics.jsonl`` files below the given directories."""
    found = []
    for d in run_dirs:
        d = Path(d)
        if d.is_file() and d.name == "metrics.jsonl":
            found.append(d)
            continue
        if not d.is_dir():
            raise FileNotFoundError(f"run directory {d} does not exist")
        hits = sorted(d.rglob("metrics.jsonl"))
        if not hits:
            raise FileNotFoundError(f"no metrics.jsonl under {d}")
        found.extend(hits)
    return found


def band(per_agent) -> tuple[float, float]:
    """Mean over agents and the half-width ``std(per-agent means) / sqrt(A)``."""
    x = np.asarray(per_agent, dtype=float)
    A = len(x)
    std = float(np.std(x, ddof=1)) if A > 1 else 0.0
    return float(x.mean()), float(std / np.sqrt(A))


def collect_series(run_dirs) -> dict:
    """``{(method, env): {step: [per-agent success rates]}}``."""
    series = defaultdict(lambda: defaultdict(list))
    for path in find_metrics(run_dirs):
        records = read_metrics(path)
        if not records or records[0].get("type") != "header":
            raise ValueError(f"{path} has no header record")
        head = records[0]
        key = (head["method"], head["env"])
        for rec in records[1:]:
            if rec.get("type") == "eval":
                series[key][rec["step"]].append(rec["success_rate"])
    if not any(series.values()):
        raise ValueError("runs contain no evaluation records")
    return series


def emit_plots(run_dirs, out) -> list[Path]:
    """Write ``<method>_<env>.tsv`` (step, mean, halfwidth, agents) and ``render.py``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (method, env), by_step in sorted(collect_series(run_dirs).items()):
        path = out / f"{method}_{env}.tsv"
        lines = ["step\tmean\thalfwidth\tagents"]
        for step in sorted(by_step):
            mean, half = band(by_step[step])
            lines.append(f"{step}\t{mean!r}\t{half!r}\t{len(by_step[step])}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    stub = out / "render.py"
    stub.write_text(RENDER_STUB)
    written.append(stub)
    return written
