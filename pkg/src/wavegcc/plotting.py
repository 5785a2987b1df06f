"""Plot scripts for experiment outputs.

Every run writes a standalone ``plot.py`` next to its CSVs (it needs only
matplotlib, not this package).  ``render`` executes that same script so the
figures on disk are exactly what the script produces; matplotlib is imported
only here and only when figures are requested.
"""

from __future__ import annotations

import pprint
import runpy
from pathlib import Path

_TEMPLATE = '''"""Figures for the {experiment!s} experiment, drawn from the CSVs in this directory.

Usage: python plot.py   (writes PNG files next to this script)
"""
import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
PLOTS = {plots}


def num(v):
    try:
        return float(v)
    except ValueError:
        return math.nan


def read(name):
    with open(os.path.join(HERE, name), newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def draw(spec):
    rows = read(spec["csv"])
    x = [num(r[spec["x"]]) for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for col in spec["y"]:
        y = [num(r[col]) for r in rows]
        if spec.get("style") == "scatter":
            ax.scatter(x, y, s=14, label=col)
        else:
            ax.plot(x, y, marker="o", ms=3, label=col)
    if spec.get("logx"):
        ax.set_xscale("log")
    if spec.get("logy"):
        ax.set_yscale("log")
    ax.set_xlabel(spec["x"])
    ax.set_title(spec.get("title", ""))
    if len(spec["y"]) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, spec["png"]), dpi=120)
    plt.close(fig)
    return spec["png"]


def main():
    return [draw(spec) for spec in PLOTS]


if __name__ == "__main__":
    main()
'''


def write_script(path, experiment, plots):
    """Write the plot script for ``plots`` (list of dict specs); returns its path."""
    path = Path(path)
    path.write_text(_TEMPLATE.format(experiment=experiment, plots=pprint.pformat(plots, width=100, sort_dicts=True)),
                    encoding="utf-8")
    return path


def render(script):
    """Run a script written by write_script; returns the PNG file names."""
    import matplotlib

    matplotlib.use("Agg")
    ns = runpy.run_path(str(script), run_name="wavegcc_plot")
    return ns["main"]()
