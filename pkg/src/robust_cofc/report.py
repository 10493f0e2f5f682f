"""CSV, text-table and figure writers.

Every CSV starts with a ``# config_sha256=... version=...`` comment line so an
artifact can always be traced back to the run that produced it. Floats are
written with ``repr`` so reruns compare byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .crl.evaluate import CONDITIONS, Summary
from .crl.trainer import HISTORY_COLUMNS, history_rows

EVAL_COLUMNS = (
    "method", "condition", "reward_mean", "reward_std", "cost_mean", "cost_std", "n_episodes", "diverged",
)
VERIFY_COLUMNS = ("check", "instances", "min_margin", "passed", "detail")


def provenance_line(digest: str) -> str:
    return f"# config_sha256={digest} version={__version__}\n"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns, rows, digest: str) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(provenance_line(digest))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Returns ``(provenance, rows)`` where rows are dicts of strings."""
    lines = Path(path).read_text().splitlines()
    prov = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].split():
            key, _, value = item.partition("=")
            prov[key] = value
        lines = lines[1:]
    return prov, list(csv.DictReader(lines))


def write_history(path, history, digest: str) -> Path:
    return write_csv(path, HISTORY_COLUMNS, history_rows(history), digest)


@dataclass
class EvalRow:
    method: str
    condition: str
    summary: Summary
    diverged: bool = False

    def as_tuple(self):
        s = self.summary
        return (self.method, self.condition, s.reward_mean, s.reward_std, s.cost_mean, s.cost_std, s.n, self.diverged)


def write_eval(path, rows: list[EvalRow], digest: str) -> Path:
    return write_csv(path, EVAL_COLUMNS, [r.as_tuple() for r in rows], digest)


def write_summary(path, rows: list[EvalRow], digest: str) -> Path:
    """JSON keyed by ``"method|condition"``."""
    out = {
        "config_sha256": digest,
        "version": __version__,
        "results": {
            f"{r.method}|{r.condition}": {
                "reward_mean": r.summary.reward_mean, "reward_std": r.summary.reward_std,
                "cost_mean": r.summary.cost_mean, "cost_std": r.summary.cost_std,
                "n_episodes": r.summary.n, "diverged": r.diverged,
            }
            for r in rows
        },
    }
    path = Path(path)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return path


def format_table(rows: list[EvalRow], per_block: int = 3) -> str:
    """Methods down the side, conditions across, each cell split into reward and cost.

    Conditions are laid out in blocks of ``per_block`` to keep lines readable.
    """
    methods = list(dict.fromkeys(r.method for r in rows))
    conds = [c for c in CONDITIONS if any(r.condition == c for r in rows)]
    cell = {(r.method, r.condition): r for r in rows}

    def pm(mean, std):
        return f"{mean:.2f}±{std:.2f}"

    blocks = []
    for start in range(0, len(conds), per_block):
        block = conds[start : start + per_block]
        names = [c.capitalize() if c in ("natural", "uniform") else c.upper() for c in block]
        head1 = ["", *[h for name in names for h in (name, "")]]
        head2 = ["Method", *["Reward", "Cost"] * len(block)]
        body = []
        for m in methods:
            line = [m + (" *" if any(cell.get((m, c)) and cell[(m, c)].diverged for c in block) else "")]
            for c in block:
                r = cell.get((m, c))
                if r is None:
                    line += ["-", "-"]
                else:
                    line += [pm(r.summary.reward_mean, r.summary.reward_std), pm(r.summary.cost_mean, r.summary.cost_std)]
            body.append(line)
        table = [head1, head2, *body]
        widths = [max(len(row[i]) for row in table) for i in range(len(head2))]
        text = []
        for k, row in enumerate(table):
            text.append("  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(row)).rstrip())
            if k == 1:
                text.append("-" * len(text[-1]))
        blocks.append("\n".join(text))
    out = "\n\n".join(blocks)
    if any(r.diverged for r in rows):
        out += "\n\n* training diverged (final reward below 3x the baseline magnitude)"
    return out + "\n"


def write_verify(path_csv, reports, digest: str) -> Path:
    rows = [(r.check, r.seeds, r.min_margin, r.passed, r.detail) for r in reports]
    return write_csv(path_csv, VERIFY_COLUMNS, rows, digest)


def format_verify(reports) -> str:
    lines = [f"{'check':<24}{'instances':>10}{'min margin':>16}  result"]
    for r in reports:
        lines.append(f"{r.check:<24}{r.seeds:>10}{r.min_margin:>16.6g}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


# -- figures ---------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    # fixed metadata keeps the PNG bytes stable across reruns
    fig.savefig(path, dpi=100, metadata={"Software": None})


def plot_history(path, history, title: str = "") -> Path:
    plt = _pyplot()
    ep = [h.epoch for h in history]
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    axes[0].plot(ep, [h.reward for h in history])
    axes[0].set_ylabel("episode reward")
    axes[1].plot(ep, [h.cost for h in history], color="tab:red")
    axes[1].set_ylabel("episode cost")
    axes[2].plot(ep, [h.lam for h in history], color="tab:green", label="lambda")
    ax2 = axes[2].twinx()
    ax2.plot(ep, [h.epsilon for h in history], color="tab:gray", linestyle="--", label="epsilon")
    axes[2].set_ylabel("lambda")
    ax2.set_ylabel("epsilon")
    axes[2].set_xlabel("epoch")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return Path(path)


def plot_eval(path, rows: list[EvalRow]) -> Path:
    plt = _pyplot()
    methods = list(dict.fromkeys(r.method for r in rows))
    conds = [c for c in CONDITIONS if any(r.condition == c for r in rows)]
    cell = {(r.method, r.condition): r.summary for r in rows}
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(conds))
    for k, m in enumerate(methods):
        for ax, attr in zip(axes, ("reward", "cost")):
            mean = [getattr(cell[(m, c)], f"{attr}_mean") if (m, c) in cell else np.nan for c in conds]
            std = [getattr(cell[(m, c)], f"{attr}_std") if (m, c) in cell else 0.0 for c in conds]
            ax.bar(x + k * width, mean, width, yerr=std, label=m, capsize=2)
    for ax, name in zip(axes, ("reward", "cost")):
        ax.set_xticks(x + 0.4 - width / 2, conds)
        ax.set_ylabel(f"episode {name}")
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return Path(path)


def plot_verify(path, reports) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3))
    names = [r.check for r in reports]
    margins = [r.min_margin for r in reports]
    colors = ["tab:green" if r.passed else "tab:red" for r in reports]
    ax.barh(names, margins, color=colors)
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_xlabel("minimum margin (>= 0 means the bound holds)")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return Path(path)
