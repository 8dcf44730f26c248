"""Static figures for attack/defense reports (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 3.6),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
}


def accuracy_bars(rows: list[dict], path) -> Path:
    """Grouped bars per (target, attack): original, after-attack and each defense.

    ``rows`` are report dicts keyed by the report CSV columns.
    """
    path = Path(path)
    pairs = list(dict.fromkeys((r["target_domain"], r["attack_domain"]) for r in rows))
    defenses = list(dict.fromkeys(r["defense"] for r in rows if r["defense"]))
    series = ["original", "after-attack"] + defenses
    vals = np.full((len(series), len(pairs)), np.nan)
    for r in rows:
        j = pairs.index((r["target_domain"], r["attack_domain"]))
        vals[0, j] = float(r["original_acc"])
        vals[1, j] = float(r["after_attack_acc"])
        if r["defense"]:
            vals[2 + defenses.index(r["defense"]), j] = float(r["after_defense_acc"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        width = 0.8 / len(series)
        x = np.arange(len(pairs))
        for s, name in enumerate(series):
            ax.bar(x + (s - (len(series) - 1) / 2) * width, vals[s], width, label=name)
        ax.set_xticks(x, [f"{t}\n<- {a}" for t, a in pairs])
        ax.set_ylim(0, 1)
        ax.set_ylabel("target accuracy")
        ax.axhline(0.5, color="0.6", lw=0.6, ls=":")
        ax.legend(ncol=min(len(series), 3), fontsize=7, loc="upper right")
        fig.tight_layout()
        tmp = path.with_name(path.stem + ".tmp" + path.suffix)
        fig.savefig(tmp, metadata={"Software": None})
        plt.close(fig)
    tmp.replace(path)
    return path
