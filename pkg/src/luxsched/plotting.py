"""Figures written next to the CSV/JSON reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 3.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}

METHOD_STYLE = {
    "oracle": dict(color="black", lw=1.8, label="oracle"),
    "ilc": dict(color="tab:orange", lw=1.4, ls="--", label="policy"),
    "fixed_0": dict(color="tab:blue", lw=1.0, alpha=0.7, label="0%"),
    "fixed_100": dict(color="tab:red", lw=1.0, alpha=0.7, label="100%"),
}


def plot_intensity_traces(traces, path, title=None, tracked=None):
    """Per-frame light intensity of each method; ``tracked`` marks where tracking stopped."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, levels in traces.items():
            style = METHOD_STYLE.get(name, dict(label=name))
            ax.step(np.arange(len(levels)), 100.0 * np.asarray(levels), where="post", **style)
            if tracked and name in tracked and tracked[name] < len(levels):
                ax.axvline(tracked[name], color=style.get("color", "gray"), lw=0.8, ls=":")
        ax.set_xlabel("frame")
        ax.set_ylabel("light intensity (%)")
        ax.set_ylim(-5, 105)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", ncol=len(traces))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_schedule(levels, path, unary=None, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.arange(len(levels))
        ax.step(t, 100.0 * np.asarray(levels), where="post", color="black", lw=1.6)
        ax.set_xlabel("frame")
        ax.set_ylabel("light intensity (%)")
        ax.set_ylim(-5, 105)
        if unary is not None:
            twin = ax.twinx()
            twin.plot(t, unary, color="tab:green", lw=0.8, alpha=0.7)
            twin.set_ylabel("unary cost", color="tab:green")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_grid_search(results, path):
    """WRMSE of every weight triple, best first."""
    results = sorted(results, key=lambda r: r["wrmse"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [f"{r['lambda_d']:g}/{r['lambda_m']:g}/{r['lambda_s']:g}" for r in results]
        values = [min(r["wrmse"], 1e3) for r in results]
        ax.bar(np.arange(len(values)), values, color="tab:gray")
        ax.set_xticks(np.arange(len(values)))
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
        ax.set_ylabel("WRMSE")
        ax.set_yscale("log")
        ax.set_xlabel("lambda_d / lambda_m / lambda_s")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
