"""Deterministic SVG figures (EigenCell scatter, peak box plots)."""
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write  # noqa: E402

_RC = {"svg.hashsalt": "calsig", "svg.fonttype": "none", "path.simplify": False}
_COLORS = ("tab:blue", "tab:red", "tab:green", "tab:orange")


def _save(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def scatter_embedding(path, embedding, title=""):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        labels = sorted(set(embedding.labels))
        for c, lab in enumerate(labels):
            idx = [i for i, y in enumerate(embedding.labels) if y == lab]
            ax.scatter(
                embedding.coords[idx, 0],
                embedding.coords[idx, 1],
                s=18,
                color=_COLORS[c % len(_COLORS)],
                label=lab,
            )
        f1, f2 = embedding.variance_fractions
        ax.set_xlabel(f"EigenCell 1 ({100 * f1:.1f}%)")
        ax.set_ylabel(f"EigenCell 2 ({100 * f2:.1f}%)")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def box_by_group(path, groups, ylabel, title=""):
    """``groups`` maps label -> list of values."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        names = sorted(groups)
        ax.boxplot([groups[n] for n in names])
        ax.set_xticks(range(1, len(names) + 1), names)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
