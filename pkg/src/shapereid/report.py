"""Human-readable result tables and plain-text dumps."""
from __future__ import annotations

from pathlib import Path

from .ablation import AblationRow
from .evaluator import EvalResult

_COLUMNS = ("Rank-1", "Rank-10", "Rank-20", "mAP", "mINP")


def _metric_cells(result: EvalResult) -> list[str]:
    def rank(k):
        return result.cmc[min(k, len(result.cmc)) - 1]
    vals = (rank(1), rank(10), rank(20), result.mean_ap, result.mean_inp)
    return [f"{100 * v:7.2f}" for v in vals]


def metric_table(rows: list[tuple[str, EvalResult]]) -> str:
    """Fixed-column table of retrieval metrics, in percent."""
    if not rows:
        raise ValueError("no results to report")
    width = max(len(label) for label, _ in rows)
    width = max(width, len("protocol"))
    header = f"{'protocol':<{width}} " + " ".join(f"{c:>7}" for c in _COLUMNS)
    lines = [header]
    for label, result in rows:
        lines.append(f"{label:<{width}} " + " ".join(_metric_cells(result)))
    return "\n".join(lines)


def ablation_table(stats: dict[str, dict[str, float]]) -> str:
    if not stats:
        raise ValueError("no ablation rows to report")
    lines = [f"{'setting':<8} {'seeds':>5} {'Rank-1':>15} {'mAP':>15} {'mINP':>15}"]
    for setting, s in stats.items():
        cells = [f"{100 * s[m + '_mean']:6.2f} ± {100 * s[m + '_sd']:5.2f}"
                 for m in ("rank1", "map", "minp")]
        lines.append(f"{setting:<8} {s['seeds']:>5} " +
                     " ".join(f"{c:>15}" for c in cells))
    return "\n".join(lines)


def ablation_rows_text(rows: list[AblationRow]) -> str:
    lines = ["setting\tseed\trank1\tmap\tminp"]
    for r in rows:
        lines.append(f"{r.setting}\t{r.seed}\t{r.rank1!r}\t{r.mean_ap!r}"
                     f"\t{r.mean_inp!r}")
    return "\n".join(lines) + "\n"


def write_result(result: EvalResult, path: Path | str,
                 config_text: str | None = None) -> None:
    """Structured dump; round-trips through EvalResult.from_text exactly."""
    with open(path, "w") as fh:
        if config_text:
            for line in config_text.splitlines():
                fh.write(f"# {line}\n")
        fh.write(result.to_text())


def plot_cmc(results: list[tuple[str, EvalResult]], path: Path | str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, result in results:
        ranks = range(1, len(result.cmc) + 1)
        ax.plot(ranks, result.cmc, marker="o", markersize=3, label=label)
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
