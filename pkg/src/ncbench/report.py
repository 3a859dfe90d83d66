"""Figure rendering for episode logs. PNG files land next to the CSV export;
the CSV stays the machine-readable contract, figures are for eyeballs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_episode(log, metrics, path: str) -> str:
    """Three stacked panels: tracking, control effort, tracking error."""
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    if len(log):
        k = log.column("k")
        axes[0].plot(k, log.column("r"), drawstyle="steps-post", color="0.4",
                     linestyle="--", label="setpoint")
        if "r_prime" in log.columns:
            axes[0].plot(k, log.column("r_prime"), color="tab:green", linewidth=1,
                         label="reference trajectory")
        axes[0].plot(k, log.column("y"), color="tab:blue", label="output")
        axes[1].plot(k, log.column("u"), color="tab:red", linewidth=1)
        axes[2].plot(k, log.column("e"), color="tab:purple", linewidth=1)
        axes[2].axhline(0.0, color="0.8", linewidth=0.5)
        axes[0].legend(loc="best", fontsize=8)
    axes[0].set_ylabel("r, y")
    axes[1].set_ylabel("u")
    axes[2].set_ylabel("e")
    axes[2].set_xlabel("tick")
    status = "diverged" if metrics.diverged else f"IAE {metrics.iae:.4g}"
    axes[0].set_title(status, fontsize=10)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_compare(results, path: str) -> str:
    """Overlayed outputs of several schemes plus a bar chart of their IAE.

    ``results`` is a list of (scheme_name, log, metrics) triples on the same
    plant and schedule.
    """
    fig, (ax_y, ax_bar) = plt.subplots(2, 1, figsize=(8, 7),
                                       gridspec_kw={"height_ratios": [2, 1]})
    plotted_setpoint = False
    for name, log, metrics in results:
        if not len(log):
            continue
        k = log.column("k")
        if not plotted_setpoint:
            ax_y.plot(k, log.column("r"), drawstyle="steps-post", color="0.4",
                      linestyle="--", label="setpoint")
            plotted_setpoint = True
        label = f"{name} (diverged)" if metrics.diverged else name
        ax_y.plot(k, log.column("y"), linewidth=1, label=label)
    ax_y.set_xlabel("tick")
    ax_y.set_ylabel("output")
    ax_y.grid(True, alpha=0.3)
    ax_y.legend(loc="best", fontsize=8)

    names = [name for name, _, _ in results]
    values = [m.iae for _, _, m in results]
    ax_bar.bar(range(len(names)), values, color="tab:blue")
    ax_bar.set_xticks(range(len(names)))
    ax_bar.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax_bar.set_ylabel("IAE")
    ax_bar.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
