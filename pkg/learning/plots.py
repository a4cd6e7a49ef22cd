"""
SVG line charts of a run's metric stream.
"""
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from learning.metrics import RunRecord  # noqa: E402

PLOT_FILES = ("return.svg", "reward_mse.svg", "behavioral_error.svg")


def _per_agent(ax, episodes: list[int], series: list[tuple[float, ...]], label: str) -> None:
    for i in range(len(series[0])):
        ax.plot(episodes, [values[i] for values in series], label=f"{label} agent {i}")


def plot_run(records: Sequence[RunRecord], out_dir: str, title: str = "") -> list[str]:
    """Return, reward MSE and behavioural error against training episodes.

    Panels without data (no reward models, no expert policy) carry a note
    instead of curves. Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    episodes = [record.episode for record in records]
    paths = [os.path.join(out_dir, name) for name in PLOT_FILES]

    fig, ax = plt.subplots(figsize=(7, 5))
    if records:
        ax.plot(episodes, [r.total_return for r in records], label="total")
        _per_agent(ax, episodes, [r.returns for r in records], "return")
        ax.legend(loc="best")
    ax.set_xlabel("episode")
    ax.set_ylabel("average return")
    ax.set_title(title or "Average return")
    plt.tight_layout()
    plt.savefig(paths[0], format="svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 5))
    mse = [r.reward_mse for r in records if r.reward_mse is not None]
    if mse:
        _per_agent(ax, [r.episode for r in records if r.reward_mse is not None], mse, "mse")
        ax.legend(loc="best")
    else:
        ax.text(0.5, 0.5, "no reward models", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("episode")
    ax.set_ylabel("reward MSE")
    ax.set_title(title or "Reward recovery")
    plt.tight_layout()
    plt.savefig(paths[1], format="svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 5))
    if records:
        _per_agent(ax, episodes, [r.nll for r in records], "expert NLL")
        with_tv = [r for r in records if r.tv is not None]
        if with_tv:
            _per_agent(ax, [r.episode for r in with_tv], [r.tv for r in with_tv], "TV")
        ax.legend(loc="best")
    ax.set_xlabel("episode")
    ax.set_ylabel("behavioural error (NLL / TV)")
    ax.set_title(title or "Behavioural error")
    plt.tight_layout()
    plt.savefig(paths[2], format="svg")
    plt.close(fig)
    return paths
