"""Static figures for the report-producing command paths.

Every function renders one PNG next to the delimited output, using the Agg
backend so runs work headless. PNG metadata is pinned so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

PNG_META = {"Software": "couponmdp"}
DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata=PNG_META)
    plt.close(fig)


def save_value_figure(path, rows, chain):
    """All table states as dots over their horizon, root aging chain as a line.

    rows: (key, horizon, value) triples; chain: values of [C, f(C), ...].
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.scatter([r[1] for r in rows], [r[2] for r in rows],
               s=14, alpha=0.45, label="reachable states", zorder=2)
    steps = list(range(len(chain)))[::-1]   # chain ages forward, horizon shrinks
    ax.plot(steps, chain, "-o", color="C3", ms=4, lw=1.4,
            label="initial wallet as it ages", zorder=3)
    ax.set_xlabel("horizon (days)")
    ax.set_ylabel("portfolio value")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def save_bounds_figure(path, chain_steps, lower_chain, upper_chain, deltas):
    """Left: bound envelope along the aging chain. Right: per-group option value.

    deltas: {label: (lower_series, upper_series)} keyed by group label.
    """
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.5, 4.2))
    ax1.fill_between(chain_steps, lower_chain, upper_chain, alpha=0.25, color="C0")
    ax1.plot(chain_steps, upper_chain, "-", color="C0", lw=1.4, label="upper")
    ax1.plot(chain_steps, lower_chain, "--", color="C0", lw=1.4, label="lower")
    ax1.set_xlabel("days elapsed")
    ax1.set_ylabel("portfolio value")
    ax1.set_title("bound envelope", fontsize=10)
    ax1.legend(frameon=False, fontsize=9)

    for i, (label, (lo, up)) in enumerate(sorted(deltas.items())):
        xs = list(range(1, len(lo) + 1))
        ax2.plot(xs, up, "-", color=f"C{i}", lw=1.3, label=f"{label} upper")
        ax2.plot(xs, lo, "--", color=f"C{i}", lw=1.3, label=f"{label} lower")
    ax2.set_xlabel("days elapsed")
    ax2.set_ylabel("option value of one coupon")
    ax2.set_title("per-group holding value", fontsize=10)
    ax2.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_curve_figure(path, axis, rows):
    """Redemption ratio per bin, with the bin counts as faint bars behind."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    xs = [r.bin for r in rows]
    ax.plot(xs, [r.ratio for r in rows], "-o", ms=4, lw=1.4, color="C0",
            zorder=3)
    ax.set_ylabel("redemption ratio")
    ax.set_ylim(-0.02, 1.05)
    label = ("fare / face value (right bin edge)"
             if axis == "fare_value_ratio" else "coupons in wallet")
    ax.set_xlabel(label)
    twin = ax.twinx()
    width = 0.16 if axis == "fare_value_ratio" else 0.6
    twin.bar(xs, [r.count for r in rows], width=width, alpha=0.18,
             color="C7", zorder=1)
    twin.set_ylabel("records", color="C7")
    fig.tight_layout()
    _save(fig, path)


def save_history_figure(path, history, best_epoch):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    xs = list(range(1, len(history) + 1))
    ax.plot(xs, history, "-", lw=1.4, color="C0")
    if 1 <= best_epoch <= len(history):
        ax.plot([best_epoch], [history[best_epoch - 1]], "o", ms=7,
                color="C3", label=f"best epoch {best_epoch}")
        ax.legend(frameon=False, fontsize=9)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean log-likelihood")
    fig.tight_layout()
    _save(fig, path)
