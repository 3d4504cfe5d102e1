"""Figure rendering for sweep results.

Each sweep kind maps to one matplotlib figure written next to its CSV:
fidelity-vs-budget curves, the best-fidelity noise grid, and the Hellinger
distance curves of the mitigation study.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SCHEME_COLORS = {"naimark": "tab:red", "binary": "tab:blue", "hybrid": "0.35"}


def _scheme_rows(rows, scheme):
    return [r for r in rows if r["scheme"] == scheme]


def render_fidelity(result, path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    schemes = sorted({r["scheme"] for r in result.rows})
    for scheme in schemes:
        rows = sorted(_scheme_rows(result.rows, scheme), key=lambda r: r["budget"])
        x = [r["budget"] for r in rows]
        color = SCHEME_COLORS.get(scheme, None)
        ax.errorbar(x, [r["fidelity"] for r in rows],
                    yerr=[r.get("std", 0.0) for r in rows],
                    marker="o", ms=3.5, lw=1.2, capsize=2, label=scheme,
                    color=color)
        if rows and rows[0].get("ideal_fidelity") not in (None, ""):
            ax.plot(x, [r["ideal_fidelity"] for r in rows], ls="--", lw=1.0,
                    color=color, alpha=0.6)
    baseline = 1.0 / 2**result.config.n_qubits
    ax.axhline(baseline, color="k", lw=0.8, ls=":", label="random outcomes")
    ax.set_xlabel("CNOT depth")
    ax.set_ylabel("POVM fidelity")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def render_noise_grid(result, path) -> None:
    idles = sorted({r["eps_idle"] for r in result.rows})
    fig, axes = plt.subplots(1, len(idles), figsize=(3.4 * len(idles), 3.2),
                             sharey=True, squeeze=False)
    for ax, eps_idle in zip(axes[0], idles):
        for scheme in sorted({r["scheme"] for r in result.rows}):
            rows = [r for r in result.rows
                    if r["scheme"] == scheme and r["eps_idle"] == eps_idle]
            rows.sort(key=lambda r: r["eps_cnot"])
            ax.plot([r["eps_cnot"] for r in rows], [r["fidelity"] for r in rows],
                    marker="o", ms=3.5, lw=1.2, label=scheme,
                    color=SCHEME_COLORS.get(scheme, None))
        ax.set_title(f"idle error {eps_idle:g}", fontsize=9)
        ax.set_xlabel("CNOT error rate")
    axes[0][0].set_ylabel("best POVM fidelity")
    axes[0][0].legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def render_crem(result, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    eps_values = sorted({r["eps"] for r in result.rows})
    for i, eps in enumerate(eps_values):
        rows = sorted((r for r in result.rows if r["eps"] == eps),
                      key=lambda r: r["eps_qnd"])
        x = [r["eps_qnd"] for r in rows]
        alpha = 0.45 + 0.55 * (i + 1) / len(eps_values)
        ax.plot(x, [r["hellinger_mitigated"] for r in rows], color="tab:blue",
                marker="o", ms=3.5, lw=1.2, alpha=alpha,
                label=f"mitigated, flip rate {eps:g}")
        ax.plot(x, [r["hellinger_unmitigated"] for r in rows], color="tab:red",
                marker="s", ms=3.5, lw=1.2, alpha=alpha,
                label=f"unmitigated, flip rate {eps:g}")
    ax.set_xlabel("post-measurement flip rate")
    ax.set_ylabel("Hellinger distance to ideal")
    ax.legend(fontsize=7, frameon=False, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def render(result, path) -> None:
    {"fidelity": render_fidelity,
     "noise-grid": render_noise_grid,
     "crem-study": render_crem}[result.kind](result, path)
