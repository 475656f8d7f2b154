"""Report figures. Every image is rendered from its CSV alone, so plots can be rebuilt offline."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

ATTACK_KINDS = ("discriminator", "generator")
FIGURES = ("hist_discriminator", "hist_generator", "roc_discriminator", "roc_generator",
           "fidelity_vs_step", "privacy_utility_vs_step", "privacy_vs_utility")

_PNG_META = {"Software": None}


class ReportSectionError(ValueError):
    def __init__(self, section: str):
        super().__init__(f"report is missing section {section!r}")
        self.section = section


def _r(x) -> str:
    return repr(float(x))


def _write(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read(path: Path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: [r[i] for r in body] for i, h in enumerate(header)}


def _floats(values) -> np.ndarray:
    return np.array([float(v) for v in values], dtype=np.float64)


def write_figure_data(report, out_dir) -> list[str]:
    """Write the seven data tables behind the figures; returns their file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ATTACK_KINDS:
        if kind not in report.attacks:
            raise ReportSectionError(f"{kind}_attack")
    if not report.points or not all(report.points):
        raise ReportSectionError("points")

    for kind in ATTACK_KINDS:
        res = report.attacks[kind]
        _write(out / f"hist_{kind}.csv", ("id", "score", "member"),
               ((i, _r(s), str(int(m))) for i, s, m in zip(res.ids, res.scores, res.members)))
        roc = res.roc
        _write(out / f"roc_{kind}.csv", ("fpr", "tpr"),
               ((_r(f), _r(t)) for f, t in zip(roc.fpr, roc.tpr)))

    steps = [p.step for p in report.points[0]]
    for seq in report.points[1:]:
        if [p.step for p in seq] != steps:
            raise ValueError("repeats disagree on checkpoint steps")

    def stats(getter):
        vals = np.array([[getter(seq[k]) for seq in report.points] for k in range(len(steps))],
                        dtype=np.float64)
        sd = vals.std(axis=1, ddof=1) if vals.shape[1] > 1 else np.zeros(len(steps))
        return vals.mean(axis=1), sd

    nan = float("nan")
    acc_m, acc_s = stats(lambda p: nan if p.fidelity is None else p.fidelity.correlation_accuracy)
    mse_m, mse_s = stats(lambda p: nan if p.fidelity is None else p.fidelity.correlation_mse)
    priv_m, priv_s = stats(lambda p: p.privacy)
    util_m, util_s = stats(lambda p: p.utility)
    _write(out / "fidelity_vs_step.csv",
           ("step", "accuracy_mean", "accuracy_sd", "mse_mean", "mse_sd"),
           ((str(s), _r(a), _r(b), _r(c), _r(d)) for s, a, b, c, d in zip(steps, acc_m, acc_s, mse_m, mse_s)))
    _write(out / "privacy_utility_vs_step.csv",
           ("step", "privacy_mean", "privacy_sd", "utility_mean", "utility_sd"),
           ((str(s), _r(a), _r(b), _r(c), _r(d)) for s, a, b, c, d in zip(steps, priv_m, priv_s, util_m, util_s)))
    _write(out / "privacy_vs_utility.csv", ("step", "utility", "privacy"),
           ((str(s), _r(u), _r(p)) for s, u, p in zip(steps, util_m, priv_m)))
    return [f"{name}.csv" for name in FIGURES]


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt, plt.subplots(figsize=(5, 4), dpi=100)


def _save(plt, fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def _hist(data, kind, path):
    plt, (fig, ax) = _figure()
    scores = _floats(data["score"])
    member = np.array([v == "1" for v in data["member"]])
    lo, hi = (scores.min(), scores.max()) if scores.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    bins = np.linspace(lo, hi, 21)
    ax.hist(scores[member], bins=bins, alpha=0.6, label="member")
    ax.hist(scores[~member], bins=bins, alpha=0.6, label="non-member")
    ax.set_xlabel(f"{kind} attack score")
    ax.set_ylabel("count")
    ax.legend()
    _save(plt, fig, path)


def _roc(data, kind, path):
    plt, (fig, ax) = _figure()
    ax.plot(_floats(data["fpr"]), _floats(data["tpr"]), drawstyle="default")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"{kind} attack ROC")
    _save(plt, fig, path)


def _fidelity(data, path):
    plt, (fig, ax) = _figure()
    step = _floats(data["step"])
    acc, acc_sd = _floats(data["accuracy_mean"]), _floats(data["accuracy_sd"])
    mse, mse_sd = _floats(data["mse_mean"]), _floats(data["mse_sd"])
    ax.errorbar(step, acc, yerr=acc_sd, color="tab:blue", marker="o")
    ax.set_xlabel("training step")
    ax.set_ylabel("correlation accuracy", color="tab:blue")
    ax2 = ax.twinx()
    ax2.errorbar(step, mse, yerr=mse_sd, color="tab:red", marker="s")
    ax2.set_ylabel("correlation MSE", color="tab:red")
    _save(plt, fig, path)


def _privacy_utility_step(data, path):
    plt, (fig, ax) = _figure()
    step = _floats(data["step"])
    ax.errorbar(step, _floats(data["privacy_mean"]), yerr=_floats(data["privacy_sd"]),
                marker="o", label="privacy")
    ax.errorbar(step, _floats(data["utility_mean"]), yerr=_floats(data["utility_sd"]),
                marker="s", label="utility")
    ax.set_xlabel("training step")
    ax.legend()
    _save(plt, fig, path)


def _privacy_vs_utility(data, path):
    plt, (fig, ax) = _figure()
    ax.plot(_floats(data["utility"]), _floats(data["privacy"]), marker="o")
    ax.set_xlabel("utility")
    ax.set_ylabel("privacy protection")
    _save(plt, fig, path)


def plot_from_data(out_dir) -> list[str]:
    """Render the seven PNGs from the CSV tables already in ``out_dir``."""
    out = Path(out_dir)
    for name in FIGURES:
        if not (out / f"{name}.csv").exists():
            raise FileNotFoundError(f"missing figure data {out / (name + '.csv')}")
    for kind in ATTACK_KINDS:
        _hist(_read(out / f"hist_{kind}.csv"), kind, out / f"hist_{kind}.png")
        _roc(_read(out / f"roc_{kind}.csv"), kind, out / f"roc_{kind}.png")
    _fidelity(_read(out / "fidelity_vs_step.csv"), out / "fidelity_vs_step.png")
    _privacy_utility_step(_read(out / "privacy_utility_vs_step.csv"), out / "privacy_utility_vs_step.png")
    _privacy_vs_utility(_read(out / "privacy_vs_utility.csv"), out / "privacy_vs_utility.png")
    return [f"{name}.png" for name in FIGURES]


def emit_figures(report, out_dir) -> list[str]:
    """Write figure data then render from it; returns the file manifest."""
    data = write_figure_data(report, out_dir)
    images = plot_from_data(out_dir)
    return images + data
