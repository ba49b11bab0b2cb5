"""Condition summaries, robust regressions, and figure rendering for sweep results."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .experiment import METRIC_COLUMNS

CONDITION_KEYS = ("experiment_id", "topology_kind", "topology_param", "supervision_rate")


class SingularDesignError(ValueError):
    pass


class NoDataError(ValueError):
    pass


@dataclass
class ConditionSummary:
    key: tuple
    n: int
    mean: float
    half_width: float | None  # None when the CI is unavailable (n < 2)

    @property
    def ci(self) -> tuple[float, float] | None:
        if self.half_width is None:
            return None
        return self.mean - self.half_width, self.mean + self.half_width


def mean_ci(values: Sequence[float], level: float = 0.95) -> tuple[float, float | None]:
    """Mean and Student-t half-width; half-width is None for a single value."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise NoDataError("no values to summarize")
    mean = float(np.mean(x))
    if x.size < 2:
        return mean, None
    sd = float(np.std(x, ddof=1))
    t = float(stats.t.ppf(0.5 + level / 2, x.size - 1))
    return mean, t * sd / math.sqrt(x.size)


def aggregate_ci(rows: Iterable[dict[str, Any]], metric: str, keys: Sequence[str] = CONDITION_KEYS) -> list[ConditionSummary]:
    groups: dict[tuple, list[float]] = defaultdict(list)
    for row in rows:
        groups[tuple(row[k] for k in keys)].append(float(row[metric]))
    out = []
    for key in sorted(groups, key=_sort_key):
        mean, hw = mean_ci(groups[key])
        out.append(ConditionSummary(key, len(groups[key]), mean, hw))
    return out


def _sort_key(key: tuple) -> tuple:
    return tuple((0, v) if isinstance(v, (int, float)) else (1, str(v)) for v in key)


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    n: int
    residuals: np.ndarray

    def term(self, name: str) -> dict[str, float]:
        i = self.names.index(name)
        return {"coef": float(self.coef[i]), "se": float(self.se[i]), "t": float(self.t[i]), "p": float(self.p[i])}

    def as_dict(self) -> dict[str, Any]:
        return {"n": self.n, **{name: self.term(name) for name in self.names}}


def ols_robust(y, factor, supervision, factor_name: str = "factor") -> RegressionResult:
    """OLS of ``y`` on ``[1, factor, supervision]`` with HC1 standard errors.

    Solved by QR. P-values use the normal approximation.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.column_stack([np.ones_like(y), np.asarray(factor, float), np.asarray(supervision, float)])
    n, k = X.shape
    if n < 4:
        raise ValueError(f"need at least 4 observations, got {n}")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularDesignError("design matrix [1, factor, supervision] is rank deficient")
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    r_inv = np.linalg.solve(r, np.eye(k))
    bread = r_inv @ r_inv.T  # (X'X)^-1
    meat = (X * resid[:, None] ** 2).T @ X
    cov = bread @ meat @ bread * (n / (n - k))
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf * np.sign(coef)))
    p = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in t])
    return RegressionResult(["intercept", factor_name, "supervision"], coef, se, t, p, n, resid)


# regressions reported for each experiment: (factor column, responses)
REGRESSIONS = {
    "2": ("realized_avg_degree", ["speaking_consistency", "listening_consistency"]),
    "3": ("topology_param", ["signaling_divergence", "between_agent_divergence", "within_agent_divergence"]),
}


def regressions(rows: list[dict[str, Any]], experiment_id: str) -> dict[str, RegressionResult]:
    if experiment_id not in REGRESSIONS:
        return {}
    factor, responses = REGRESSIONS[experiment_id]
    sel = [r for r in rows if str(r["experiment_id"]) == experiment_id]
    if not sel:
        raise NoDataError(f"no rows for experiment {experiment_id}")
    x = [r[factor] for r in sel]
    s = [r["supervision_rate"] for r in sel]
    return {resp: ols_robust([r[resp] for r in sel], x, s, factor_name=factor) for resp in responses}


# --------------------------------------------------------------------------- tables

SUMMARY_EXTRA = ("realized_avg_degree",)


def summary_table(rows: list[dict[str, Any]]) -> str:
    """One row per condition: n, then mean/ci_low/ci_high for each metric."""
    if not rows:
        raise NoDataError("no data: the results selection is empty")
    cols = list(SUMMARY_EXTRA) + METRIC_COLUMNS
    per_metric = {m: aggregate_ci(rows, m) for m in cols}
    keys = [s.key for s in per_metric[cols[0]]]
    header = list(CONDITION_KEYS) + ["n"]
    for m in cols:
        header += [f"{m}_mean", f"{m}_ci_low", f"{m}_ci_high"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, key in enumerate(keys):
        line = [str(v) if not isinstance(v, float) else repr(v) for v in key]
        line.append(per_metric[cols[0]][i].n)
        for m in cols:
            summ = per_metric[m][i]
            ci = summ.ci
            line += [repr(summ.mean), "" if ci is None else repr(ci[0]), "" if ci is None else repr(ci[1])]
        w.writerow(line)
    return buf.getvalue()


def read_summary(path: str | Path) -> list[dict[str, Any]]:
    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict[str, Any] = {}
            for k, v in raw.items():
                if k in ("experiment_id", "topology_kind"):
                    row[k] = v
                elif v == "":
                    row[k] = None
                else:
                    row[k] = float(v)
            out.append(row)
    return out


def emit_tables(rows: list[dict[str, Any]], destination: str | Path) -> list[Path]:
    """Write ``summary_exp<id>.csv`` and ``regressions_exp<id>.json`` per experiment."""
    if not rows:
        raise NoDataError("no data: the results selection is empty")
    dest = Path(destination)
    written = []
    by_exp: dict[str, list] = defaultdict(list)
    for r in rows:
        by_exp[str(r["experiment_id"])].append(r)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        for exp in sorted(by_exp):
            path = dest / f"summary_exp{exp}.csv"
            path.write_text(summary_table(by_exp[exp]))
            written.append(path)
            regs = regressions(by_exp[exp], exp)
            if regs:
                path = dest / f"regressions_exp{exp}.json"
                path.write_text(json.dumps({k: v.as_dict() for k, v in regs.items()}, indent=2, sort_keys=True) + "\n")
                written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write analysis outputs under {dest}: {exc}") from exc
    return written


# --------------------------------------------------------------------------- figures

FIGURE_METRICS = {
    "1": [
        ("avg_reward", "Average reward"),
        ("between_agent_divergence", "Between-agent divergence"),
        ("signaling_divergence", "Signaling divergence"),
        ("within_agent_divergence", "Within-agent divergence"),
        ("speaking_consistency", "Speaking consistency"),
        ("listening_consistency", "Listening consistency"),
        ("action_predictability", "Action predictability"),
        ("message_predictability", "Message predictability"),
    ],
    "2": [("speaking_consistency", "Speaking consistency"), ("listening_consistency", "Listening consistency")],
    "3": [
        ("between_agent_divergence", "Between-agent divergence"),
        ("signaling_divergence", "Signaling divergence"),
        ("within_agent_divergence", "Within-agent divergence"),
    ],
}


def _series(summary: list[dict[str, Any]], group_key: str, x_key: str, metric: str):
    groups: dict[Any, list] = defaultdict(list)
    for row in summary:
        groups[row[group_key]].append(row)
    for g in sorted(groups, key=str):
        rows = sorted(groups[g], key=lambda r: r[x_key])
        x = np.array([r[x_key] for r in rows])
        y = np.array([r[f"{metric}_mean"] for r in rows])
        lo = np.array([np.nan if r[f"{metric}_ci_low"] is None else r[f"{metric}_ci_low"] for r in rows])
        hi = np.array([np.nan if r[f"{metric}_ci_high"] is None else r[f"{metric}_ci_high"] for r in rows])
        yield g, x, y, lo, hi


def _collapse(summary: list[dict[str, Any]], by: str, metric: str) -> list[dict[str, Any]]:
    """Average condition means over supervision rates for the Exp. 2/3 panels."""
    groups: dict[Any, list] = defaultdict(list)
    for row in summary:
        groups[row[by]].append(row)
    out = []
    for key in sorted(groups):
        rows = groups[key]
        mean, hw = mean_ci([r[f"{metric}_mean"] for r in rows])
        out.append({
            "group": "all",
            by: float(np.mean([r[by] for r in rows])) if by != "topology_param" else key,
            "realized_avg_degree": float(np.mean([r["realized_avg_degree_mean"] for r in rows])),
            f"{metric}_mean": mean,
            f"{metric}_ci_low": None if hw is None else mean - hw,
            f"{metric}_ci_high": None if hw is None else mean + hw,
        })
    return out


def emit_plots(summary: list[dict[str, Any]], experiment_id: str, destination: str | Path) -> list[Path]:
    """Render the panels for one experiment as SVG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not summary:
        raise NoDataError(f"no data for experiment {experiment_id}")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    plt.rcParams["svg.hashsalt"] = "netcomm"
    for metric, label in FIGURE_METRICS.get(experiment_id, FIGURE_METRICS["1"]):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        if experiment_id == "2":
            data, group, x_key, xlabel = _collapse(summary, "topology_param", metric), "group", "realized_avg_degree", "Average degree"
        elif experiment_id == "3":
            data, group, x_key, xlabel = _collapse(summary, "topology_param", metric), "group", "topology_param", "P(global connection)"
        else:
            data, group, x_key, xlabel = summary, "topology_kind", "supervision_rate", "Supervision rate"
        for g, x, y, lo, hi in _series(data, group, x_key, metric):
            ax.plot(x, y, marker="o", label=str(g))
            ax.fill_between(x, lo, hi, alpha=0.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(label)
        if experiment_id == "1":
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = dest / f"exp{experiment_id}_{metric}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def emit_outputs(rows: list[dict[str, Any]], destination: str | Path) -> list[Path]:
    """Summary CSVs, regression JSON and SVG panels for every experiment present."""
    written = emit_tables(rows, destination)
    for path in [p for p in written if p.name.startswith("summary_exp")]:
        exp = path.stem[len("summary_exp"):]
        written += emit_plots(read_summary(path), exp, destination)
    return written


def filter_rows(rows: Iterable[dict[str, Any]], **criteria) -> list[dict[str, Any]]:
    out = [r for r in rows if all(str(r[k]) == str(v) for k, v in criteria.items())]
    if not out:
        raise NoDataError(f"no data matching {criteria}")
    return out

