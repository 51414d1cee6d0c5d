"""Agreement and error metrics for total and per-question scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

METRICS = ("ccc", "rmse", "mae")
# decimals used in mean ± std tables: CCC to three places, errors to two
DECIMALS = {"ccc": 3, "rmse": 2, "mae": 2}


def _pair(x, y, min_len: int):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.size}")
    return x, y


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments.

    Two constant, equal vectors give 1; any other case with a constant vector
    gives 0.
    """
    x, y = _pair(x, y, 2)
    x_const = np.all(x == x[0])
    y_const = np.all(y == y[0])
    if x_const and y_const:
        return 1.0 if x[0] == y[0] else 0.0
    if x_const or y_const:
        return 0.0
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = np.mean(dx * dy)
    return float(2.0 * cov / (np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2))


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    return float(np.sum(dx * dy) / den) if den > 0 else 0.0


def rmse(x, y) -> float:
    x, y = _pair(x, y, 1)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def mae(x, y) -> float:
    x, y = _pair(x, y, 1)
    return float(np.mean(np.abs(x - y)))


def score(pred, target) -> dict[str, float]:
    return {"ccc": ccc(pred, target), "rmse": rmse(pred, target), "mae": mae(pred, target)}


@dataclass
class MetricsReport:
    """Total-score metrics, optional per-question metrics and seed spread.

    ``std`` is filled by :func:`aggregate_seeds` and mirrors the layout of the
    point values (``{"ccc": .., "rmse": .., "mae": .., "per_question": [..]}``).
    """

    ccc: float
    rmse: float
    mae: float
    n: int = 0
    per_question: list[dict[str, float]] | None = None
    std: dict | None = None
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def mean_std(self, metric: str) -> str:
        """``"0.662 ± 0.022"``-style cell for one total-score metric."""
        nd = DECIMALS[metric]
        sd = (self.std or {}).get(metric, 0.0)
        return f"{getattr(self, metric):.{nd}f} ± {sd:.{nd}f}"


def evaluate_scores(pred_totals, true_totals, pred_items=None, true_items=None) -> MetricsReport:
    """Metrics on totals plus per-question metrics when item labels exist."""
    s = score(pred_totals, true_totals)
    per_q = None
    if pred_items is not None and true_items is not None:
        pi = np.asarray(pred_items, dtype=np.float64)
        ti = np.asarray(true_items, dtype=np.float64)
        per_q = [score(pi[:, q], ti[:, q]) for q in range(ti.shape[1])]
    return MetricsReport(n=int(np.size(true_totals)), per_question=per_q, **s)


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    sd = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), sd


def aggregate_seeds(reports: list[MetricsReport]) -> MetricsReport:
    """Mean and sample standard deviation (n - 1) of every metric."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out, std = {}, {}
    for m in METRICS:
        out[m], std[m] = _mean_std([getattr(r, m) for r in reports])
    per_q = None
    if all(r.per_question is not None for r in reports):
        nq = {len(r.per_question) for r in reports}
        if len(nq) != 1:
            raise ValueError("reports disagree on the number of questions")
        per_q, per_q_std = [], []
        for q in range(nq.pop()):
            row, row_sd = {}, {}
            for m in METRICS:
                row[m], row_sd[m] = _mean_std([r.per_question[q][m] for r in reports])
            per_q.append(row)
            per_q_std.append(row_sd)
        std["per_question"] = per_q_std
    seeds = [s for r in reports for s in r.seeds]
    return MetricsReport(
        n=reports[0].n, per_question=per_q, std=std, seeds=seeds, **out
    )


def format_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Plain-text results table with ``mean ± std`` cells."""
    header = ("Model", "CCC(↑)", "RMSE(↓)", "MAE(↓)")
    body = [(name, r.mean_std("ccc"), r.mean_std("rmse"), r.mean_std("mae")) for name, r in rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *body]]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
