"""Likelihood-ratio tests for equal mean compositions across groups.

One test per tree layer: the unrestricted model gives every group its own
subcomposition mean and precision, the restricted model shares the mean
while keeping per-group precisions as nuisance parameters. Both sides are
maximized with the same two-step updates; the statistic is twice the
log-likelihood gap with G*K - (K - 1 + G) degrees of freedom. Layer
independence lets the per-layer statistics and degrees of freedom add up to
an overall chi-square test, and pairwise post-hoc comparisons are just the
two-group version of the same procedure.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import digamma, gammaincc

from .dirichlet import (
    LogSuffStats,
    PRECISION_CAP,
    _loglik_from_stats,
    _mle_from_stats,
    _precision_step,
    _safeguarded_newton,
    _trigamma,
    dirichlet_mle,
    suff_stats,
)
from .errors import FitError, TestAborted
from .ndd import to_layers
from .simplex import Panel, group_order
from .tree import Tree

log = logging.getLogger(__name__)

# Optimizer noise can leave the likelihood-ratio statistic a hair negative;
# anything above this magnitude is a real failure.
NEGATIVE_LAMBDA_TOL = 1e-8


def chisq_upper_tail(x: float, v: int) -> float:
    """Upper tail P(X >= x) for a chi-square variable with v degrees of freedom."""
    if x < 0:
        raise ValueError("the test statistic must be non-negative")
    if v < 1:
        raise ValueError("degrees of freedom must be a positive integer")
    return float(gammaincc(v / 2.0, x / 2.0))


def layer_df(n_groups: int, k: int) -> int:
    """Degrees of freedom G*K - (K - 1 + G) for one layer's test."""
    return n_groups * k - (k - 1 + n_groups)


@dataclass(frozen=True)
class LayerTestResult:
    node: str
    label: str
    statistic: float
    df: int
    groups: tuple
    n_per_group: dict

    def to_json(self) -> dict:
        return {
            "node": self.node,
            "label": self.label,
            "lambda": float(self.statistic),
            "df": int(self.df),
            "n_per_group": {str(g): int(n) for g, n in self.n_per_group.items()},
        }


@dataclass(frozen=True)
class OverallTestResult:
    layers: tuple
    statistic: float
    v: int
    p_value: float
    groups: tuple

    def to_json(self) -> dict:
        return {
            "groups": [str(g) for g in self.groups],
            "layers": [layer.to_json() for layer in self.layers],
            "total": {
                "lambda": float(self.statistic),
                "v": int(self.v),
                "p": float(self.p_value),
            },
        }


@dataclass(frozen=True)
class PairwiseReport:
    pair: tuple
    result: OverallTestResult
    p_adjusted: float | None = None

    def to_json(self) -> dict:
        obj = {"pair": [str(g) for g in self.pair], **self.result.to_json()}
        if self.p_adjusted is not None:
            obj["total"]["p_adjusted"] = float(self.p_adjusted)
        return obj


# ---------------------------------------------------------------------------
# restricted fit: common mean, per-group precisions
# ---------------------------------------------------------------------------


def _common_mean_step(stats_list, precisions, init_mean) -> np.ndarray:
    """Maximize the pooled log-likelihood over one shared mean vector.

    The objective is separable per component, so stationarity sets each
    component's weighted score equal to a shared multiplier; the inner
    Newton solves the per-component equations, the outer root find pins the
    multiplier so the mean closes to 1.
    """
    s = np.stack([st.mean_log for st in stats_list])
    a = np.asarray(precisions, dtype=float)
    w = np.array([st.n for st in stats_list]) * a
    base = w @ s

    def score(pi):
        return base - w @ digamma(np.outer(a, pi))

    def dscore(pi):
        return -(w * a) @ _trigamma(np.outer(a, pi))

    def solve_components(lam, pi0):
        pi = pi0.copy()
        for _ in range(200):
            f = score(pi) - lam
            new = pi - f / dscore(pi)
            new = np.where(new <= 0, pi / 2.0, new)
            if np.all(np.abs(new - pi) <= 1e-14 * np.maximum(new, 1e-300)):
                return new
            pi = new
        return pi

    pi = np.asarray(init_mean, dtype=float).copy()

    def gap(lam):
        return float(solve_components(lam, pi).sum() - 1.0)

    lam0 = float(np.mean(score(pi)))
    lo = hi = lam0
    g = gap(lam0)
    step = max(1.0, abs(lam0))
    if g > 0:  # mean too large -> raise the multiplier
        while g > 0:
            lo, hi = hi, hi + step
            step *= 2.0
            g = gap(hi)
            if step > 1e18:
                raise FitError("common-mean update failed to bracket the constraint")
    else:
        while g <= 0:
            hi, lo = lo, lo - step
            step *= 2.0
            g = gap(lo)
            if step > 1e18:
                raise FitError("common-mean update failed to bracket the constraint")

    def dgap(lam):
        sol = solve_components(lam, pi)
        return float((1.0 / dscore(sol)).sum())

    root = _safeguarded_newton(gap, dgap, lo, hi, 0.5 * (lo + hi), tol=1e-13)
    out = solve_components(root, pi)
    return out / out.sum()


def _restricted_fit(stats_list, init_mean, init_precisions, *, tol=1e-10, max_iter=500):
    """Two-step fit of the common-mean model; returns (mean, precisions, loglik)."""
    pi = np.asarray(init_mean, dtype=float)
    pi = pi / pi.sum()
    precs = [float(p) for p in init_precisions]

    def total_ll():
        return sum(
            _loglik_from_stats(st, pi, a) for st, a in zip(stats_list, precs)
        )

    ll = total_ll()
    for _ in range(max_iter):
        for g, st in enumerate(stats_list):
            precs[g] = _precision_step(st, pi, init=precs[g])
            if precs[g] >= PRECISION_CAP:
                raise FitError(
                    "restricted fit: a group's precision diverged (degenerate rows)"
                )
        pi = _common_mean_step(stats_list, precs, pi)
        ll_new = total_ll()
        if abs(ll_new - ll) <= tol * (abs(ll_new) + 1.0):
            return pi, precs, ll_new
        ll = ll_new
    raise FitError(f"restricted fit did not converge in {max_iter} iterations")


def layer_test(
    rows: np.ndarray,
    labels: np.ndarray,
    *,
    node: str = "",
    label: str = "",
    tol: float = 1e-10,
    max_iter: int = 500,
) -> LayerTestResult:
    """Likelihood-ratio test of equal subcomposition means for one layer.

    ``rows`` are the layer's branch proportions, ``labels`` the group label
    of each row. Needs at least two groups with two usable rows each.
    """
    labels = np.asarray(labels, dtype=object)
    groups = group_order(labels)
    if len(groups) < 2:
        raise ValueError("need at least 2 groups to compare")
    k = rows.shape[1]
    stats_list: list[LogSuffStats] = []
    fits = []
    n_per_group = {}
    for g in groups:
        sub = rows[labels == g]
        n_per_group[g] = sub.shape[0]
        if sub.shape[0] < 2:
            raise FitError(
                f"group {g!r} has {sub.shape[0]} usable rows in layer {node!r}; need at least 2"
            )
        fit = dirichlet_mle(sub, tol=tol, max_iter=max_iter)
        if fit.degenerate:
            raise FitError(f"group {g!r} is degenerate in layer {node!r}")
        fits.append(fit)
        stats_list.append(suff_stats(sub))
    ll_unrestricted = sum(f.loglik for f in fits)

    weights = np.array([st.n for st in stats_list])
    pooled_mean = weights @ np.stack([f.mean for f in fits]) / weights.sum()
    pi_r, precs_r, ll_restricted = _restricted_fit(
        stats_list,
        pooled_mean,
        [f.precision for f in fits],
        tol=tol,
        max_iter=max_iter,
    )

    statistic = 2.0 * (ll_unrestricted - ll_restricted)
    if statistic < 0:
        # the restricted optimum is feasible for every group: refit from it
        refit_ll = 0.0
        for st, a in zip(stats_list, precs_r):
            refit = _mle_from_stats(st, pi_r, a, tol=tol, max_iter=max_iter)
            refit_ll += refit.loglik
        ll_unrestricted = max(ll_unrestricted, refit_ll)
        statistic = 2.0 * (ll_unrestricted - ll_restricted)
    if statistic < -NEGATIVE_LAMBDA_TOL:
        raise FitError(
            f"layer {node!r}: restricted likelihood exceeds unrestricted "
            f"(lambda = {statistic:.3e})"
        )
    if statistic < 0:
        log.warning(
            "layer %r: clipping slightly negative statistic %.3e to 0", node, statistic
        )
        statistic = 0.0

    return LayerTestResult(
        node=node,
        label=label or node,
        statistic=float(statistic),
        df=layer_df(len(groups), k),
        groups=tuple(groups),
        n_per_group=n_per_group,
    )


def _layer_task(args):
    rows, labels, node, label, tol, max_iter = args
    return layer_test(rows, labels, node=node, label=label, tol=tol, max_iter=max_iter)


def overall_test_rows(
    x,
    labels,
    tree: Tree,
    smoothing: float = 0.0,
    *,
    tol: float = 1e-10,
    max_iter: int = 500,
    workers: int = 1,
) -> OverallTestResult:
    """Overall layered test on raw rows (counts or compositions) with labels."""
    labels = np.asarray(labels, dtype=object)
    groups = tuple(group_order(labels))
    if len(groups) < 2:
        raise ValueError("need at least 2 groups to compare")
    layers = to_layers(x, tree, smoothing)
    nodes = tree.interior_nodes()

    tasks = []
    for layer, tree_node in zip(layers, nodes):
        layer_labels = labels[layer.row_ids]
        for g in groups:
            if (layer_labels == g).sum() == 0:
                raise TestAborted(
                    f"group {g!r} has no usable rows in layer {layer.node!r}",
                    node=layer.node,
                )
        tasks.append(
            (layer.rows, layer_labels, layer.node, tree.layer_label(tree_node), tol, max_iter)
        )

    results: list[LayerTestResult] = []
    try:
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_layer_task, tasks))
        else:
            results = [_layer_task(t) for t in tasks]
    except FitError as exc:
        raise TestAborted(str(exc), partial=results) from exc

    statistic = float(sum(r.statistic for r in results))
    v = int(sum(r.df for r in results))
    return OverallTestResult(
        layers=tuple(results),
        statistic=statistic,
        v=v,
        p_value=chisq_upper_tail(statistic, v),
        groups=groups,
    )


def overall_test(
    panel: Panel,
    tree: Tree,
    group_by: str = "age_group",
    smoothing: float | None = None,
    **kwargs,
) -> OverallTestResult:
    """Overall layered test across the panel's groups."""
    s = panel.smoothing if smoothing is None else smoothing
    return overall_test_rows(panel.counts, panel.groups(group_by), tree, s, **kwargs)


def pairwise_tests(
    panel: Panel,
    tree: Tree,
    group_by: str = "age_group",
    smoothing: float | None = None,
    *,
    adjust: str | None = None,
    **kwargs,
) -> list[PairwiseReport]:
    """Post-hoc two-group tests for every unordered pair of groups.

    Runs the overall test on each pair's subset. Raw p-values by default;
    ``adjust='bonferroni'`` adds multiplied-up p-values alongside.
    """
    if adjust not in (None, "bonferroni"):
        raise ValueError(f"unknown adjustment {adjust!r}")
    labels = panel.groups(group_by)
    groups = group_order(labels)
    if len(groups) < 2:
        raise ValueError("need at least 2 groups to compare")
    s = panel.smoothing if smoothing is None else smoothing
    pairs = list(combinations(groups, 2))
    reports = []
    for a, b in pairs:
        mask = (labels == a) | (labels == b)
        sub = panel.counts[mask]
        result = overall_test_rows(sub, labels[mask], tree, s, **kwargs)
        p_adj = min(1.0, result.p_value * len(pairs)) if adjust == "bonferroni" else None
        reports.append(PairwiseReport(pair=(a, b), result=result, p_adjusted=p_adj))
    return reports


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def format_p(p: float) -> str:
    return f"{p:.4f}" if p >= 1e-3 else f"{p:.2e}"


def render_overall_table(result: OverallTestResult) -> str:
    """Plain-text table: one row per split, then the overall statistic."""
    width = max(len("Split"), *(len(r.label) for r in result.layers), len("Total"))
    lines = [f"{'Split':<{width}}  {'LR':>10}  {'df':>4}"]
    lines.append("-" * (width + 20))
    for r in result.layers:
        lines.append(f"{r.label:<{width}}  {r.statistic:>10.3f}  {r.df:>4d}")
    lines.append("-" * (width + 20))
    lines.append(
        f"{'Total':<{width}}  {result.statistic:>10.3f}  {result.v:>4d}"
        f"  p = {format_p(result.p_value)}"
    )
    return "\n".join(lines)


def render_pairwise_table(reports: list[PairwiseReport]) -> str:
    """Plain-text table with one column block per group pair."""
    if not reports:
        return ""
    labels = [r.label for r in reports[0].result.layers]
    headers = [f"{a} vs {b}" for a, b in (rep.pair for rep in reports)]
    width = max(len("Split"), *(len(x) for x in labels), len("P-value"))
    col = max(12, *(len(h) for h in headers))
    lines = ["  ".join([f"{'Split':<{width}}"] + [f"{h:>{col}}" for h in headers])]
    lines.append("-" * (width + (col + 2) * len(headers)))
    for i, label in enumerate(labels):
        cells = [f"{rep.result.layers[i].statistic:>{col}.3f}" for rep in reports]
        lines.append("  ".join([f"{label:<{width}}"] + cells))
    lines.append("-" * (width + (col + 2) * len(headers)))
    lines.append(
        "  ".join(
            [f"{'Total':<{width}}"]
            + [f"{rep.result.statistic:>{col}.3f}" for rep in reports]
        )
    )
    lines.append(
        "  ".join(
            [f"{'P-value':<{width}}"]
            + [f"{format_p(rep.result.p_value):>{col}}" for rep in reports]
        )
    )
    return "\n".join(lines)


def report_to_csv(result: OverallTestResult) -> str:
    """CSV rendering of the per-split decomposition plus the total row."""
    lines = ["split,lambda,df"]
    for r in result.layers:
        lines.append(f"{r.label},{r.statistic:.6f},{r.df}")
    lines.append(f"Total,{result.statistic:.6f},{result.v}")
    lines.append(f"P-value,{format_p(result.p_value)},")
    return "\n".join(lines) + "\n"
