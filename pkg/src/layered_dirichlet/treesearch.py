"""Data-driven tree construction by recursive binary splits.

At each step the current components are fit flat (plain Dirichlet) and as
every two-sided partition (a depth-one nested model); the candidate with the
best score wins. Sides with more than two components are converted to
branch proportions and searched again, so the procedure stops when no split
is favored or the structure is fully binary. Scores are -2 log-likelihood,
optionally penalized (AIC / BIC); likelihoods include the change-of-variables
term so different tree shapes are compared on the same density scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dirichlet import dirichlet_mle
from .errors import FitError
from .simplex import ComponentSchema, Panel
from .tree import Tree, TreeNode

CRITERIA = ("neg2loglik", "aic", "bic")


@dataclass(frozen=True)
class SearchConfig:
    criterion: str = "bic"
    max_exhaustive_k: int = 12
    smoothing: float = 0.5
    fit_tol: float = 1e-10
    fit_max_iter: int = 500

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.max_exhaustive_k < 3:
            raise ValueError("max_exhaustive_k must be at least 3")


@dataclass(frozen=True)
class Candidate:
    """One scored option at a recursion step; partition is None for no-split."""

    partition: tuple | None
    loglik: float
    n_params: int
    score: float
    feasible: bool = True


@dataclass
class SearchStep:
    components: tuple
    candidates: list
    decision: str  # "flat" or "split"
    chosen: tuple | None

    def to_json(self) -> dict:
        return {
            "components": list(self.components),
            "decision": self.decision,
            "chosen": [list(side) for side in self.chosen] if self.chosen else None,
            "candidates": [
                {
                    "partition": [list(side) for side in c.partition]
                    if c.partition
                    else None,
                    "loglik": float(c.loglik),
                    "n_params": int(c.n_params),
                    "score": float(c.score) if np.isfinite(c.score) else None,
                    "feasible": bool(c.feasible),
                }
                for c in self.candidates
            ],
        }


@dataclass
class SearchTrace:
    criterion: str
    n_rows: int
    steps: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "criterion": self.criterion,
            "n_rows": self.n_rows,
            "steps": [s.to_json() for s in self.steps],
        }

    def to_csv(self) -> str:
        lines = ["components,partition,loglik,n_params,score,feasible,chosen"]
        for step in self.steps:
            comp = "+".join(step.components)
            for c in step.candidates:
                part = "|".join(" ".join(s) for s in c.partition) if c.partition else "flat"
                chosen = c.partition == step.chosen and step.decision == "split"
                if c.partition is None and step.decision == "flat":
                    chosen = True
                score = f"{c.score:.6f}" if np.isfinite(c.score) else ""
                lines.append(
                    f"{comp},{part},{c.loglik:.6f},{c.n_params},{score},"
                    f"{int(c.feasible)},{int(chosen)}"
                )
        return "\n".join(lines) + "\n"


def binary_partitions(items) -> list[tuple[tuple, tuple]]:
    """All 2^(m-1) - 1 unordered splits of ``items`` into two non-empty sides.

    Deterministic order: the side containing the first item enumerates its
    remaining members in binary-counter order, so score ties always resolve
    to the same (earliest) split.
    """
    items = tuple(items)
    m = len(items)
    if m < 2:
        raise ValueError("need at least 2 items to partition")
    rest = items[1:]
    out = []
    for mask in range(2 ** (m - 1) - 1):
        left = [items[0]]
        right = []
        for j, item in enumerate(rest):
            if mask >> j & 1:
                left.append(item)
            else:
                right.append(item)
        out.append((tuple(left), tuple(right)))
    return out


def information_score(loglik: float, n_params: int, n: int, criterion: str) -> float:
    """-2 log-likelihood, optionally penalized: AIC adds 2p, BIC adds p log n."""
    if n < 1:
        raise ValueError("n must be at least 1")
    base = -2.0 * loglik
    if criterion == "neg2loglik":
        return base
    if criterion == "aic":
        return base + 2.0 * n_params
    if criterion == "bic":
        return base + n_params * float(np.log(n))
    raise ValueError(f"unknown criterion {criterion!r}")


def _greedy_partition(x: np.ndarray, components: tuple) -> tuple[tuple, tuple]:
    """Average-linkage agglomeration on correlation until two clusters remain.

    Fallback for wide component sets where exhaustive enumeration is too
    expensive: repeatedly merge the most positively correlated pair.
    """
    corr = np.corrcoef(x, rowvar=False)
    corr = np.nan_to_num(corr, nan=-1.0)
    clusters: list[list[int]] = [[i] for i in range(len(components))]
    while len(clusters) > 2:
        best = (-np.inf, 0, 1)
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                link = float(np.mean([corr[a, b] for a in clusters[i] for b in clusters[j]]))
                if link > best[0]:
                    best = (link, i, j)
        _, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
    sides = [tuple(components[i] for i in sorted(c)) for c in clusters]
    if components[0] not in sides[0]:
        sides.reverse()
    return sides[0], sides[1]


def _fit_loglik(rows: np.ndarray, config: SearchConfig) -> float:
    fit = dirichlet_mle(rows, tol=config.fit_tol, max_iter=config.fit_max_iter)
    if fit.degenerate:
        raise FitError("degenerate layer during search")
    return fit.loglik


def _split_loglik(x: np.ndarray, side_idx: tuple, other_idx: tuple, config: SearchConfig):
    """Log-likelihood and parameter count of the depth-one split model.

    Layers: the two-branch root subcomposition plus one flat layer per side
    with two or more components. The (children - 1) log subtotal terms put
    the result on the same density scale as the flat fit.
    """
    left = x[:, side_idx].sum(axis=1)
    right = x[:, other_idx].sum(axis=1)
    if np.any(left <= 0) or np.any(right <= 0):
        raise FitError("a side has rows with zero subtotal")
    loglik = _fit_loglik(np.column_stack([left, right]), config)
    n_params = 2
    for idx, subtotal in ((side_idx, left), (other_idx, right)):
        if len(idx) >= 2:
            sub = x[:, idx] / subtotal[:, None]
            loglik += _fit_loglik(sub, config)
            loglik -= (len(idx) - 1) * float(np.log(subtotal).sum())
            n_params += len(idx)
    return loglik, n_params


def _search(x: np.ndarray, components: tuple, config: SearchConfig, trace: SearchTrace):
    """Recursive step: decide flat vs best binary split for ``components``."""
    n = x.shape[0]
    m = len(components)
    flat_ll = _fit_loglik(x, config)
    flat = Candidate(None, flat_ll, m, information_score(flat_ll, m, n, config.criterion))
    candidates = [flat]

    if m == 2:
        # the flat two-component node and its only "split" are the same model
        trace.steps.append(SearchStep(components, candidates, "flat", None))
        return tuple(TreeNode(c) for c in components)

    if m > config.max_exhaustive_k:
        index = {c: i for i, c in enumerate(components)}
        sides = _greedy_partition(x, components)
        partitions = [sides]
    else:
        partitions = binary_partitions(components)
        index = {c: i for i, c in enumerate(components)}

    best = flat
    for left, right in partitions:
        left_idx = tuple(index[c] for c in left)
        right_idx = tuple(index[c] for c in right)
        try:
            ll, n_params = _split_loglik(x, left_idx, right_idx, config)
        except FitError:
            candidates.append(Candidate((left, right), np.nan, 0, np.inf, feasible=False))
            continue
        cand = Candidate(
            (left, right),
            ll,
            n_params,
            information_score(ll, n_params, n, config.criterion),
        )
        candidates.append(cand)
        if cand.score < best.score:
            best = cand

    if best.partition is None:
        trace.steps.append(SearchStep(components, candidates, "flat", None))
        return tuple(TreeNode(c) for c in components)

    trace.steps.append(SearchStep(components, candidates, "split", best.partition))
    children = []
    for side in best.partition:
        if len(side) == 1:
            children.append(TreeNode(side[0]))
            continue
        idx = tuple(index[c] for c in side)
        sub = x[:, idx] / x[:, idx].sum(axis=1, keepdims=True)
        grand = _search(sub, side, config, trace)
        if len(side) == 2:
            children.append(TreeNode("", grand))
        else:
            children.append(TreeNode("", grand))
    return tuple(children)


def _name_interior(node: TreeNode, counter: list) -> TreeNode:
    if node.is_leaf:
        return node
    children = tuple(_name_interior(c, counter) for c in node.children)
    counter[0] += 1
    return TreeNode(f"n{counter[0]}", children)


def find_tree(x, schema: ComponentSchema, config: SearchConfig = SearchConfig()):
    """Search for the nesting tree best supported by the data.

    ``x`` is an (n, k) array of counts or compositions in schema order;
    smoothing from the config is applied before the search. Returns the
    tree and the full trace of scored candidates.
    """
    mat = np.atleast_2d(np.asarray(x, dtype=float)) + config.smoothing
    if mat.shape[1] != schema.k:
        raise ValueError(f"expected {schema.k} columns, got {mat.shape[1]}")
    if mat.shape[0] < 2:
        raise ValueError("need at least 2 rows to search for a tree")
    if np.any(mat <= 0):
        raise ValueError("rows must be strictly positive after smoothing")
    mat = mat / mat.sum(axis=1, keepdims=True)

    trace = SearchTrace(criterion=config.criterion, n_rows=mat.shape[0])
    children = _search(mat, tuple(schema.names), config, trace)
    root = TreeNode("root", children)
    counter = [0]
    named_children = tuple(_name_interior(c, counter) for c in root.children)
    return Tree(TreeNode("root", named_children), schema), trace


def find_tree_panel(panel: Panel, config: SearchConfig = SearchConfig()):
    return find_tree(panel.counts, panel.schema, config)
