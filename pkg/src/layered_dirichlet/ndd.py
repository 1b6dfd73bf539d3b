"""Nested Dirichlet distribution: layer transform, density, moments, fitting.

The nesting tree turns a composition into independent subcompositions, one
per interior node: each child branch contributes its leaf subtotal divided
by the node subtotal. The joint log density is then the sum of ordinary
Dirichlet log densities over those layers minus a parameter-free
change-of-variables term, sum over interior nodes of
(children - 1) * log(node subtotal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .dirichlet import (
    DirichletFit,
    MeanPrecision,
    check_alpha,
    dirichlet_mle,
)
from .errors import FitError
from .tree import NddParams, Tree

__all__ = [
    "LayerData",
    "NddFit",
    "to_layers",
    "ndd_logpdf",
    "ndd_loglik",
    "ndd_moments",
    "ndd_fit",
]


@dataclass
class LayerData:
    """Branch-proportion rows of one interior node.

    ``rows`` holds the usable subcompositions (each sums to 1); ``row_ids``
    maps them back to the source rows; rows whose node subtotal was zero are
    excluded from the layer and listed in ``excluded_ids``.
    ``log_totals`` keeps log of the node subtotal (relative to the whole
    composition) for the usable rows, which is what the density's
    change-of-variables term needs.
    """

    node: str
    labels: tuple[str, ...]
    rows: np.ndarray
    row_ids: np.ndarray
    log_totals: np.ndarray
    excluded_ids: np.ndarray

    @property
    def k(self) -> int:
        return self.rows.shape[1]

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def _as_matrix(x, k: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != k:
        raise ValueError(f"expected {k} components per row, got {x.shape[1]}")
    if np.any(x < 0):
        raise ValueError("negative entries are not a valid composition or count")
    return x


def to_layers(x, tree: Tree, smoothing: float = 0.0) -> list[LayerData]:
    """Transform count or composition rows into per-node branch proportions.

    ``x`` is an (n, k) array of non-negative rows in schema order; smoothing
    is added to every entry first (pass 0 for data already interior). Rows
    are normalized, node subtotals taken over each node's leaves, and every
    interior node yields the subcomposition child subtotal / node subtotal.
    Layers appear in preorder.
    """
    mat = _as_matrix(x, tree.schema.k) + float(smoothing)
    totals = mat.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("rows with zero total cannot be transformed; use smoothing > 0")
    mat = mat / totals[:, None]
    ids = np.arange(mat.shape[0])

    subtotal = {
        node.name: mat[:, tree.leaf_indices(node.name)].sum(axis=1)
        for node in tree.interior_nodes()
    }
    layers = []
    for node in tree.interior_nodes():
        parent = subtotal[node.name]
        usable = parent > 0
        children = np.column_stack(
            [
                subtotal[c.name] if not c.is_leaf else mat[:, tree.schema.index(c.name)]
                for c in node.children
            ]
        )
        rows = children[usable] / parent[usable, None]
        layers.append(
            LayerData(
                node=node.name,
                labels=tuple(tree.branch_label(c) for c in node.children),
                rows=rows,
                row_ids=ids[usable],
                log_totals=np.log(parent[usable]),
                excluded_ids=ids[~usable],
            )
        )
    return layers


def _layer_alphas(params: NddParams):
    return [
        (node, check_alpha(params.layer_alpha(node)))
        for node in params.tree.interior_nodes()
    ]


def ndd_logpdf(x, params: NddParams) -> float:
    """Log density of one interior composition under the nested model."""
    return float(ndd_loglik(np.atleast_2d(np.asarray(x, dtype=float)), params))


def ndd_loglik(data, params: NddParams) -> float:
    """Sum of nested-Dirichlet log densities over the rows of ``data``.

    Rows must be interior compositions. Computed layer by layer: Dirichlet
    log density of each subcomposition plus the (children - 1) *
    log(subtotal) Jacobian correction.
    """
    tree = params.tree
    mat = _as_matrix(data, tree.schema.k)
    if np.any(mat <= 0):
        raise ValueError("rows must be interior to the simplex")
    if np.any(np.abs(mat.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("rows must sum to 1")
    total = 0.0
    subtotal = {
        node.name: mat[:, tree.leaf_indices(node.name)].sum(axis=1)
        for node in tree.interior_nodes()
    }
    for node, alpha in _layer_alphas(params):
        parent = subtotal[node.name]
        children = np.column_stack(
            [
                subtotal[c.name] if not c.is_leaf else mat[:, tree.schema.index(c.name)]
                for c in node.children
            ]
        )
        b = children / parent[:, None]
        n = mat.shape[0]
        norm = gammaln(alpha.sum()) - gammaln(alpha).sum()
        total += n * norm + float((np.log(b) @ (alpha - 1.0)).sum())
        total -= (len(node.children) - 1) * float(np.log(parent).sum())
    return float(total)


def ndd_moments(params: NddParams):
    """Mean vector and covariance matrix of the leaf composition.

    Uses layer independence: each leaf mean is the product of branch-mean
    terms along its root-to-leaf path, and second moments multiply the
    appropriate per-layer first/second Dirichlet moments. Off-diagonal
    covariances can be positive, unlike the plain Dirichlet.
    """
    tree = params.tree
    paths = tree.paths()
    # per (node, child position): E[b], E[b^2]; per node: A for cross moments
    eb: dict[tuple[str, int], float] = {}
    eb2: dict[tuple[str, int], float] = {}
    cross: dict[str, np.ndarray] = {}
    for node, alpha in _layer_alphas(params):
        a0 = alpha.sum()
        mean = alpha / a0
        second = alpha * (alpha + 1.0) / (a0 * (a0 + 1.0))
        cross[node.name] = np.outer(alpha, alpha) / (a0 * (a0 + 1.0))
        for pos in range(len(alpha)):
            eb[(node.name, pos)] = float(mean[pos])
            eb2[(node.name, pos)] = float(second[pos])

    names = tree.schema.names
    k = len(names)
    mean_vec = np.empty(k)
    for i, name in enumerate(names):
        m = 1.0
        for step in paths[name]:
            m *= eb[step]
        mean_vec[i] = m

    second_mat = np.empty((k, k))
    for i, name_i in enumerate(names):
        path_i = paths[name_i]
        m2 = 1.0
        for step in path_i:
            m2 *= eb2[step]
        second_mat[i, i] = m2
        for j in range(i + 1, k):
            path_j = paths[names[j]]
            # walk the shared prefix, then split at the divergence node
            value = 1.0
            depth = 0
            while path_i[depth][0] == path_j[depth][0] and path_i[depth][1] == path_j[depth][1]:
                value *= eb2[path_i[depth]]
                depth += 1
            node_name, pos_i = path_i[depth]
            pos_j = path_j[depth][1]
            value *= float(cross[node_name][pos_i, pos_j])
            for step in path_i[depth + 1 :]:
                value *= eb[step]
            for step in path_j[depth + 1 :]:
                value *= eb[step]
            second_mat[i, j] = second_mat[j, i] = value

    cov = second_mat - np.outer(mean_vec, mean_vec)
    return mean_vec, cov


@dataclass
class NddFit:
    """Independent per-layer Dirichlet fits for one tree.

    ``layer_loglik`` is the sum of the per-layer Dirichlet log-likelihoods;
    ``loglik`` adds the parameter-free change-of-variables term, making it
    the log-likelihood of the nested density itself (comparable across
    trees).
    """

    tree: Tree
    layers: dict
    layer_loglik: float
    loglik: float
    n_used: dict
    n_excluded: dict

    @property
    def n_params(self) -> int:
        return self.tree.n_params()

    def params(self) -> NddParams:
        """Edge parameters alpha = A_l * pi_l collected from the layer fits."""
        alpha: dict[str, float] = {}
        for node in self.tree.interior_nodes():
            fit = self.layers[node.name]
            for child, a in zip(node.children, fit.alpha):
                alpha[child.name] = float(a)
        return NddParams(self.tree, alpha)

    def to_json(self) -> dict:
        return {
            "tree": self.tree.to_json(alpha=self.params().alpha),
            "layers": {
                name: {
                    "mean": [float(v) for v in fit.mean],
                    "precision": float(fit.precision),
                    "loglik": float(fit.loglik),
                    "n_used": int(self.n_used[name]),
                }
                for name, fit in self.layers.items()
            },
            "layer_loglik": float(self.layer_loglik),
            "loglik": float(self.loglik),
        }


def ndd_fit(x, tree: Tree, smoothing: float = 0.0, **fit_kwargs) -> NddFit:
    """Fit a nested Dirichlet by independent per-layer Dirichlet MLEs.

    Layer independence makes this exact: the joint likelihood factors into
    one Dirichlet likelihood per interior node. Layer fit failures are
    re-raised with the node name attached.
    """
    layers = to_layers(x, tree, smoothing)
    fits: dict[str, DirichletFit] = {}
    layer_ll = 0.0
    jacobian = 0.0
    n_used = {}
    n_excluded = {}
    for layer in layers:
        if layer.n < 2:
            raise FitError(
                f"layer {layer.node!r} has {layer.n} usable rows; need at least 2"
            )
        try:
            fit = dirichlet_mle(layer.rows, **fit_kwargs)
        except (FitError, ValueError) as exc:
            raise FitError(f"layer {layer.node!r}: {exc}") from exc
        fits[layer.node] = fit
        layer_ll += fit.loglik
        jacobian -= (layer.k - 1) * float(layer.log_totals.sum())
        n_used[layer.node] = layer.n
        n_excluded[layer.node] = int(layer.excluded_ids.size)
    return NddFit(
        tree=tree,
        layers=fits,
        layer_loglik=layer_ll,
        loglik=layer_ll + jacobian,
        n_used=n_used,
        n_excluded=n_excluded,
    )


def mean_params(fit: NddFit) -> dict[str, MeanPrecision]:
    """Per-layer mean/precision pairs keyed by interior node name."""
    return {
        name: MeanPrecision(mean=f.mean, precision=f.precision)
        for name, f in fit.layers.items()
    }
