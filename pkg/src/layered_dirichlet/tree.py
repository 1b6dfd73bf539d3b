"""Nesting trees for the nested Dirichlet distribution.

A tree groups the components of a schema under interior nodes; every
component appears as exactly one leaf and every interior node has at least
two children. Each non-root node carries one positive parameter on the edge
to its parent, so a fitted model serializes naturally as the nested JSON
``{"name": ..., "alpha": ..., "children": [...]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .simplex import ComponentSchema


@dataclass(frozen=True)
class TreeNode:
    name: str
    children: tuple["TreeNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class TreeViolation:
    code: str
    node: str
    message: str


def _walk(node: TreeNode):
    yield node
    for child in node.children:
        yield from _walk(child)


def validate_tree(root: TreeNode, schema: ComponentSchema) -> list[TreeViolation]:
    """Check all structural invariants; an empty list means the tree is valid."""
    violations: list[TreeViolation] = []
    seen: dict[str, int] = {}
    leaves: list[str] = []
    interior = 0
    for node in _walk(root):
        seen[node.name] = seen.get(node.name, 0) + 1
        if node.is_leaf:
            leaves.append(node.name)
            if node.name not in schema.names:
                violations.append(
                    TreeViolation("unknown_leaf", node.name, f"leaf {node.name!r} is not a schema component")
                )
        else:
            interior += 1
            if len(node.children) < 2:
                violations.append(
                    TreeViolation("unary_node", node.name, f"interior node {node.name!r} has fewer than 2 children")
                )
    for name, count in seen.items():
        if count > 1:
            violations.append(
                TreeViolation("duplicate_name", name, f"node name {name!r} appears {count} times")
            )
    missing = [c for c in schema.names if c not in leaves]
    for name in missing:
        violations.append(
            TreeViolation("missing_component", name, f"component {name!r} has no leaf")
        )
    if root.is_leaf:
        violations.append(TreeViolation("leaf_root", root.name, "root must be an interior node"))
    if interior > schema.k - 1:
        violations.append(
            TreeViolation(
                "node_count",
                root.name,
                f"{interior} interior nodes exceeds the bound k-1 = {schema.k - 1}",
            )
        )
    return violations


@dataclass(frozen=True)
class Tree:
    """A validated nesting tree bound to a component schema.

    Construction raises :class:`SchemaError` on any invariant violation;
    use :func:`validate_tree` to collect violations without raising.
    """

    root: TreeNode
    schema: ComponentSchema
    _by_name: dict = field(init=False, repr=False, compare=False)
    _leafidx: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        problems = validate_tree(self.root, self.schema)
        if problems:
            raise SchemaError(
                "invalid tree: " + "; ".join(v.message for v in problems)
            )
        by_name = {node.name: node for node in _walk(self.root)}
        leafidx: dict[str, np.ndarray] = {}

        def collect(node: TreeNode) -> list[int]:
            if node.is_leaf:
                idx = [self.schema.index(node.name)]
            else:
                idx = []
                for child in node.children:
                    idx.extend(collect(child))
            leafidx[node.name] = np.array(idx, dtype=np.intp)
            return idx

        collect(self.root)
        object.__setattr__(self, "_by_name", by_name)
        object.__setattr__(self, "_leafidx", leafidx)

    # -- structure ---------------------------------------------------------

    def node(self, name: str) -> TreeNode:
        return self._by_name[name]

    def interior_nodes(self) -> list[TreeNode]:
        """Interior nodes in preorder (root first)."""
        return [n for n in _walk(self.root) if not n.is_leaf]

    def edges(self) -> list[str]:
        """Every non-root node name; each identifies the edge to its parent."""
        return [n.name for n in _walk(self.root) if n is not self.root]

    def leaf_indices(self, name: str) -> np.ndarray:
        """Schema column indices of all leaves under the named node."""
        return self._leafidx[name]

    def n_params(self) -> int:
        """Parameter count of the distribution: one per edge."""
        return len(self.edges())

    def paths(self) -> dict[str, list[tuple[str, int]]]:
        """Leaf name -> [(interior node, child position), ...] from the root."""
        out: dict[str, list[tuple[str, int]]] = {}

        def descend(node: TreeNode, prefix):
            for pos, child in enumerate(node.children):
                step = prefix + [(node.name, pos)]
                if child.is_leaf:
                    out[child.name] = step
                else:
                    descend(child, step)

        descend(self.root, [])
        return out

    # -- labels -------------------------------------------------------------

    def branch_label(self, node: TreeNode) -> str:
        """Short label for a branch: leaf name, or leaves joined by '+'."""
        if node.is_leaf:
            return node.name
        return "+".join(self.schema.names[i] for i in self.leaf_indices(node.name))

    def layer_label(self, node: TreeNode) -> str:
        """Human label for one split, e.g. 'Root', 'hr & triple', 'hr+triple, double'."""
        if node is self.root:
            return "Root"
        parts = [self.branch_label(c) for c in node.children]
        if all(c.is_leaf for c in node.children):
            return " & ".join(parts)
        return ", ".join(parts)

    # -- equality up to ordering ---------------------------------------------

    def topology(self):
        """Hashable canonical form ignoring child order and interior names."""

        def canon(node: TreeNode):
            if node.is_leaf:
                return node.name
            return frozenset(canon(c) for c in node.children)

        return canon(self.root)

    # -- serialization -------------------------------------------------------

    def to_json(self, alpha: dict[str, float] | None = None) -> dict:
        def encode(node: TreeNode) -> dict:
            obj: dict = {"name": node.name}
            if alpha is not None and node is not self.root:
                obj["alpha"] = float(alpha[node.name])
            if not node.is_leaf:
                obj["children"] = [encode(c) for c in node.children]
            return obj

        return encode(self.root)

    @classmethod
    def from_json(cls, obj: dict, schema: ComponentSchema) -> "Tree":
        """Build a tree from nested JSON; unnamed interior nodes are auto-named."""
        counter = [0]
        taken: set[str] = set()

        def names_in(o):
            if "name" in o:
                taken.add(str(o["name"]))
            for c in o.get("children", []):
                names_in(c)

        names_in(obj)

        def fresh() -> str:
            while True:
                counter[0] += 1
                name = f"n{counter[0]}"
                if name not in taken and name not in schema.names:
                    taken.add(name)
                    return name

        def decode(o, is_root: bool) -> TreeNode:
            children = tuple(decode(c, False) for c in o.get("children", []))
            if "name" in o:
                name = str(o["name"])
            elif is_root:
                name = "root" if "root" not in taken else fresh()
                taken.add("root")
            elif children:
                name = fresh()
            else:
                raise SchemaError("leaf nodes must carry a component name")
            return TreeNode(name, children)

        return cls(decode(obj, True), schema)


def flat_tree(schema: ComponentSchema, root_name: str = "root") -> Tree:
    """The trivial tree: every component directly under the root (plain Dirichlet)."""
    leaves = tuple(TreeNode(name) for name in schema.names)
    return Tree(TreeNode(root_name, leaves), schema)


def tree_from_json_str(text: str, schema: ComponentSchema) -> Tree:
    obj = json.loads(text)
    # accept both a bare tree and documents that wrap it under "tree"
    if "tree" in obj and "name" not in obj:
        obj = obj["tree"]
    return Tree.from_json(obj, schema)


@dataclass(frozen=True)
class NddParams:
    """One positive parameter per tree edge, keyed by the child node's name."""

    tree: Tree
    alpha: dict

    def __post_init__(self):
        edges = set(self.tree.edges())
        keys = set(self.alpha)
        if keys != edges:
            missing, extra = edges - keys, keys - edges
            raise SchemaError(f"alpha keys mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, value in self.alpha.items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"alpha[{name!r}] must be positive, got {value}")

    def layer_alpha(self, node: TreeNode) -> np.ndarray:
        """Dirichlet parameters of the node's child-branch subcomposition."""
        return np.array([self.alpha[c.name] for c in node.children], dtype=float)

    def to_json(self) -> dict:
        return self.tree.to_json(alpha=self.alpha)

    @classmethod
    def from_json(cls, obj: dict, schema: ComponentSchema) -> "NddParams":
        tree = Tree.from_json(obj, schema)
        alpha: dict[str, float] = {}

        def pair(o: dict, node: TreeNode, is_root: bool):
            if not is_root:
                if "alpha" not in o:
                    raise SchemaError(f"node {o.get('name')!r} is missing its edge parameter")
                alpha[node.name] = float(o["alpha"])
            for child_obj, child_node in zip(o.get("children", []), node.children):
                pair(child_obj, child_node, False)

        pair(obj, tree.root, True)
        return cls(tree, alpha)
