"""Hierarchical multiple testing over the ROI / condition / change / parameter tree.

Two procedures walk the same hypothesis tree.  The inheritance procedure
controls the family-wise error rate: an alpha budget enters at the top,
splits over subtrees (by default proportionally to the number of leaf
hypotheses they carry), flows down through rejected nodes only, and is
re-divided among the still-open part of a family whenever a member's
subtree is exhausted — so budgets only ever grow.  The tree BH procedure
controls the selective FDR: the root family is tested by Benjamini-Hochberg
at level q, and each family below a rejected node is tested at the parent
family's level scaled by its fraction of rejections.

Budgets in the inheritance procedure are exact rationals (fractions of
alpha), so the published critical values are reproduced exactly rather
than to float rounding.  Parent p-values, where not supplied, are Simes
combinations of their children's.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .util import DataError

__all__ = [
    "TreeNode",
    "HypothesisTree",
    "simes_pvalue",
    "bh_reject",
    "inheritance_reject",
    "tree_selective_fdr",
]


@dataclass
class TreeNode:
    label: str
    level: str = ""
    p: float | None = None
    children: list = field(default_factory=list)
    # annotations written by the procedures
    rejected: bool = False
    critical: float | None = None
    critical_fraction: Fraction | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def add(self, child: "TreeNode") -> "TreeNode":
        self.children.append(child)
        return child


@dataclass
class HypothesisTree:
    root: TreeNode

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]

    def fill_parent_pvalues(self) -> None:
        """Simes-combine children upward wherever a p-value is missing."""

        def visit(node: TreeNode) -> None:
            for c in node.children:
                visit(c)
            if node.p is None and node.children:
                child_ps = [c.p for c in node.children]
                if any(p is None for p in child_ps):
                    raise DataError(f"node {node.label!r} has children without p-values")
                node.p = simes_pvalue(child_ps)

        visit(self.root)

    def reset_annotations(self) -> None:
        for n in self.nodes():
            n.rejected = False
            n.critical = None
            n.critical_fraction = None

    def to_json_dict(self) -> dict:
        out = []

        def visit(node: TreeNode, path: str) -> None:
            here = f"{path}/{node.label}" if path else node.label
            out.append({
                "path": here,
                "level": node.level,
                "p": node.p,
                "critical": node.critical,
                "rejected": node.rejected,
            })
            for c in node.children:
                visit(c, here)

        visit(self.root, "")
        return {"nodes": out}

    def _validated_pvalues(self) -> None:
        self.fill_parent_pvalues()
        for n in self.nodes():
            if n.p is None:
                raise DataError(f"node {n.label!r} has no p-value")
            if not 0.0 <= n.p <= 1.0:
                raise DataError(f"node {n.label!r} has p outside [0, 1]")


def simes_pvalue(pvalues) -> float:
    """Simes combination: min over sorted p of m * p_(i) / i."""
    p = np.asarray(list(pvalues), dtype=float)
    if p.size == 0:
        raise DataError("no p-values to combine")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    p = np.sort(p)
    return float(np.min(m * p / np.arange(1, m + 1)))


def bh_reject(pvalues, q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up at level q; boolean mask in input order."""
    p = np.asarray(list(pvalues), dtype=float)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DataError("p-values must lie in [0, 1]")
    if not 0 < q:
        raise DataError("q must be positive")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    passed = np.flatnonzero(p[order] <= q * np.arange(1, m + 1) / m)
    if passed.size == 0:
        return np.zeros(m, dtype=bool)
    return p <= p[order[passed[-1]]]


# ---------------------------------------------------------------------------
# inheritance procedure (FWER)
# ---------------------------------------------------------------------------

def _open_leaves(node: TreeNode) -> int:
    if node.is_leaf:
        return 0 if node.rejected else 1
    return sum(_open_leaves(c) for c in node.children)


def _total_leaves(node: TreeNode) -> int:
    if node.is_leaf:
        return 1
    return sum(_total_leaves(c) for c in node.children)


def inheritance_reject(
    tree: HypothesisTree,
    alpha: float,
    weights: str = "leaf_count",
) -> HypothesisTree:
    """Annotate the tree with the inheritance procedure at level alpha.

    The full budget starts above the root children and is divided among
    subtrees that still contain open (unrejected) leaves — proportionally to
    their open-leaf counts (default) or equally.  A node is tested at alpha
    times its share; only rejected nodes pass their share on to their
    children.  Shares are recomputed to a fixed point, so exhausting one
    subtree grows its siblings' budgets.  Critical values are recorded as
    exact fractions of alpha.
    """
    if not 0 < alpha <= 1:
        raise DataError("alpha must be in (0, 1]")
    if weights not in ("leaf_count", "equal"):
        raise DataError(f"unknown weight scheme {weights!r}")
    tree._validated_pvalues()
    tree.reset_annotations()
    root = tree.root

    if root.is_leaf:
        # degenerate single-hypothesis tree: a plain alpha-level test
        root.critical_fraction = Fraction(1)
        root.critical = alpha
        root.rejected = bool(root.p <= alpha)
        return tree

    def allocate(node: TreeNode, budget: Fraction) -> bool:
        # a subtree keeps its full share while it has any open leaf; only a
        # fully exhausted subtree drops out, re-dividing its share among the
        # remaining siblings (budgets never shrink)
        changed = False
        open_children = [c for c in node.children if _open_leaves(c) > 0]
        if not open_children:
            return False
        if weights == "leaf_count":
            total = sum(_total_leaves(c) for c in open_children)
            shares = [
                budget * Fraction(_total_leaves(c), total) for c in open_children
            ]
        else:
            shares = [budget / len(open_children)] * len(open_children)
        for c, share in zip(open_children, shares):
            c.critical_fraction = share
            c.critical = float(share.numerator * alpha) / share.denominator
            if not c.rejected and c.p <= c.critical:
                c.rejected = True
                changed = True
            if c.rejected and not c.is_leaf:
                changed = allocate(c, share) or changed
        return changed

    while allocate(root, Fraction(1)):
        pass
    return tree


# ---------------------------------------------------------------------------
# tree BH procedure (selective FDR)
# ---------------------------------------------------------------------------

def tree_selective_fdr(tree: HypothesisTree, q: float) -> HypothesisTree:
    """Annotate the tree with the selective-FDR (tree BH) procedure.

    The root family is tested by BH at level q.  Below each rejected node,
    the child family is tested at the parent family's level times that
    family's rejected fraction, accumulating multiplicatively down the
    path.  Families below non-rejected nodes are never tested.
    """
    if not 0 < q <= 1:
        raise DataError("q must be in (0, 1]")
    tree._validated_pvalues()
    tree.reset_annotations()
    root = tree.root

    if root.is_leaf:
        root.critical = q
        root.rejected = bool(root.p <= q)
        return tree

    def step(family: list, q_eff: float) -> None:
        mask = bh_reject([n.p for n in family], q_eff)
        for node, rej in zip(family, mask):
            node.rejected = bool(rej)
            node.critical = q_eff
        r = int(mask.sum())
        if r == 0:
            return
        q_next = q_eff * r / len(family)
        for node in family:
            if node.rejected and node.children:
                step(node.children, q_next)

    step(root.children, q)
    return tree
