"""Ontology graphs: observed codes as leaves under a category hierarchy."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .emr import CodeKind
from .exceptions import CoverageError, ParseError, StructureError, UnknownCodeError

SUPER_ROOT = "__root__"


def parse_hierarchy(lines, path="<hierarchy>"):
    """Read ``child<TAB>parent`` lines into a child -> parent mapping.

    A root is declared either by a self-referential line or by a line
    holding only the code. Roots map to ``None``. Codes that appear only
    as a parent are roots too.
    """
    parent = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) == 1 or (len(parts) == 2 and parts[1] == ""):
            child, par = parts[0], None
        elif len(parts) == 2:
            child, par = parts
            if par == child:
                par = None
        else:
            raise ParseError("expected 'child<TAB>parent'", lineno, path)
        if not child:
            raise ParseError("empty child code", lineno, path)
        if child in parent and parent[child] is not None and parent[child] != par:
            raise ParseError(f"{child!r} has two parents: {parent[child]!r} and {par!r}", lineno, path)
        if parent.get(child) is None:
            parent[child] = par
    for par in [p for p in parent.values() if p is not None]:
        parent.setdefault(par, None)
    return parent


def load_hierarchy(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_hierarchy(fh, str(path))


class OntologyGraph:
    """Leaves (observed codes) plus their ancestor closure.

    Node indices: leaves first, in the order given (normally vocabulary
    order), then ancestors sorted by height (distance to the deepest leaf
    below) and name, so every child precedes its parent.
    """

    def __init__(self, kind, nodes, n_leaves, parent):
        self.kind = CodeKind(kind)
        self.nodes = tuple(nodes)
        self.n_leaves = n_leaves
        self._parent = tuple(parent)
        self._index = {c: i for i, c in enumerate(self.nodes)}
        children = [[] for _ in self.nodes]
        for i, p in enumerate(self._parent):
            if p is not None:
                children[p].append(i)
        self._children = tuple(tuple(sorted(c)) for c in children)
        height = np.zeros(len(self.nodes), dtype=int)
        for i in range(len(self.nodes)):
            j, h = i, 0
            while self._parent[j] is not None:
                j = self._parent[j]
                h += 1
                height[j] = max(height[j], h)
        self.height = height

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"OntologyGraph({self.kind.value}, leaves={self.n_leaves}, nodes={len(self)})"

    @property
    def n_edges(self):
        return sum(p is not None for p in self._parent)

    @property
    def leaves(self):
        return self.nodes[: self.n_leaves]

    def index(self, code):
        if isinstance(code, (int, np.integer)):
            if not 0 <= code < len(self.nodes):
                raise UnknownCodeError(f"node index {code} out of range")
            return int(code)
        try:
            return self._index[code]
        except KeyError:
            raise UnknownCodeError(f"unknown {self.kind.value} code {code!r}") from None

    def parent(self, code):
        return self._parent[self.index(code)]

    def ancestors(self, code):
        """Ancestor indices from the direct parent up to the root."""
        out = []
        j = self._parent[self.index(code)]
        while j is not None:
            out.append(j)
            j = self._parent[j]
        return out

    def children(self, code):
        return self._children[self.index(code)]

    def pa(self, code):
        return {self.nodes[j] for j in self.ancestors(code)}

    def ch(self, code):
        return {self.nodes[j] for j in self.children(code)}

    def is_leaf(self, code):
        return self.index(code) < self.n_leaves

    def edges(self):
        return [(i, p) for i, p in enumerate(self._parent) if p is not None]

    def bottom_up_levels(self, include_self=True):
        """Non-leaf nodes grouped by height with their pass-1 neighborhoods.

        Yields ``(centers, mask)`` where ``mask[r, j]`` is true when node ``j``
        is a direct child of ``centers[r]`` (or the center itself when
        ``include_self``).
        """
        inner = np.arange(self.n_leaves, len(self.nodes))
        levels = []
        for h in sorted(set(self.height[inner].tolist())):
            centers = inner[self.height[inner] == h]
            mask = np.zeros((len(centers), len(self.nodes)), dtype=bool)
            for r, c in enumerate(centers):
                mask[r, list(self._children[c])] = True
                if include_self:
                    mask[r, c] = True
            levels.append((centers, mask))
        return levels

    def top_down_mask(self, ancestors="all"):
        """Pass-2 neighborhoods: each leaf with all its ancestors (or its parent)."""
        mask = np.zeros((self.n_leaves, len(self.nodes)), dtype=bool)
        for i in range(self.n_leaves):
            mask[i, i] = True
            if ancestors == "all":
                mask[i, self.ancestors(i)] = True
            elif ancestors == "parent":
                if self._parent[i] is not None:
                    mask[i, self._parent[i]] = True
            else:
                raise ValueError(f"ancestors must be 'all' or 'parent', got {ancestors!r}")
        return mask

    def adjacency(self):
        """Symmetric 0/1 adjacency over parent-child edges."""
        a = np.zeros((len(self.nodes), len(self.nodes)))
        for i, p in self.edges():
            a[i, p] = a[p, i] = 1.0
        return a


def build_ontology_graph(codes, hierarchy, kind):
    """Build the graph over ``codes`` (leaves, in order) and their ancestors.

    ``hierarchy`` is a child -> parent mapping (see :func:`parse_hierarchy`)
    or a path to a hierarchy file. Forests get a synthetic super-root.
    """
    if isinstance(hierarchy, (str, Path)):
        hierarchy = load_hierarchy(hierarchy)
    leaves = list(codes)
    if len(set(leaves)) != len(leaves):
        raise StructureError("duplicate leaf codes")
    missing = [c for c in leaves if c not in hierarchy]
    if missing:
        raise CoverageError(f"{len(missing)} {CodeKind(kind).value} codes absent from hierarchy", missing)

    leaf_set = set(leaves)
    chain_parent = {}
    roots = set()
    for leaf in leaves:
        seen = {leaf}
        node = leaf
        while True:
            par = hierarchy.get(node)
            if par is None:
                roots.add(node)
                break
            if par in leaf_set:
                raise StructureError(f"observed code {par!r} is an ancestor of observed code {leaf!r}")
            if par in seen:
                raise StructureError(f"cycle in hierarchy through {par!r}")
            seen.add(par)
            chain_parent[node] = par
            node = par

    ancestors = set(chain_parent.values()) | (roots - leaf_set)
    if len(roots) > 1:
        if SUPER_ROOT in ancestors:
            raise StructureError(f"reserved code {SUPER_ROOT!r} used in hierarchy")
        for r in roots:
            chain_parent[r] = SUPER_ROOT
        ancestors.add(SUPER_ROOT)

    height = {}
    for leaf in leaves:
        node, h = leaf, 0
        while node in chain_parent:
            node = chain_parent[node]
            h += 1
            height[node] = max(height.get(node, 0), h)
    ordered = sorted(ancestors, key=lambda c: (height[c], c))
    nodes = leaves + ordered
    index = {c: i for i, c in enumerate(nodes)}
    parent = [index[chain_parent[c]] if c in chain_parent else None for c in nodes]
    return OntologyGraph(kind, nodes, len(leaves), parent)


def format_ontology(graph):
    """Text export: ``index<TAB>code<TAB>parent_index`` (-1 for the root)."""
    return "".join(
        f"{i}\t{c}\t{-1 if graph.parent(i) is None else graph.parent(i)}\n" for i, c in enumerate(graph.nodes)
    )
