"""Minimal connecting trees over the schema join graph.

Tables are nodes, joinable pairs are unit-weight edges.  Small instances are
solved exactly with the Dreyfus-Wagner dynamic program; larger ones fall back
to the metric-closure MST 2-approximation.
"""

from __future__ import annotations

from collections import deque
from itertools import combinations


class UnreachableTerminals(Exception):
    """Raised when required tables cannot all be connected in the join graph."""

    def __init__(self, terminals: frozenset):
        self.terminals = terminals
        names = ", ".join(sorted(terminals))
        super().__init__(f"tables cannot be connected through the join graph: {names}")


def _adjacency(nodes: frozenset, edges) -> dict:
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for u, v in edges:
        if u in adj and v in adj and u != v:
            adj[u].add(v)
            adj[v].add(u)
    return adj


def _bfs(adj: dict, source: str) -> tuple[dict, dict]:
    dist = {source: 0}
    parent: dict[str, str] = {}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


def _path_nodes(parent: dict, source: str, target: str) -> set[str]:
    out = {target}
    node = target
    while node != source:
        node = parent[node]
        out.add(node)
    return out


class _Metric:
    """All-pairs unit-weight shortest paths with parent trees."""

    def __init__(self, adj: dict):
        self.adj = adj
        self.dist: dict[str, dict] = {}
        self.parent: dict[str, dict] = {}
        for node in adj:
            self.dist[node], self.parent[node] = _bfs(adj, node)

    def d(self, u: str, v: str) -> int | None:
        return self.dist[u].get(v)

    def path(self, u: str, v: str) -> set[str]:
        return _path_nodes(self.parent[u], u, v)


def _exact_tree(metric: _Metric, nodes: list, terminals: list) -> frozenset:
    """Dreyfus-Wagner dynamic program; returns the node set of an optimal tree."""
    index = {t: 1 << i for i, t in enumerate(terminals)}
    full = (1 << len(terminals)) - 1
    INF = float("inf")
    # dp[(mask, v)] = cost of the best tree spanning {terminals in mask} + {v}
    dp: dict[tuple[int, str], float] = {}
    choice: dict[tuple[int, str], tuple] = {}
    for t in terminals:
        for v in nodes:
            d = metric.d(t, v)
            dp[(index[t], v)] = INF if d is None else d
            choice[(index[t], v)] = ("leaf", t)
    masks = sorted(range(1, full + 1), key=lambda m: bin(m).count("1"))
    for mask in masks:
        if bin(mask).count("1") < 2:
            continue
        for v in nodes:
            best = INF
            pick = None
            sub = (mask - 1) & mask
            while sub:
                rest = mask ^ sub
                if rest and sub < rest:  # each split considered once
                    cost = dp[(sub, v)] + dp[(rest, v)]
                    if cost < best:
                        best = cost
                        pick = ("merge", sub, rest)
                sub = (sub - 1) & mask
            dp[(mask, v)] = best
            choice[(mask, v)] = pick
        # Relax tree costs along shortest paths (grow step).
        for v in nodes:
            for u in nodes:
                d = metric.d(u, v)
                if d is None:
                    continue
                cost = dp[(mask, u)] + d
                if cost < dp[(mask, v)]:
                    dp[(mask, v)] = cost
                    choice[(mask, v)] = ("grow", u)

    root = terminals[0]
    if dp[(full, root)] == INF:
        raise UnreachableTerminals(frozenset(terminals))

    result: set[str] = set()

    def rebuild(mask: int, v: str) -> None:
        what = choice[(mask, v)]
        if what is None:
            result.add(v)
            return
        if what[0] == "leaf":
            result.update(metric.path(what[1], v))
            return
        if what[0] == "grow":
            u = what[1]
            result.update(metric.path(u, v))
            rebuild(mask, u)
            return
        _, sub, rest = what
        result.add(v)
        rebuild(sub, v)
        rebuild(rest, v)

    rebuild(full, root)
    return frozenset(result)


def _approx_tree(metric: _Metric, terminals: list) -> frozenset:
    """Metric-closure MST 2-approximation via Kruskal union-find."""
    pairs = []
    for a, b in combinations(terminals, 2):
        d = metric.d(a, b)
        if d is None:
            raise UnreachableTerminals(frozenset(terminals))
        pairs.append((d, a, b))
    pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    parent = {t: t for t in terminals}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    result: set[str] = set(terminals)
    taken = 0
    for d, a, b in pairs:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        parent[ra] = rb
        result.update(metric.path(a, b))
        taken += 1
        if taken == len(terminals) - 1:
            break
    return frozenset(result)


def _prepared(nodes, edges, terminals):
    """Shared validation; returns (metric, sorted nodes, sorted terminals)."""
    node_set = frozenset(nodes)
    terminal_set = frozenset(terminals)
    missing = terminal_set - node_set
    if missing:
        raise UnreachableTerminals(frozenset(missing))
    adj = _adjacency(node_set, edges)
    metric = _Metric(adj)
    ordered_terminals = sorted(terminal_set)
    base = ordered_terminals[0]
    unreachable = {t for t in ordered_terminals[1:] if metric.d(base, t) is None}
    if unreachable:
        raise UnreachableTerminals(frozenset(unreachable | {base}))
    return metric, sorted(node_set), ordered_terminals


def steiner_exact(nodes, edges, terminals) -> frozenset:
    """Optimal Steiner node set via the Dreyfus-Wagner dynamic program."""
    if not frozenset(terminals):
        return frozenset()
    if len(frozenset(terminals)) == 1:
        return frozenset(terminals)
    metric, ordered_nodes, ordered_terminals = _prepared(nodes, edges, terminals)
    return _exact_tree(metric, ordered_nodes, ordered_terminals)


def steiner_approx(nodes, edges, terminals) -> frozenset:
    """Metric-closure Kruskal 2-approximation of the Steiner node set."""
    if not frozenset(terminals):
        return frozenset()
    if len(frozenset(terminals)) == 1:
        return frozenset(terminals)
    metric, _, ordered_terminals = _prepared(nodes, edges, terminals)
    return _approx_tree(metric, ordered_terminals)


def steiner_tree_nodes(nodes, edges, terminals, *,
                       exact_node_limit: int = 20,
                       exact_terminal_limit: int = 12) -> frozenset:
    """Smallest table set connecting all terminal tables in the join graph.

    Exact for small instances, 2-approximate beyond the limits.  Raises
    UnreachableTerminals when the terminals do not share a component.
    """
    terminal_set = frozenset(terminals)
    if not terminal_set:
        return frozenset()
    if len(terminal_set) == 1:
        missing = terminal_set - frozenset(nodes)
        if missing:
            raise UnreachableTerminals(frozenset(missing))
        return terminal_set
    metric, ordered_nodes, ordered_terminals = _prepared(nodes, edges, terminals)
    if (len(ordered_nodes) <= exact_node_limit
            and len(terminal_set) <= exact_terminal_limit):
        return _exact_tree(metric, ordered_nodes, ordered_terminals)
    return _approx_tree(metric, ordered_terminals)
