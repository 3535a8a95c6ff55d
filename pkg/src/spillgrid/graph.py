"""Evaluation ordering over the formula dependency graph."""

from __future__ import annotations

import heapq
from typing import Callable, Hashable, Iterable, Mapping


def strongly_connected(nodes: Iterable[Hashable], deps: Mapping) -> list[list]:
    """Tarjan's algorithm, iterative. ``deps[n]`` lists the nodes n depends on."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    out: list[list] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(deps.get(root, ())))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for dep in it:
                if dep not in deps:
                    continue
                if dep not in index:
                    index[dep] = low[dep] = counter
                    counter += 1
                    stack.append(dep)
                    on_stack.add(dep)
                    work.append((dep, iter(deps.get(dep, ()))))
                    advanced = True
                    break
                if dep in on_stack:
                    low[node] = min(low[node], index[dep])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(comp)
    return out


def plan_order(deps: Mapping, key: Callable = lambda n: n) -> tuple[list, list[list]]:
    """Topologically order ``deps`` (node -> its dependencies).

    Dependencies outside the mapping are treated as already computed. Ties
    are broken by ``key``. Strongly connected components with more than one
    member, or a self-loop, are reported as cycles; their members appear in
    the order as a block, at the point where the whole component is ready.
    """
    nodes = sorted(deps, key=key)
    comps = strongly_connected(nodes, deps)
    comp_of = {}
    for ci, comp in enumerate(comps):
        comp.sort(key=key)
        for n in comp:
            comp_of[n] = ci
    cycles = [c for c in comps if len(c) > 1 or c[0] in deps.get(c[0], ())]

    pending = [0] * len(comps)
    users: list[set] = [set() for _ in comps]
    for n in nodes:
        cn = comp_of[n]
        for d in deps[n]:
            if d in comp_of and comp_of[d] != cn and cn not in users[comp_of[d]]:
                users[comp_of[d]].add(cn)
                pending[cn] += 1
    heap = [(key(comps[ci][0]), ci) for ci in range(len(comps)) if pending[ci] == 0]
    heapq.heapify(heap)
    order: list = []
    while heap:
        _, ci = heapq.heappop(heap)
        order.extend(comps[ci])
        for u in users[ci]:
            pending[u] -= 1
            if pending[u] == 0:
                heapq.heappush(heap, (key(comps[u][0]), u))
    cycles.sort(key=lambda c: key(c[0]))
    return order, cycles
