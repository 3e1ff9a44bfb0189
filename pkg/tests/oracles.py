"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's kernels: tables are Python lists of
``(src, dst, t, idx)`` tuples and every distance is a literal double loop.
"""

from __future__ import annotations

import math


class NaiveTable:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.lists: dict[int, list[tuple[int, int, int, int]]] = {}
        self.count = 0

    def insert(self, s: int, d: int, t: int) -> None:
        rec = (s, d, t, self.count)
        self.count += 1
        for owner in {s, d}:
            lst = self.lists.setdefault(owner, [])
            lst.insert(0, rec)
            del lst[self.capacity:]

    def entries(self, node: int) -> list[tuple[int, int, int, int]]:
        return list(self.lists.get(node, []))

    def partners(self, node: int, k: int | None = None) -> list[int]:
        out = []
        for s, d, _, _ in self.lists.get(node, [])[:k]:
            out.append(d if s == node else s)
        return out


def replay(events, capacity: int) -> NaiveTable:
    tab = NaiveTable(capacity)
    for s, d, t in events:
        tab.insert(int(s), int(d), int(t))
    return tab


def overlap(xs: list[int], ys: list[int]) -> float:
    if not xs or not ys:
        return 0.0
    hits = 0
    for x in xs:
        for y in ys:
            if x == y:
                hits += 1
    return hits / (len(xs) * len(ys))


def d0(a: int, b: int, tab: NaiveTable) -> float:
    pb = tab.partners(b)
    if not pb:
        return 0.0
    return sum(1 for x in pb if x == a) / len(pb)


def d1(a: int, b: int, tab: NaiveTable) -> float:
    return overlap(tab.partners(a), tab.partners(b))


def expand2(a: int, tab: NaiveTable) -> list[int]:
    w = math.isqrt(tab.capacity)
    out = []
    for y in tab.partners(a, w):
        out.extend(tab.partners(y, w))
    return out


def d2(a: int, b: int, tab: NaiveTable) -> float:
    return overlap(expand2(a, tab), expand2(b, tab))


def history(us: int, vs: int, tab: NaiveTable, n_latest: int) -> list[tuple[int, int, int, int]]:
    seen = {}
    for node in (us, vs):
        for rec in tab.entries(node)[:n_latest]:
            seen[rec[3]] = rec
    return [seen[k] for k in sorted(seen)]


def rows(us: int, vs: int, tab: NaiveTable, n_latest: int, enhanced: bool = True) -> list[list[float]]:
    hist = history(us, vs, tab, n_latest)
    fns = (d0, d1, d2) if enhanced else (d1,)
    if not hist:
        return [[0.0] * (4 * len(fns))]
    out = []
    for s, d, _, _ in hist:
        out.append([f(q, x, tab) for f in fns for q in (us, vs) for x in (s, d)])
    return out


def rank(pos: float, negs) -> tuple[int, int, float]:
    opt = sum(1 for x in negs if x > pos)
    pes = sum(1 for x in negs if x >= pos)
    return opt, pes, 0.5 * (opt + pes) + 1.0
