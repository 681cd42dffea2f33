"""Pure-Python max-flow on a 4-connected pixel grid (Dinic's algorithm).

Fallback twin of the compiled extension in ``texweave._maxflow``; both
expose ``grid_mincut`` with identical semantics so either backend can
serve the graph-cut seam search.
"""

from collections import deque

import numpy as np

INF_CAP = 1e18


def grid_mincut(cap_right, cap_down, src_mask, sink_mask):
    """Min s-t cut of a grid graph with per-edge capacities.

    cap_right[r, c] joins (r, c) and (r, c+1); cap_down[r, c] joins
    (r, c) and (r+1, c); both directions share the capacity. Pixels in
    src_mask / sink_mask get infinite-capacity terminal arcs. Returns
    (flow, labels) where labels[r, c] is True when the pixel stays on
    the source side; among minimum cuts the source side is maximal.
    """
    cap_right = np.asarray(cap_right, dtype=np.float64)
    cap_down = np.asarray(cap_down, dtype=np.float64)
    src_mask = np.asarray(src_mask, dtype=bool)
    sink_mask = np.asarray(sink_mask, dtype=bool)
    h, w = src_mask.shape
    n = h * w
    s, t = n, n + 1

    # adjacency in flat arrays: paired arcs, arc^1 is the reverse
    head = []
    nxt = []
    cap = []
    first = [-1] * (n + 2)

    def add_edge(u, v, c_uv, c_vu):
        nonlocal head, nxt, cap, first
        head.append(v); cap.append(c_uv); nxt.append(first[u])
        first[u] = len(head) - 1
        head.append(u); cap.append(c_vu); nxt.append(first[v])
        first[v] = len(head) - 1

    for r in range(h):
        base = r * w
        for c in range(w - 1):
            cc = cap_right[r, c]
            if cc > 0:
                add_edge(base + c, base + c + 1, cc, cc)
    for r in range(h - 1):
        for c in range(w):
            cc = cap_down[r, c]
            if cc > 0:
                add_edge(r * w + c, (r + 1) * w + c, cc, cc)
    for r in range(h):
        for c in range(w):
            u = r * w + c
            if src_mask[r, c]:
                add_edge(s, u, INF_CAP, 0.0)
            if sink_mask[r, c]:
                add_edge(u, t, INF_CAP, 0.0)

    level = [0] * (n + 2)
    it = [0] * (n + 2)
    flow = 0.0

    def bfs():
        for i in range(n + 2):
            level[i] = -1
        q = deque([s])
        level[s] = 0
        while q:
            u = q.popleft()
            e = first[u]
            while e != -1:
                v = head[e]
                if cap[e] > 1e-12 and level[v] < 0:
                    level[v] = level[u] + 1
                    q.append(v)
                e = nxt[e]
        return level[t] >= 0

    def dfs(u, pushed):
        if u == t:
            return pushed
        while it[u] != -1:
            e = it[u]
            v = head[e]
            if cap[e] > 1e-12 and level[v] == level[u] + 1:
                d = dfs(v, min(pushed, cap[e]))
                if d > 0:
                    cap[e] -= d
                    cap[e ^ 1] += d
                    return d
            it[u] = nxt[e]
        return 0.0

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, n + 64))
    try:
        while bfs():
            for i in range(n + 2):
                it[i] = first[i]
            while True:
                pushed = dfs(s, INF_CAP)
                if pushed <= 0:
                    break
                flow += pushed
    finally:
        sys.setrecursionlimit(old_limit)

    # maximal source side: everything that cannot reach t in the residual
    reaches_t = [False] * (n + 2)
    q = deque([t])
    reaches_t[t] = True
    while q:
        u = q.popleft()
        e = first[u]
        while e != -1:
            v = head[e]
            # residual arc v -> u exists when the paired arc has capacity
            if not reaches_t[v] and cap[e ^ 1] > 1e-12:
                reaches_t[v] = True
                q.append(v)
            e = nxt[e]

    labels = np.empty((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            labels[r, c] = not reaches_t[r * w + c]
    return flow, labels
