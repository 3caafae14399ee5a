"""Slow, obviously-correct reference implementations used only by the tests."""
from collections import deque

import numpy as np


def confusion_oracle(gt, pred, k):
    conf = [[0] * k for _ in range(k)]
    for g, p in zip(np.ravel(gt).tolist(), np.ravel(pred).tolist()):
        conf[g][p] += 1
    return np.array(conf, dtype=np.int64)


def flood_fill_oracle(labels, connectivity=4):
    """BFS components in raster order of their first pixel, then a pairwise boundary scan.

    Returns ``(components, node classes, sorted edge list)``.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comp = -np.ones((h, w), dtype=np.int64)
    classes = []
    for i in range(h):
        for j in range(w):
            if comp[i, j] >= 0:
                continue
            cid = len(classes)
            classes.append(int(labels[i, j]))
            comp[i, j] = cid
            queue = deque([(i, j)])
            while queue:
                a, b = queue.popleft()
                for da, db in steps:
                    na, nb = a + da, b + db
                    if 0 <= na < h and 0 <= nb < w and comp[na, nb] < 0 and labels[na, nb] == labels[i, j]:
                        comp[na, nb] = cid
                        queue.append((na, nb))
    edges = set()
    for i in range(h):
        for j in range(w):
            for da, db in steps:
                na, nb = i + da, j + db
                if 0 <= na < h and 0 <= nb < w and comp[na, nb] != comp[i, j]:
                    edges.add((min(comp[i, j], comp[na, nb]), max(comp[i, j], comp[na, nb])))
    return comp, classes, sorted(edges)


def dense_normalized_adjacency(n, edges):
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = np.diag(a.sum(axis=1) ** -0.5)
    return d @ a @ d


def pseudo_label_oracle(scores, unseen, p):
    """Sort-and-truncate selection over one scene's (P, C) score matrix."""
    import math

    rows = []
    for idx, s in enumerate(scores):
        e = np.exp(s - s.max())
        prob = e / e.sum()
        c = int(np.argmax(s))
        if c in unseen:
            rows.append((-prob[c], idx, c))
    rows.sort()
    keep = rows[:math.ceil(p * len(rows))]
    return [r[1] for r in keep], [r[2] for r in keep]


def mmd_loop(x, y, bandwidths):
    def k(a, b, s):
        return np.exp(-np.sum((a - b) ** 2) / (2 * s * s))

    total = 0.0
    for s in bandwidths:
        kxx = sum(k(a, b, s) for a in x for b in x) / len(x) ** 2
        kyy = sum(k(a, b, s) for a in y for b in y) / len(y) ** 2
        kxy = sum(k(a, b, s) for a in x for b in y) / (len(x) * len(y))
        total += kxx + kyy - 2 * kxy
    return total
