"""Integer loop kernels with a numba path and a pure-numpy path.

Both paths return identical results (component numbering included), so the
backend choice never changes downstream numbers. ``USE_NUMBA`` in
:mod:`zs3._accel` picks the one exported at module level; the per-backend
implementations stay importable for tests and the benchmark.
"""
import numpy as np

from zs3._accel import USE_NUMBA, njit

_OFFSETS = {
    4: np.array([[0, 1], [1, 0]], dtype=np.int64),
    8: np.array([[0, 1], [1, 0], [1, 1], [1, -1]], dtype=np.int64),
}


def _check_connectivity(connectivity):
    if connectivity not in _OFFSETS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    return _OFFSETS[connectivity]


# -- numba path ---------------------------------------------------------------


@njit
def _label_components_loop(labels, offsets):
    rows, cols = labels.shape
    comp = np.full((rows, cols), -1, dtype=np.int32)
    stack = np.empty(rows * cols, dtype=np.int64)
    n = 0
    for start in range(rows * cols):
        r0 = start // cols
        c0 = start % cols
        if comp[r0, c0] >= 0:
            continue
        cls = labels[r0, c0]
        comp[r0, c0] = n
        stack[0] = start
        top = 1
        while top > 0:
            top -= 1
            p = stack[top]
            r = p // cols
            c = p % cols
            for k in range(offsets.shape[0]):
                for sign in (1, -1):
                    rr = r + sign * offsets[k, 0]
                    cc = c + sign * offsets[k, 1]
                    if rr < 0 or rr >= rows or cc < 0 or cc >= cols:
                        continue
                    if comp[rr, cc] >= 0 or labels[rr, cc] != cls:
                        continue
                    comp[rr, cc] = n
                    stack[top] = rr * cols + cc
                    top += 1
        n += 1
    return comp, n


@njit
def _component_edges_loop(comp, n, offsets):
    rows, cols = comp.shape
    adj = np.zeros((n, n), dtype=np.bool_)
    for r in range(rows):
        for c in range(cols):
            a = comp[r, c]
            for k in range(offsets.shape[0]):
                rr = r + offsets[k, 0]
                cc = c + offsets[k, 1]
                if rr < 0 or rr >= rows or cc < 0 or cc >= cols:
                    continue
                b = comp[rr, cc]
                if a != b:
                    adj[min(a, b), max(a, b)] = True
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                count += 1
    edges = np.empty((count, 2), dtype=np.int64)
    e = 0
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                edges[e, 0] = i
                edges[e, 1] = j
                e += 1
    return edges


@njit
def _confusion_loop(gt, pred, k):
    out = np.zeros((k, k), dtype=np.int64)
    for i in range(gt.size):
        out[gt[i], pred[i]] += 1
    return out


def label_components_numba(labels, connectivity=4):
    offsets = _check_connectivity(connectivity)
    comp, n = _label_components_loop(np.ascontiguousarray(labels, dtype=np.int64), offsets)
    return comp, int(n)


def component_edges_numba(comp, n, connectivity=4):
    offsets = _check_connectivity(connectivity)
    return _component_edges_loop(np.ascontiguousarray(comp, dtype=np.int32), int(n), offsets)


def confusion_counts_numba(gt, pred, k):
    gt = np.ascontiguousarray(gt, dtype=np.int64).ravel()
    pred = np.ascontiguousarray(pred, dtype=np.int64).ravel()
    return _confusion_loop(gt, pred, int(k))


# -- numpy path ---------------------------------------------------------------


def _neighbor_pairs(shape, offsets):
    """Flat index pairs (p, q) for every in-bounds forward neighbor offset."""
    rows, cols = shape
    idx = np.arange(rows * cols, dtype=np.int64).reshape(rows, cols)
    ps, qs = [], []
    for dr, dc in offsets:
        r_lo, r_hi = 0, rows - dr
        c_lo, c_hi = max(0, -dc), cols - max(0, dc)
        ps.append(idx[r_lo:r_hi, c_lo:c_hi].ravel())
        qs.append(idx[r_lo + dr:r_hi + dr, c_lo + dc:c_hi + dc].ravel())
    return np.concatenate(ps), np.concatenate(qs)


def label_components_numpy(labels, connectivity=4):
    offsets = _check_connectivity(connectivity)
    labels = np.asarray(labels)
    flat = labels.ravel()
    p, q = _neighbor_pairs(labels.shape, offsets)
    same = flat[p] == flat[q]
    p, q = p[same], q[same]
    # min-label propagation with pointer jumping; roots are the first raster pixel
    lab = np.arange(flat.size, dtype=np.int64)
    while True:
        prev = lab
        lo = np.minimum(lab[p], lab[q])
        lab = lab.copy()
        np.minimum.at(lab, p, lo)
        np.minimum.at(lab, q, lo)
        lab = lab[lab]
        if np.array_equal(lab, prev):
            break
    roots, comp = np.unique(lab, return_inverse=True)
    return comp.reshape(labels.shape).astype(np.int32), int(roots.size)


def component_edges_numpy(comp, n, connectivity=4):
    offsets = _check_connectivity(connectivity)
    comp = np.asarray(comp)
    flat = comp.ravel().astype(np.int64)
    p, q = _neighbor_pairs(comp.shape, offsets)
    a, b = flat[p], flat[q]
    diff = a != b
    lo = np.minimum(a[diff], b[diff])
    hi = np.maximum(a[diff], b[diff])
    code = np.unique(lo * n + hi)
    return np.stack([code // n, code % n], axis=1).astype(np.int64).reshape(-1, 2)


def confusion_counts_numpy(gt, pred, k):
    gt = np.asarray(gt, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    return np.bincount(gt * k + pred, minlength=k * k).reshape(k, k).astype(np.int64)


if USE_NUMBA:
    BACKEND = "numba"
    label_components = label_components_numba
    component_edges = component_edges_numba
    confusion_counts = confusion_counts_numba
else:
    BACKEND = "numpy"
    label_components = label_components_numpy
    component_edges = component_edges_numpy
    confusion_counts = confusion_counts_numpy
