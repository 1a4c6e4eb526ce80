"""Independent oracles and gradient-check utilities shared by the test suite.

The oracles deliberately use naive algorithms (full sorts, explicit greedy
recomputation, dense adjacency products, permutation search) so they stay
independent of the implementations they check.
"""

import itertools

import numpy as np

from pcsr import autodiff as ad


def brute_force_knn(points, k):
    """O(n^2) reference: per point, sort (squared distance, index) pairs."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    rows = []
    for i in range(n):
        cands = []
        for j in range(n):
            if j == i:
                continue
            d = float(((pts[i] - pts[j]) ** 2).sum())
            cands.append((d, j))
        cands.sort()
        rows.append([j for _, j in cands[:k]])
    return np.array(rows, dtype=np.int64)


def brute_force_knn_query(query, reference, k):
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    rows = []
    for i in range(q.shape[0]):
        cands = sorted(
            (float(((q[i] - r[j]) ** 2).sum()), j) for j in range(r.shape[0])
        )
        rows.append([j for _, j in cands[:k]])
    return np.array(rows, dtype=np.int64)


def brute_force_fps(points, m, seed_index):
    """Greedy reference recomputing all min distances from scratch each round."""
    pts = np.asarray(points, dtype=np.float64)
    selected = [seed_index]
    while len(selected) < m:
        best_j, best_d = None, -1.0
        for j in range(pts.shape[0]):
            if j in selected:
                continue
            d = min(float(((pts[j] - pts[s]) ** 2).sum()) for s in selected)
            if d > best_d:  # strict: ties keep the earlier (smaller) index
                best_j, best_d = j, d
        selected.append(best_j)
    return np.array(selected, dtype=np.int64)


def brute_force_chamfer_one_sided(gt, pred, reduction="mean"):
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    total = 0.0
    for p in gt:
        total += min(float(((p - q) ** 2).sum()) for q in pred)
    return total / gt.shape[0] if reduction == "mean" else total


def brute_force_emd(a, b):
    """Exhaustive minimum over bijections of the mean pair distance (n <= 7)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(float(np.linalg.norm(a[i] - b[perm[i]])) for i in range(n)) / n
        best = min(best, cost)
    return best


def random_rotation_matrix(rng):
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def central_diff_entry(fn, array, flat_index, eps=1e-5):
    """Central finite difference of scalar fn for one entry of an array, restoring it."""
    flat = array.ravel()
    orig = flat[flat_index]
    flat[flat_index] = orig + eps
    up = fn()
    flat[flat_index] = orig - eps
    down = fn()
    flat[flat_index] = orig
    return (up - down) / (2.0 * eps)


def max_grad_rel_error(build_loss, leaves, rng, entries_per_leaf=None, eps=1e-5):
    """Worst relative error between analytic and finite-difference gradients.

    ``build_loss`` constructs a fresh scalar loss Tensor from the current
    leaf values; ``leaves`` are Parameters or Tensors whose ``.data`` to
    perturb. Checks every entry unless entries_per_leaf caps the sample.
    """
    loss = build_loss()
    ad.backward(loss, params=leaves)
    analytic = {}
    for leaf in leaves:
        node = leaf.node if hasattr(leaf, "node") else leaf
        analytic[id(leaf)] = (
            np.zeros_like(node.data) if node.grad is None else node.grad.copy()
        )

    def value():
        return float(build_loss().data)

    worst = 0.0
    for leaf in leaves:
        node = leaf.node if hasattr(leaf, "node") else leaf
        size = node.data.size
        if entries_per_leaf is None or entries_per_leaf >= size:
            picks = np.arange(size)
        else:
            picks = rng.choice(size, size=entries_per_leaf, replace=False)
        for idx in picks:
            fd = central_diff_entry(value, node.data, int(idx), eps)
            an = analytic[id(leaf)].ravel()[int(idx)]
            scale = max(1.0e-6, abs(fd), abs(an))
            worst = max(worst, abs(fd - an) / scale)
    return worst
