"""Brute-force references for the trajectory distances.

Every alignment, coupling, edit script or common subsequence is listed
explicitly and scored; nothing here shares code with the dynamic programs.
"""
from functools import lru_cache
from itertools import combinations, product

import numpy as np


@lru_cache(maxsize=None)
def _monotone_paths(n, m):
    """All cell sequences (0,0) -> (n-1,m-1) using steps (1,0), (0,1), (1,1)."""
    if n == 1 and m == 1:
        return [((0, 0),)]
    out = []
    for di, dj in ((1, 0), (0, 1), (1, 1)):
        if n - di >= 1 and m - dj >= 1:
            out += [p + ((n - 1, m - 1),) for p in _monotone_paths(n - di, m - dj)]
    return out


@lru_cache(maxsize=None)
def _edit_scripts(n, m):
    """All edit scripts turning n items into m, as tuples of (op, i, j)."""
    if n == 0 and m == 0:
        return [()]
    out = []
    if n and m:
        out += [s + (("sub", n - 1, m - 1),) for s in _edit_scripts(n - 1, m - 1)]
    if n:
        out += [s + (("del", n - 1, -1),) for s in _edit_scripts(n - 1, m)]
    if m:
        out += [s + (("ins", -1, m - 1),) for s in _edit_scripts(n, m - 1)]
    return out


def _pad(rows, sentinel):
    width = max(len(r) for r in rows)
    return np.array([list(r) + [sentinel] * (width - len(r)) for r in rows])


@lru_cache(maxsize=None)
def _coupling_index(n, m):
    # flat index into an [n*m + 1] table; the last slot is a zero-cost sentinel
    return _pad([[i * m + j for i, j in p] for p in _monotone_paths(n, m)], n * m)


@lru_cache(maxsize=None)
def _edit_index(n, m):
    # table layout: n*m substitutions, n deletions, m insertions, sentinel
    def idx(op, i, j):
        return {"sub": i * m + j, "del": n * m + i, "ins": n * m + n + j}[op]
    return _pad([[idx(*o) for o in s] for s in _edit_scripts(n, m)], n * m + n + m)


def _pointwise(As, Bs):
    d = As[:, :, None, :] - Bs[:, None, :, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])


def _to_point(X, g):
    d = X - np.asarray(g, dtype=np.float64)
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])


def _sequential_sum(costs):
    # left-to-right accumulation, the order a forward DP adds costs in
    return np.add.accumulate(costs, axis=-1)[..., -1]


def batch(As, Bs, eps=0.05, gap=(0.0, 0.0)):
    """Reference DTW, discrete Frechet, ERP, EDR and LCSS length for stacked pairs.

    ``As`` is ``[b, n, 2]`` and ``Bs`` is ``[b, m, 2]``; all pairs share lengths.
    """
    As, Bs = np.asarray(As, dtype=np.float64), np.asarray(Bs, dtype=np.float64)
    b, n, m = len(As), As.shape[1], Bs.shape[1]
    D = _pointwise(As, Bs).reshape(b, n * m)
    zero = np.zeros((b, 1))

    ci = _coupling_index(n, m)
    table = np.concatenate([D, zero], axis=1)[:, ci]
    out = {"dtw": _sequential_sum(table).min(axis=1), "frechet_discrete": table.max(axis=2).min(axis=1)}

    ei = _edit_index(n, m)
    erp_t = np.concatenate([D, _to_point(As, gap), _to_point(Bs, gap), zero], axis=1)
    out["erp"] = _sequential_sum(erp_t[:, ei]).min(axis=1)
    edr_t = np.concatenate([(D > eps).astype(float), np.ones((b, n + m)), zero], axis=1)
    out["edr"] = edr_t[:, ei].sum(axis=2).min(axis=1)

    match = (D <= eps).reshape(b, n, m)
    best = np.zeros(b, dtype=int)
    for k in range(1, min(n, m) + 1):
        ia = np.array(list(combinations(range(n), k)))
        jb = np.array(list(combinations(range(m), k)))
        ok = match[:, ia[:, None, :], jb[None, :, :]].all(axis=-1).any(axis=(1, 2))
        best[ok] = k
    out["lcss_length"] = best
    return out


def point_segment_bruteforce(p, a, b):
    """min of endpoint distances and, if the foot falls inside, the perpendicular."""
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    cands = [np.linalg.norm(p - a), np.linalg.norm(p - b)]
    ab = b - a
    L = np.linalg.norm(ab)
    if L > 0:
        u = ab / L
        s = np.dot(p - a, u)
        if 0 <= s <= L:
            cands.append(abs(u[0] * (p - a)[1] - u[1] * (p - a)[0]))
    return min(cands)


def to_path_bruteforce(P, Q):
    P, Q = np.asarray(P, dtype=np.float64), np.asarray(Q, dtype=np.float64)
    if len(Q) == 1:
        return np.linalg.norm(P - Q[0], axis=1)
    return np.array([min(point_segment_bruteforce(p, Q[j], Q[j + 1]) for j in range(len(Q) - 1))
                     for p in P])


def hausdorff(A, B):
    return max(to_path_bruteforce(A, B).max(), to_path_bruteforce(B, A).max())


def sspd(A, B):
    return 0.5 * (to_path_bruteforce(A, B).mean() + to_path_bruteforce(B, A).mean())


def grid_paths(max_len):
    pts = [(x, y) for x in range(3) for y in range(3)]
    return [np.array(p, dtype=float) for L in range(1, max_len + 1) for p in product(pts, repeat=L)]
