"""Hot loops with a numba path and a pure-numpy fallback.

Set ``DAVIES_LAB_NUMBA=0`` to force the numpy implementations, e.g. on
platforms without a working numba or to cross-check the two paths.
"""
from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

UNREACHED = np.iinfo(np.int64).max // 4


def _env_enabled() -> bool:
    flag = os.environ.get("DAVIES_LAB_NUMBA", "1").strip().lower()
    return flag not in {"0", "false", "no", "off"}


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and _env_enabled()


@lru_cache(maxsize=None)
def neighbour_offsets(ndim: int, metric: str) -> np.ndarray:
    """Unit steps of the grid graph whose path length equals the metric."""
    if metric == "chebyshev":
        grids = np.array(np.meshgrid(*([[-1, 0, 1]] * ndim), indexing="ij"))
        steps = grids.reshape(ndim, -1).T
        steps = steps[np.any(steps != 0, axis=1)]
    elif metric == "taxicab":
        eye = np.eye(ndim, dtype=np.int64)
        steps = np.concatenate([eye, -eye])
    else:
        raise ValueError(f"unknown metric {metric!r}")
    steps = np.ascontiguousarray(steps, dtype=np.int64)
    steps.setflags(write=False)
    return steps


# -- breadth-first distance transform ---------------------------------------

def _bfs_numpy(source: np.ndarray, shape: np.ndarray, offsets: np.ndarray,
               max_depth: int) -> np.ndarray:
    n = source.size
    dims = tuple(int(s) for s in shape)
    dist = np.full(n, UNREACHED, dtype=np.int64)
    frontier = np.flatnonzero(source)
    dist[frontier] = 0
    depth = 0
    while frontier.size and (max_depth < 0 or depth < max_depth):
        coords = np.stack(np.unravel_index(frontier, dims), axis=1)
        cand = coords[:, None, :] + offsets[None, :, :]
        cand = cand.reshape(-1, len(dims))
        inside = np.all((cand >= 0) & (cand < shape), axis=1)
        cand = cand[inside]
        flat = np.ravel_multi_index(tuple(cand.T), dims)
        flat = np.unique(flat)
        flat = flat[dist[flat] == UNREACHED]
        depth += 1
        dist[flat] = depth
        frontier = flat
    return dist


def _ising_energies_numpy(n: int, edges: np.ndarray, couplings: np.ndarray,
                          fields: np.ndarray) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    spins = 1.0 - 2.0 * ((idx[:, None] >> shifts[None, :]) & 1)
    energy = -(spins @ fields)
    if len(edges):
        energy -= (spins[:, edges[:, 0]] * spins[:, edges[:, 1]]) @ couplings
    return energy


if HAVE_NUMBA:

    @njit(cache=True)
    def _bfs_numba(source, shape, offsets, max_depth):  # pragma: no cover - jitted
        n = source.size
        ndim = shape.size
        strides = np.empty(ndim, np.int64)
        s = 1
        for ax in range(ndim - 1, -1, -1):
            strides[ax] = s
            s *= shape[ax]
        dist = np.full(n, UNREACHED, np.int64)
        queue = np.empty(n, np.int64)
        head = 0
        tail = 0
        for i in range(n):
            if source[i]:
                dist[i] = 0
                queue[tail] = i
                tail += 1
        coord = np.empty(ndim, np.int64)
        while head < tail:
            i = queue[head]
            head += 1
            di = dist[i]
            if max_depth >= 0 and di >= max_depth:
                continue
            rem = i
            for ax in range(ndim):
                coord[ax] = rem // strides[ax]
                rem -= coord[ax] * strides[ax]
            for o in range(offsets.shape[0]):
                j = 0
                ok = True
                for ax in range(ndim):
                    c = coord[ax] + offsets[o, ax]
                    if c < 0 or c >= shape[ax]:
                        ok = False
                        break
                    j += c * strides[ax]
                if ok and dist[j] == UNREACHED:
                    dist[j] = di + 1
                    queue[tail] = j
                    tail += 1
        return dist

    @njit(cache=True)
    def _ising_energies_numba(n, edges, couplings, fields):  # pragma: no cover
        size = 1 << n
        out = np.empty(size, np.float64)
        spins = np.empty(n, np.float64)
        for x in range(size):
            for i in range(n):
                spins[i] = 1.0 - 2.0 * ((x >> (n - 1 - i)) & 1)
            e = 0.0
            for i in range(n):
                e -= fields[i] * spins[i]
            for m in range(edges.shape[0]):
                e -= couplings[m] * spins[edges[m, 0]] * spins[edges[m, 1]]
            out[x] = e
        return out


def grid_distance(source: np.ndarray, metric: str = "chebyshev",
                  max_depth: int | None = None, use_numba: bool | None = None) -> np.ndarray:
    """Distance from every grid cell to the nearest ``True`` cell of ``source``.

    Cells farther than ``max_depth`` (or unreachable because ``source`` is
    empty) get ``UNREACHED``. The result has the shape of ``source``.
    """
    source = np.asarray(source, dtype=bool)
    shape = np.asarray(source.shape, dtype=np.int64)
    offsets = neighbour_offsets(source.ndim, metric)
    depth = -1 if max_depth is None else int(max_depth)
    flat = np.ascontiguousarray(source.ravel())
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if use_numba and HAVE_NUMBA:
        dist = _bfs_numba(flat, shape, offsets, depth)
    else:
        dist = _bfs_numpy(flat, shape, offsets, depth)
    return dist.reshape(source.shape)


def ising_energies(n: int, edges, couplings, fields,
                   use_numba: bool | None = None) -> np.ndarray:
    """Energies -sum J s_i s_j - sum h s_i of all 2**n spin configurations.

    Configuration ``x`` has bit ``n-1-i`` set iff spin ``i`` is down, which
    matches the computational-basis index with spin up on ``|0>``.
    """
    edges = np.ascontiguousarray(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    couplings = np.ascontiguousarray(np.asarray(couplings, dtype=np.float64).reshape(-1))
    fields = np.ascontiguousarray(np.asarray(fields, dtype=np.float64).reshape(-1))
    if fields.size != n or couplings.size != edges.shape[0]:
        raise ValueError("inconsistent edge, coupling or field sizes")
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if use_numba and HAVE_NUMBA:
        return _ising_energies_numba(n, edges, couplings, fields)
    return _ising_energies_numpy(n, edges, couplings, fields)
