"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The particle method spends nearly all of its time summing radial kernel
profiles over particle ensembles (one O(N*M) pass per velocity evaluation)
and merging sorted weight sequences for 1D transport costs.  Both kernels
exist in two variants:

* ``numba`` -- explicit loops compiled with ``@njit`` (no temporaries),
* ``numpy`` -- vectorized broadcasting, used when numba is unavailable or
  when the environment variable ``NONLOCAL_NUMBA`` is set to ``0``.

``benchmarks/bench_accel.py`` compares the two paths on representative
workloads.  Both compute the same sums; floating point results may differ
in the last bits because the summation order differs.
"""

from __future__ import annotations

import os

import numpy as np

# Radial profile codes shared by both backends.
PROFILE_CONSTANT = 0
PROFILE_TENT = 1
PROFILE_BUMP = 2
PROFILE_COSINE = 3


def _env_wants_numba() -> bool:
    flag = os.environ.get("NONLOCAL_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


_HAVE_NUMBA = False
if _env_wants_numba():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def _profile_values_numpy(dist: np.ndarray, code: int, scale: float, height: float) -> np.ndarray:
    if code == PROFILE_CONSTANT:
        return np.full_like(dist, height)
    u = dist / scale
    if code == PROFILE_TENT:
        return height * np.maximum(0.0, 1.0 - u)
    if code == PROFILE_BUMP:
        core = np.maximum(0.0, 1.0 - u * u)
        return height * core * core
    if code == PROFILE_COSINE:
        return np.where(u <= 1.0, height * np.cos(0.5 * np.pi * np.minimum(u, 1.0)), 0.0)
    raise ValueError(f"unknown profile code {code}")


def _radial_sum_numpy(
    points: np.ndarray,
    centers: np.ndarray,
    weights: np.ndarray,
    code: int,
    scale: float,
    height: float,
) -> np.ndarray:
    if centers.shape[0] == 0:
        return np.zeros(points.shape[0])
    if code == PROFILE_CONSTANT:
        return np.full(points.shape[0], height * float(weights.sum()))
    diff = points[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    return _profile_values_numpy(dist, code, scale, height) @ weights


def _w1_cdf_merge_numpy(
    xu: np.ndarray, wu: np.ndarray, xv: np.ndarray, wv: np.ndarray
) -> float:
    # W1 = integral of |F_mu - F_nu| over the merged breakpoint grid.
    xs = np.concatenate([xu, xv])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    steps = np.concatenate([wu, -wv])[order]
    cdf_gap = np.abs(np.cumsum(steps)[:-1])
    return float(np.sum(cdf_gap * np.diff(xs)))


def _northwest_corner_py(supply: np.ndarray, demand: np.ndarray):
    """Initial basic solution with exactly N + M - 1 basic cells."""
    n, m = supply.size, demand.size
    a = supply.copy()
    b = demand.copy()
    cells = []
    flows = []
    i = j = 0
    for _ in range(n + m - 1):
        q = min(a[i], b[j])
        cells.append((i, j))
        flows.append(q)
        a[i] -= q
        b[j] -= q
        # on ties advance one side only (zero-flow basic cell keeps the tree)
        if (a[i] <= b[j] and i < n - 1) or j == m - 1:
            i += 1
        else:
            j += 1
    return cells, flows


def _tree_duals_py(n, m, basis_cells, cost):
    """Solve u_i + v_j = c_ij on the spanning tree of basic cells."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n + m)]
    for idx, (i, j) in enumerate(basis_cells):
        adj[i].append((n + j, idx))
        adj[n + j].append((i, idx))
    u = np.zeros(n)
    v = np.zeros(m)
    seen = np.zeros(n + m, dtype=bool)
    stack = [0]
    seen[0] = True
    parent = np.full(n + m, -1, dtype=np.int64)
    parent_edge = np.full(n + m, -1, dtype=np.int64)
    while stack:
        node = stack.pop()
        for nb, eidx in adj[node]:
            if not seen[nb]:
                seen[nb] = True
                parent[nb] = node
                parent_edge[nb] = eidx
                i, j = basis_cells[eidx]
                if nb >= n:
                    v[nb - n] = cost[i, j] - u[i]
                else:
                    u[nb] = cost[i, j] - v[node - n]
                stack.append(nb)
    if not seen.all():
        raise RuntimeError("basis does not span the bipartite graph")
    return u, v, parent, parent_edge


def _cycle_path_py(n, parent, parent_edge, i, j):
    """Tree path from row node i to column node n + j as a list of edge ids."""

    def root_path(node):
        nodes = [node]
        while parent[node] != -1:
            node = parent[node]
            nodes.append(node)
        return nodes

    pa = root_path(i)
    pb = root_path(n + j)
    sa = set(pa)
    meet = next(node for node in pb if node in sa)
    edges = []
    node = i
    while node != meet:
        edges.append(parent_edge[node])
        node = parent[node]
    tail = []
    node = n + j
    while node != meet:
        tail.append(parent_edge[node])
        node = parent[node]
    return edges + tail[::-1]


def _transport_simplex_numpy(cost, supply, demand, piv_tol, dantzig_cap, total_cap):
    n, m = cost.shape
    cells, flows = _northwest_corner_py(supply, demand)
    pivots = 0
    while True:
        u, v, parent, parent_edge = _tree_duals_py(n, m, cells, cost)
        reduced = cost - u[:, None] - v[None, :]
        if pivots < dantzig_cap:
            flat = int(np.argmin(reduced))
            ei, ej = divmod(flat, m)
            if reduced[ei, ej] >= -piv_tol:
                break
        else:
            # Bland-style fallback: first improving cell in index order
            mask = reduced < -piv_tol
            if not mask.any():
                break
            flat = int(np.argmax(mask.ravel()))
            ei, ej = divmod(flat, m)
        path = _cycle_path_py(n, parent, parent_edge, ei, ej)
        # entering edge is "+"; signs alternate along the path from row ei
        theta = np.inf
        leave_pos = -1
        for pos, eidx in enumerate(path):
            if pos % 2 == 0 and flows[eidx] < theta:  # "-" edges
                theta = flows[eidx]
                leave_pos = pos
        theta = max(theta, 0.0)
        for pos, eidx in enumerate(path):
            flows[eidx] += theta if pos % 2 == 1 else -theta
        leaving = path[leave_pos]
        cells[leaving] = (ei, ej)
        flows[leaving] = theta
        pivots += 1
        if pivots > total_cap:
            return None
    basis_i = np.array([c[0] for c in cells], dtype=np.int64)
    basis_j = np.array([c[1] for c in cells], dtype=np.int64)
    return basis_i, basis_j, np.asarray(flows, dtype=np.float64), u, v


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _profile_scalar(dist: float, code: int, scale: float, height: float) -> float:
        if code == PROFILE_CONSTANT:
            return height
        u = dist / scale
        if u >= 1.0:
            return 0.0
        if code == PROFILE_TENT:
            return height * (1.0 - u)
        if code == PROFILE_BUMP:
            core = 1.0 - u * u
            return height * core * core
        # PROFILE_COSINE
        return height * np.cos(0.5 * np.pi * u)

    @njit(cache=True)
    def _radial_sum_numba(points, centers, weights, code, scale, height):
        n_pts = points.shape[0]
        n_src = centers.shape[0]
        dim = points.shape[1]
        out = np.zeros(n_pts)
        if code == PROFILE_CONSTANT:
            total = 0.0
            for n in range(n_src):
                total += weights[n]
            for m in range(n_pts):
                out[m] = height * total
            return out
        for m in range(n_pts):
            acc = 0.0
            for n in range(n_src):
                d2 = 0.0
                for a in range(dim):
                    diff = points[m, a] - centers[n, a]
                    d2 += diff * diff
                acc += weights[n] * _profile_scalar(np.sqrt(d2), code, scale, height)
            out[m] = acc
        return out

    @njit(cache=True)
    def _transport_simplex_numba(cost, supply, demand, piv_tol, dantzig_cap, total_cap):
        n, m = cost.shape
        nn = n + m
        nb = n + m - 1
        basis_i = np.zeros(nb, np.int64)
        basis_j = np.zeros(nb, np.int64)
        flows = np.zeros(nb)
        # northwest corner start; ties advance one side with a zero-flow cell
        a = supply.copy()
        b = demand.copy()
        i = 0
        j = 0
        for e in range(nb):
            q = a[i] if a[i] < b[j] else b[j]
            basis_i[e] = i
            basis_j[e] = j
            flows[e] = q
            a[i] -= q
            b[j] -= q
            if (a[i] <= b[j] and i < n - 1) or j == m - 1:
                i += 1
            else:
                j += 1
        u = np.zeros(n)
        v = np.zeros(m)
        parent = np.zeros(nn, np.int64)
        parent_edge = np.zeros(nn, np.int64)
        head = np.zeros(nn, np.int64)
        nxt = np.zeros(2 * nb, np.int64)
        eto = np.zeros(2 * nb, np.int64)
        eidx = np.zeros(2 * nb, np.int64)
        stack = np.zeros(nn, np.int64)
        stamp = np.zeros(nn, np.int64)
        path_edges = np.zeros(nn, np.int64)
        up_a = np.zeros(nn, np.int64)
        up_b = np.zeros(nn, np.int64)
        stamp_val = 0
        pivots = 0
        while True:
            # rebuild tree adjacency and duals
            for node in range(nn):
                head[node] = -1
                parent[node] = -2
            cnt = 0
            for e in range(nb):
                bi = basis_i[e]
                bj = n + basis_j[e]
                eto[cnt] = bj
                eidx[cnt] = e
                nxt[cnt] = head[bi]
                head[bi] = cnt
                cnt += 1
                eto[cnt] = bi
                eidx[cnt] = e
                nxt[cnt] = head[bj]
                head[bj] = cnt
                cnt += 1
            parent[0] = -1
            parent_edge[0] = -1
            u[0] = 0.0
            sp = 1
            stack[0] = 0
            seen = 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                slot = head[node]
                while slot != -1:
                    nb_node = eto[slot]
                    if parent[nb_node] == -2:
                        parent[nb_node] = node
                        parent_edge[nb_node] = eidx[slot]
                        e = eidx[slot]
                        ci = basis_i[e]
                        cj = basis_j[e]
                        if nb_node >= n:
                            v[nb_node - n] = cost[ci, cj] - u[ci]
                        else:
                            u[nb_node] = cost[ci, cj] - v[cj]
                        stack[sp] = nb_node
                        sp += 1
                        seen += 1
                    slot = nxt[slot]
            if seen != nn:
                return basis_i, basis_j, flows, u, v, 2
            # entering arc
            ei = -1
            ej = -1
            if pivots < dantzig_cap:
                best = -piv_tol
                for ii in range(n):
                    ui = u[ii]
                    for jj in range(m):
                        rc = cost[ii, jj] - ui - v[jj]
                        if rc < best:
                            best = rc
                            ei = ii
                            ej = jj
                if ei < 0:
                    return basis_i, basis_j, flows, u, v, 0
            else:
                done = False
                for ii in range(n):
                    if done:
                        break
                    ui = u[ii]
                    for jj in range(m):
                        if cost[ii, jj] - ui - v[jj] < -piv_tol:
                            ei = ii
                            ej = jj
                            done = True
                            break
                if not done:
                    return basis_i, basis_j, flows, u, v, 0
            # cycle: tree path from row node ei to column node n + ej
            stamp_val += 1
            la = 0
            node = ei
            while node != -1:
                stamp[node] = stamp_val
                up_a[la] = node
                la += 1
                node = parent[node]
            lb = 0
            node = n + ej
            while stamp[node] != stamp_val:
                up_b[lb] = node
                lb += 1
                node = parent[node]
            meet = node
            plen = 0
            node = ei
            while node != meet:
                path_edges[plen] = parent_edge[node]
                plen += 1
                node = parent[node]
            for back in range(lb - 1, -1, -1):
                path_edges[plen] = parent_edge[up_b[back]]
                plen += 1
            # theta over "-" edges (even positions from the ei end)
            theta = np.inf
            leave_pos = -1
            for pos in range(0, plen, 2):
                f = flows[path_edges[pos]]
                if f < theta:
                    theta = f
                    leave_pos = pos
            if theta < 0.0:
                theta = 0.0
            for pos in range(plen):
                if pos % 2 == 1:
                    flows[path_edges[pos]] += theta
                else:
                    flows[path_edges[pos]] -= theta
            leaving = path_edges[leave_pos]
            basis_i[leaving] = ei
            basis_j[leaving] = ej
            flows[leaving] = theta
            pivots += 1
            if pivots > total_cap:
                return basis_i, basis_j, flows, u, v, 1

    @njit(cache=True)
    def _w1_cdf_merge_numba(xu, wu, xv, wv):
        nu = xu.shape[0]
        nv = xv.shape[0]
        i = 0
        j = 0
        cdf = 0.0
        cost = 0.0
        prev = 0.0
        started = False
        while i < nu or j < nv:
            if j >= nv or (i < nu and xu[i] <= xv[j]):
                x = xu[i]
                if started:
                    cost += abs(cdf) * (x - prev)
                cdf += wu[i]
                i += 1
            else:
                x = xv[j]
                if started:
                    cost += abs(cdf) * (x - prev)
                cdf -= wv[j]
                j += 1
            prev = x
            started = True
        return cost


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------

BACKEND = "numba" if _HAVE_NUMBA else "numpy"


def radial_sum(
    points: np.ndarray,
    centers: np.ndarray,
    weights: np.ndarray,
    code: int,
    scale: float,
    height: float,
) -> np.ndarray:
    """Sum of one radial profile over weighted centers, at many points.

    ``out[m] = sum_n weights[n] * profile(|points[m] - centers[n]|)``
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if _HAVE_NUMBA:
        return _radial_sum_numba(points, centers, weights, code, scale, height)
    return _radial_sum_numpy(points, centers, weights, code, scale, height)


def w1_cdf_merge(xu: np.ndarray, wu: np.ndarray, xv: np.ndarray, wv: np.ndarray) -> float:
    """1D transport cost between sorted weighted point sets of equal mass.

    Inputs must be sorted ascending by position; weights positive.
    """
    xu = np.ascontiguousarray(xu, dtype=np.float64)
    wu = np.ascontiguousarray(wu, dtype=np.float64)
    xv = np.ascontiguousarray(xv, dtype=np.float64)
    wv = np.ascontiguousarray(wv, dtype=np.float64)
    if xu.size == 0 and xv.size == 0:
        return 0.0
    if _HAVE_NUMBA:
        return float(_w1_cdf_merge_numba(xu, wu, xv, wv))
    return _w1_cdf_merge_numpy(xu, wu, xv, wv)


def transport_simplex(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray):
    """Primal transportation simplex on the dense cost matrix.

    Returns (basis_i, basis_j, flows, u, v).  Dantzig pricing with a
    Bland-style fallback after a pivot budget; raises RuntimeError if the
    iteration caps are exhausted or the basis degenerates.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    supply = np.ascontiguousarray(supply, dtype=np.float64)
    demand = np.ascontiguousarray(demand, dtype=np.float64)
    n, m = cost.shape
    piv_tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    dantzig_cap = 60 * (n + m + 1)
    total_cap = dantzig_cap + 600 * (n + m + 1)
    if _HAVE_NUMBA:
        basis_i, basis_j, flows, u, v, status = _transport_simplex_numba(
            cost, supply, demand, piv_tol, dantzig_cap, total_cap
        )
        if status == 1:
            raise RuntimeError("transportation simplex failed to terminate")
        if status == 2:
            raise RuntimeError("basis does not span the bipartite graph")
        return basis_i, basis_j, flows, u, v
    result = _transport_simplex_numpy(
        cost, supply, demand, piv_tol, dantzig_cap, total_cap
    )
    if result is None:
        raise RuntimeError("transportation simplex failed to terminate")
    return result
