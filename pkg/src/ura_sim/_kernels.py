"""Hot loops, compiled with numba when enabled (see ``_accel``)."""
import math

import numpy as np

from ._accel import njit

DEGENERATE_N3 = 1e-12
# 1 + d * n1 below this would make Sigma_tilde numerically singular
PD_FLOOR = 1e-12


@njit(cache=True)
def coordinate_step(n1, n2, n3, gamma_r):
    """Clamped minimizer of the 1-D surrogate along one coordinate.

    Solves n3 u^2 - n1 u + n2 = 0 for u = 1 + d n1 using the rationalized
    root u = 2 n2 / (n1 + sqrt(n1^2 - 4 n2 n3)), which equals the textbook
    root but has no cancellation as n3 -> 0. Returns NaN if n1 <= 0.
    """
    if not n1 > 0.0:
        return np.nan
    if abs(n3) < DEGENERATE_N3:
        d = n2 / (n1 * n1) - 1.0 / n1
    else:
        disc = n1 * n1 - 4.0 * n2 * n3
        if disc < 0.0:
            # s'(d) keeps one sign; only a move to the boundary can help
            if n1 - n2 - n3 > 0.0:
                d = -gamma_r
            else:
                d = 0.0
        else:
            u = 2.0 * n2 / (n1 + math.sqrt(disc))
            d = (u - 1.0) / n1
    if d < -gamma_r:
        d = -gamma_r
    return d


@njit(cache=True)
def rebuild_inverse(C, gamma, sigma2):
    n0 = C.shape[0]
    S = (C * gamma) @ C.conj().T
    for i in range(n0):
        S[i, i] += sigma2
    return S, np.linalg.inv(S)


@njit(cache=True)
def coordinate_sweep(C, CT, Sigma, Sigma_inv, Sigma_hat, gamma, grad, order, sigma2, refresh_every):
    """Run the coordinates in ``order`` in place; returns (updates, status).

    status is 0 on success, otherwise 1 + position of the failing step.
    """
    n0 = C.shape[0]
    since_refresh = 0
    updates = 0
    for pos in range(order.shape[0]):
        r = order[pos]
        c = CT[r]
        sc = Sigma_inv @ c
        n1 = (np.vdot(c, sc)).real
        t = Sigma_hat @ sc
        n2 = (np.vdot(sc, t)).real
        d = coordinate_step(n1, n2, -grad[r], gamma[r])
        if not np.isfinite(d):
            return updates, pos + 1
        if d == 0.0:
            continue
        denom = 1.0 + d * n1
        if denom <= PD_FLOOR:
            return updates, pos + 1
        gamma[r] += d
        if gamma[r] < 0.0:
            gamma[r] = 0.0
        scale = d / denom
        for i in range(n0):
            ci = c[i]
            si = sc[i]
            for j in range(n0):
                Sigma[i, j] += d * ci * c[j].conjugate()
                Sigma_inv[i, j] -= scale * si * sc[j].conjugate()
        updates += 1
        since_refresh += 1
        if refresh_every > 0 and since_refresh >= refresh_every:
            S, Si = rebuild_inverse(C, gamma, sigma2)
            Sigma[:, :] = S
            Sigma_inv[:, :] = Si
            since_refresh = 0
    return updates, 0


@njit(cache=True)
def exact_step(n1, n2, grad_r, g2, gamma_r):
    """Clamped minimizer of the full objective along one coordinate.

    With u = 1 + d n1, the objective along coordinate r is, up to a constant,
        log(u) + [(grad_r - n2) (u - 1) + g2 (u - 1)^2] / (n1 u)
    and its stationarity condition is the quadratic
        g2 u^2 + n1 u + (grad_r - n2 - g2) = 0,
    with g2 = ||G_tilde[r]||^2 / M >= 0, so the objective is unimodal on u > 0.
    """
    if not n1 > 0.0:
        return np.nan
    k = grad_r - n2 - g2
    if k >= 0.0:
        d = -gamma_r
    else:
        u = -2.0 * k / (n1 + math.sqrt(n1 * n1 - 4.0 * g2 * k))
        d = (u - 1.0) / n1
    if d < -gamma_r:
        d = -gamma_r
    return d


@njit(cache=True)
def exact_sweep(C, CT, Sigma, Sigma_inv, Sigma_hat, E, Yh, G_tilde, g2, gamma, order, sigma2, M,
                refresh_every):
    """Exact coordinate descent on p + q; E = C diag(gamma) G_tilde is kept in sync.

    Yh is Y^H (M x n0). Returns (updates, status) like ``coordinate_sweep``.
    """
    n0 = C.shape[0]
    Mcols = E.shape[1]
    since_refresh = 0
    updates = 0
    for pos in range(order.shape[0]):
        r = order[pos]
        c = CT[r]
        g = G_tilde[r]
        sc = Sigma_inv @ c
        n1 = (np.vdot(c, sc)).real
        n2 = (np.vdot(sc, Sigma_hat @ sc)).real
        # directional derivative of q at d = 0
        u = E.conj().T @ sc
        z = Yh @ sc
        uu = 0.0
        w = 0.0
        gz = 0.0
        uz = 0.0
        for m in range(Mcols):
            um = u[m]
            uu += um.real * um.real + um.imag * um.imag
            w += (g[m] * um).real
            gz += (g[m] * z[m]).real
            uz += (um.conjugate() * z[m]).real
        grad_r = (-uu + 2.0 * w - 2.0 * gz + 2.0 * uz) / M
        d = exact_step(n1, n2, grad_r, g2[r], gamma[r])
        if not np.isfinite(d):
            return updates, pos + 1
        if d == 0.0:
            continue
        denom = 1.0 + d * n1
        if denom <= PD_FLOOR:
            return updates, pos + 1
        gamma[r] += d
        if gamma[r] < 0.0:
            gamma[r] = 0.0
        scale = d / denom
        for i in range(n0):
            ci = c[i]
            si = sc[i]
            for j in range(n0):
                Sigma[i, j] += d * ci * c[j].conjugate()
                Sigma_inv[i, j] -= scale * si * sc[j].conjugate()
            dci = d * ci
            for m in range(Mcols):
                E[i, m] += dci * g[m]
        updates += 1
        since_refresh += 1
        if refresh_every > 0 and since_refresh >= refresh_every:
            S, Si = rebuild_inverse(C, gamma, sigma2)
            Sigma[:, :] = S
            Sigma_inv[:, :] = Si
            E[:, :] = (C * gamma) @ G_tilde
            since_refresh = 0
    return updates, 0


@njit(cache=True)
def tree_decode_root(root, lists, msg_bits, par_bits, b_off, H, p_off, L, J, max_paths):
    """Depth-first survival-path search from one root of list 0.

    lists: (L, K) int64 codeword values (J-bit integers); -1 marks padding.
    msg_bits/par_bits: per-slot message/parity lengths.
    H: stacked binary generator rows, row ``p_off[l] + j`` is the parity
       check for parity bit j of slot l applied to the message prefix
       (length b_off[l]).
    Returns (number of survivors, checked-node count, first survivor path).
    """
    K = lists.shape[1]
    path = np.empty(L, dtype=np.int64)
    found_path = np.full(L, -1, dtype=np.int64)
    msg = np.zeros(b_off[L], dtype=np.uint8)
    # explicit DFS stack: cursor per depth
    cursor = np.zeros(L, dtype=np.int64)
    path[0] = lists[0, root]
    _unpack_message(path[0], msg, 0, msg_bits[0], J)
    survivors = 0
    checked = 0
    depth = 1
    cursor[1] = 0
    while depth >= 1:
        if survivors >= max_paths:
            break
        if cursor[depth] >= K:
            depth -= 1
            if depth >= 1:
                cursor[depth] += 1
            continue
        value = lists[depth, cursor[depth]]
        if value < 0:
            # padding entry
            cursor[depth] += 1
            continue
        checked += 1
        ok = True
        a = par_bits[depth]
        if a > 0:
            # parity bits are the low a bits of value, MSB first
            for j in range(a):
                row = p_off[depth] + j
                acc = 0
                for i in range(b_off[depth]):
                    acc ^= H[row, i] & msg[i]
                got = (value >> (a - 1 - j)) & 1
                if acc != got:
                    ok = False
                    break
        if not ok:
            cursor[depth] += 1
            continue
        path[depth] = value
        if depth == L - 1:
            if survivors == 0:
                found_path[:] = path
            survivors += 1
            cursor[depth] += 1
            continue
        _unpack_message(value, msg, b_off[depth], msg_bits[depth], J)
        depth += 1
        cursor[depth] = 0
    return survivors, checked, found_path


@njit(cache=True)
def _unpack_message(value, msg, offset, nbits, J):
    # message bits are the top nbits of the J-bit value, MSB first
    for i in range(nbits):
        msg[offset + i] = (value >> (J - 1 - i)) & 1
