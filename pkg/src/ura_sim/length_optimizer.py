"""Parity-length allocation for the tree code.

Both metrics are posynomials in tau_l = 2^{-a_l}, so in omega_l = -a_l they
become log-sum-exp functions and the relaxed problem

    minimize   log Xi(omega)
    subject to -J <= omega_l <= 0,  sum(omega) = -(L J - b),
               log E[chi_L](omega) <= log p_th

is convex. It is solved with a log barrier on the survivor constraint and
projected gradient over the box-plus-hyperplane set, then rounded.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InfeasibleError, SizeError
from .outer_code import decoding_complexity, expected_survivors

LN2 = np.log(2.0)
MAX_ENUMERATION = 10 ** 7
_REL = 1e-12


@dataclass
class LengthAllocation:
    a: np.ndarray  # (a_2, ..., a_L)
    K: int
    L: int
    J: int
    b: int
    p_th: Optional[float]
    xi: float
    survivors_bound: float
    feasible: bool = True
    relaxed_omega: Optional[np.ndarray] = field(default=None, repr=False)
    relaxed_xi: Optional[float] = None
    note: str = ""

    @property
    def tau(self):
        return 2.0 ** -self.a.astype(float)

    @property
    def omega(self):
        return -self.a.astype(float)

    @property
    def full(self):
        """Per-slot parity lengths including a_1 = 0."""
        return np.concatenate(([0], self.a)).astype(int)

    def to_dict(self):
        out = {
            "K": self.K, "L": self.L, "J": self.J, "b": self.b, "p_th": self.p_th,
            "a": [int(x) for x in self.a], "xi": float(self.xi),
            "survivors_bound": float(self.survivors_bound), "feasible": bool(self.feasible),
        }
        if self.relaxed_xi is not None:
            out["relaxed_xi"] = float(self.relaxed_xi)
            out["relaxed_a"] = [float(-w) for w in self.relaxed_omega]
        if self.note:
            out["note"] = self.note
        return out


def evaluate_allocation(a, K, L):
    """(Xi, E[chi_L]) for parity lengths a = (a_2, ..., a_L)."""
    a = np.asarray(a, dtype=float)
    return decoding_complexity(K, L, a), expected_survivors(K, L, 2.0 ** -a)


# --- log-domain posynomials ------------------------------------------------

def _xi_terms(K, L):
    """Rows of (log coefficient, exponent mask) for Xi in omega (natural log of 2^.)."""
    coefs = [np.log(K * (L - 1))]
    masks = [np.zeros(L - 1)]
    if K > 1:
        for j in range(2, L):
            for m in range(2, j + 1):
                mask = np.zeros(L - 1)
                mask[m - 2:j - 1] = 1.0
                coefs.append(np.log(K) + (j - m) * np.log(K) + np.log(K - 1))
                masks.append(mask)
    return np.array(coefs), np.array(masks)


def _chi_terms(K, L):
    coefs, masks = [], []
    for m in range(2, L + 1):
        mask = np.zeros(L - 1)
        mask[m - 2:] = 1.0
        coefs.append((L - m) * np.log(K) + np.log(K - 1))
        masks.append(mask)
    return np.array(coefs), np.array(masks)


def _lse_and_grad(coefs, masks, omega):
    z = coefs + LN2 * (masks @ omega)
    top = z.max()
    w = np.exp(z - top)
    total = w.sum()
    return top + np.log(total), LN2 * (w @ masks) / total


def project_box_sum(v, lo, hi, total):
    """Euclidean projection onto {lo <= x <= hi, sum x = total}.

    The projection is clip(v - lam, lo, hi) for the shift lam at which the
    piecewise-linear, non-increasing sum crosses ``total``; it is located
    exactly among the sorted breakpoints.
    """
    n = v.size
    if not n * lo - 1e-9 <= total <= n * hi + 1e-9:
        raise ConfigError(f"sum {total} unreachable with {n} entries in [{lo}, {hi}]")
    bps = np.sort(np.concatenate((v - hi, v - lo)))
    sums = np.clip(v[None, :] - bps[:, None], lo, hi).sum(axis=1)  # non-increasing
    k = np.searchsorted(-sums, -total)  # first breakpoint with sum <= total
    if k == 0:
        lam = bps[0]
    elif k >= bps.size:
        lam = bps[-1]
    else:
        s0, s1 = sums[k - 1], sums[k]
        frac = 0.0 if s0 == s1 else (s0 - total) / (s0 - s1)
        lam = bps[k - 1] + frac * (bps[k] - bps[k - 1])
    return np.clip(v - lam, lo, hi)


def _late_first(L, J, budget):
    """Parity packed into the last slots; this minimizes every suffix sum at once."""
    a = np.zeros(L - 1)
    left = budget
    for i in range(L - 2, -1, -1):
        a[i] = min(J, left)
        left -= a[i]
    return a


def _check_inputs(K, L, J, b, p_th):
    if K < 1 or L < 2 or J < 1:
        raise ConfigError("need K >= 1, L >= 2, J >= 1")
    budget = L * J - b
    if budget < 0:
        raise ConfigError(f"b={b} exceeds L*J={L * J}")
    if budget > (L - 1) * J:
        raise ConfigError(f"parity budget {budget} exceeds (L-1)*J={(L - 1) * J}")
    if p_th is not None and p_th < 0:
        raise ConfigError("p_th must be non-negative")
    return budget


def _feasible(chi, p_th):
    return p_th is None or chi <= p_th * (1.0 + _REL)


def _projected_descent(fun, omega, J, budget, tol, max_iter=20000):
    """Projected gradient with backtracking; ``fun`` returns (value, grad) or (inf, None)."""
    val, grad = fun(omega)
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = project_box_sum(omega - step * grad, -J, 0.0, -budget)
            cval, cgrad = fun(cand)
            move = cand - omega
            if np.isfinite(cval) and cval <= val + grad @ move + (move @ move) / (2.0 * step):
                break
            step *= 0.5
            if step < 1e-14:
                return omega, val
        omega, val, grad = cand, cval, cgrad
        if np.max(np.abs(move)) < tol:
            break
        step = min(step * 2.0, 1e3)
    return omega, val


def solve_relaxed(K, L, J, b, p_th, tol=1e-8):
    """Continuous optimum (omega*, Xi'(omega*)). Raises InfeasibleError if C3' cannot hold."""
    budget = _check_inputs(K, L, J, b, p_th)
    xc, xm = _xi_terms(K, L)
    if L == 2 or K == 1:
        # C2 pins omega for L = 2; for K = 1 both metrics are constant
        omega = np.full(L - 1, -budget / (L - 1))
        return omega, float(np.exp(_lse_and_grad(xc, xm, omega)[0]))
    cc, cm = _chi_terms(K, L)
    log_p = None if p_th is None or p_th <= 0 else np.log(p_th)
    late = -_late_first(L, J, budget)
    if p_th is not None:
        g_late = _lse_and_grad(cc, cm, late)[0]
        if log_p is None or g_late >= log_p:
            raise InfeasibleError(
                f"E[chi_L] >= {np.exp(g_late):.6g} for every allocation; p_th={p_th}",
                min_survivors=float(np.exp(g_late)), allocation=-late)

    if log_p is None:
        def fun_t(t):
            return lambda w: _lse_and_grad(xc, xm, w)
        omega = project_box_sum(np.full(L - 1, -budget / (L - 1)), -J, 0.0, -budget)
        omega, _ = _projected_descent(fun_t(1.0), omega, J, budget, tol)
        return omega, float(np.exp(_lse_and_grad(xc, xm, omega)[0]))

    # strictly feasible start on the segment between the uniform and late-first points
    uniform = project_box_sum(np.full(L - 1, -budget / (L - 1)), -J, 0.0, -budget)
    omega = late
    for theta in 0.5 ** np.arange(1, 40):
        cand = theta * uniform + (1.0 - theta) * late
        if _lse_and_grad(cc, cm, cand)[0] < log_p:
            omega = cand
            break
    if _lse_and_grad(cc, cm, omega)[0] >= log_p:
        # only the boundary point is feasible
        return omega, float(np.exp(_lse_and_grad(xc, xm, omega)[0]))

    def barrier(t):
        def f(w):
            gv, gg = _lse_and_grad(cc, cm, w)
            slack = log_p - gv
            if slack <= 0.0:
                return np.inf, None
            fv, fg = _lse_and_grad(xc, xm, w)
            return t * fv - np.log(slack), t * fg + gg / slack
        return f

    t = 1.0
    while True:
        omega, _ = _projected_descent(barrier(t), omega, J, budget, tol)
        if 1.0 / t < tol:
            break
        t *= 10.0
    return omega, float(np.exp(_lse_and_grad(xc, xm, omega)[0]))


def _repair(x, J, budget):
    """Nearest-integer rounding of x = -omega followed by the residual-fraction sum fix."""
    a = np.clip(np.rint(x), 0, J)
    resid = x - a
    miss = int(round(budget - a.sum()))
    if miss > 0:
        for i in np.argsort(-resid, kind="stable"):
            if miss == 0:
                break
            if a[i] < J:
                a[i] += 1
                miss -= 1
    elif miss < 0:
        for i in np.argsort(resid, kind="stable"):
            if miss == 0:
                break
            if a[i] > 0:
                a[i] -= 1
                miss += 1
    return a.astype(np.int64)


def _shift_late(a, K, L, J, p_th):
    """Move single units from the earliest to the latest adjustable slot until C3' holds."""
    a = a.copy()
    while not _feasible(evaluate_allocation(a, K, L)[1], p_th):
        src = np.flatnonzero(a > 0)
        dst = np.flatnonzero(a < J)
        if src.size == 0 or dst.size == 0 or src[0] >= dst[-1]:
            return a, False
        a[src[0]] -= 1
        a[dst[-1]] += 1
    return a, True


def _polish(a, K, L, J, p_th):
    """Greedy unit swaps that lower Xi while keeping C1 and C3'."""
    a = a.copy()
    n = L - 1
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    xi = evaluate_allocation(a, K, L)[0]
    while True:
        ok = (a[src] > 0) & (a[dst] < J)
        cand = np.repeat(a[None, :], int(ok.sum()), axis=0)
        rows = np.arange(cand.shape[0])
        cand[rows, src[ok]] -= 1
        cand[rows, dst[ok]] += 1
        cxi, cchi = _batch_metrics(cand, K, L)
        good = (cxi < xi * (1.0 - _REL)) & _feasible(cchi, p_th)
        if not good.any():
            return a
        k = np.flatnonzero(good)[np.argmin(cxi[good])]
        a = cand[k]
        xi = evaluate_allocation(a, K, L)[0]


def optimize_lengths(K, L, J, b, p_th, relax=False, polish=True, tol=1e-8) -> LengthAllocation:
    """Minimize decoding complexity subject to E[chi_L] <= p_th.

    ``relax=True`` returns a best-effort allocation flagged ``feasible=False``
    instead of raising when the threshold cannot be met. ``polish`` runs a
    unit-swap local search after rounding.
    """
    budget = _check_inputs(K, L, J, b, p_th)
    try:
        omega, relaxed_xi = solve_relaxed(K, L, J, b, p_th, tol=tol)
    except InfeasibleError as exc:
        if not relax:
            raise
        a = _late_first(L, J, budget).astype(np.int64)
        xi, chi = evaluate_allocation(a, K, L)
        return LengthAllocation(a=a, K=K, L=L, J=J, b=b, p_th=p_th, xi=xi, survivors_bound=chi,
                                feasible=False, note=str(exc))
    a = _repair(-omega, J, budget)
    note = ""
    a, ok = _shift_late(a, K, L, J, p_th)
    if not ok:
        note = "infeasible after rounding"
        if not relax:
            raise InfeasibleError(note, min_survivors=evaluate_allocation(a, K, L)[1], allocation=a)
    elif polish:
        a = _polish(a, K, L, J, p_th)
    xi, chi = evaluate_allocation(a, K, L)
    return LengthAllocation(a=a, K=K, L=L, J=J, b=b, p_th=p_th, xi=xi, survivors_bound=chi,
                            feasible=_feasible(chi, p_th), relaxed_omega=omega,
                            relaxed_xi=relaxed_xi, note=note)


def compositions(n_parts, total, hi):
    """All integer vectors in [0, hi]^n_parts summing to ``total``, in lexicographic order."""
    if n_parts == 0:
        return np.zeros((1 if total == 0 else 0, 0), dtype=np.int64)
    rows = []
    for first in range(0, min(hi, total) + 1):
        rest = total - first
        if rest > (n_parts - 1) * hi:
            continue
        tail = compositions(n_parts - 1, rest, hi)
        if tail.shape[0]:
            rows.append(np.column_stack([np.full(tail.shape[0], first, dtype=np.int64), tail]))
    if not rows:
        return np.zeros((0, n_parts), dtype=np.int64)
    return np.vstack(rows)


def _batch_metrics(A, K, L):
    """Vectorized (Xi, E[chi_L]) over rows of A."""
    A = A.astype(float)
    n = A.shape[0]
    pre = np.concatenate([np.zeros((n, 1)), np.cumsum(A, axis=1)], axis=1)  # pre[:, i] = sum a[:i]
    xi = np.full(n, float(K * (L - 1)))
    for j in range(2, L):
        for m in range(2, j + 1):
            xi += K * float(K) ** (j - m) * (K - 1) * 2.0 ** -(pre[:, j - 1] - pre[:, m - 2])
    chi = np.zeros(n)
    for m in range(2, L + 1):
        chi += float(K) ** (L - m) * (K - 1) * 2.0 ** -(pre[:, L - 1] - pre[:, m - 2])
    return xi, chi


def exhaustive_oracle(K, L, J, b, p_th) -> LengthAllocation:
    """Brute-force minimum of Xi over all integer allocations meeting C1-C3'."""
    budget = _check_inputs(K, L, J, b, p_th)
    if (J + 1) ** (L - 1) > MAX_ENUMERATION:
        raise SizeError(f"(J+1)^(L-1) = {(J + 1) ** (L - 1)} candidates; use optimize_lengths")
    A = compositions(L - 1, budget, J)
    xi, chi = _batch_metrics(A, K, L)
    ok = chi <= p_th * (1.0 + _REL) if p_th is not None else np.ones(len(A), bool)
    if not ok.any():
        best = int(np.argmin(chi))
        raise InfeasibleError(f"no allocation reaches E[chi_L] <= {p_th}",
                              min_survivors=float(chi[best]), allocation=A[best])
    idx = np.flatnonzero(ok)
    low = xi[idx].min()
    # lexicographically first among (numerical) ties
    pick = idx[np.flatnonzero(xi[idx] <= low * (1.0 + _REL))[0]]
    a = A[pick]
    xi_e, chi_e = evaluate_allocation(a, K, L)
    return LengthAllocation(a=a, K=K, L=L, J=J, b=b, p_th=p_th, xi=xi_e, survivors_bound=chi_e)
