"""Covariance/mean ML codeword-activity detection (CCCP + coordinate descent).

The negative log-likelihood per antenna splits into a covariance part

    p(g) = log|S(g)| + tr(S(g)^-1 Sigma_hat),    S(g) = C diag(g) C^H + sigma2 I

and a mean part

    q(g) = (1/M) tr[S^-1 E E^H] - (2/M) Re tr[S^-1 E Y^H],   E = C diag(g) G_tilde.

Each outer iteration freezes the gradient of q at the current iterate and
runs randomized coordinate descent on p plus that linear term. With
``mode="zero_mean_baseline"`` q is dropped and the method reduces to the
plain covariance-based detector.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

MODES = ("nonzero_mean", "zero_mean_baseline")
UPDATES = ("exact", "linearized")
ORDERS = ("permutation", "uniform")


@dataclass(frozen=True)
class EffectiveChannelModel:
    """Per-codeword channel statistics seen by the detector.

    ``G_tilde`` rows are scaled so that ``C diag(gamma_tilde) G_tilde`` is the
    mean of Y at the true ``gamma_tilde``; ``R`` holds alpha'_r.
    """

    G_tilde: np.ndarray  # (N, M)
    R: np.ndarray  # (N,)
    gamma_true: Optional[np.ndarray] = None  # Gamma diagonal, genie mode only
    gamma_tilde_true: Optional[np.ndarray] = None

    @property
    def N(self):
        return self.G_tilde.shape[0]

    @property
    def M(self):
        return self.G_tilde.shape[1]


GENIE_FORMS = ("calibrated", "literal")


def genie_effective_channel(codewords, G_los, alpha, beta, N, form="calibrated"):
    """Exact per-codeword statistics for one sub-slot.

    codewords: 0-based codeword index sent by each active UE.
    G_los, alpha, beta: LOS means (K_a, M), scattered share and large-scale
    gain of those UEs. With colliding UEs the superposed channel
    sum_k sqrt(beta_k) h_k has mean sum_k sqrt(beta_k) g_k and variance
    sum_k beta_k alpha_k per entry, so gamma_r = sum_k beta_k,
    gamma_tilde_r = sum_k beta_k alpha_k and alpha'_r = gamma_tilde_r / gamma_r.

    ``form="calibrated"`` rescales G_tilde so that C diag(gamma_tilde) G_tilde
    equals the true received mean at the true gamma_tilde. ``form="literal"``
    uses the plain superpositions G_tilde_r = sum_k g_k and
    alpha'_r = sum_k alpha_k; the mean model is then off by a factor
    gamma_tilde_r, which biases the estimate upwards.
    """
    if form not in GENIE_FORMS:
        raise ValueError(f"form must be one of {GENIE_FORMS}")
    codewords = np.asarray(codewords, dtype=np.int64)
    M = G_los.shape[1]
    gamma = np.bincount(codewords, weights=beta, minlength=N).astype(float)
    gamma_tilde = np.bincount(codewords, weights=beta * alpha, minlength=N).astype(float)
    G_tilde = np.zeros((N, M), dtype=complex)
    if form == "literal":
        np.add.at(G_tilde, codewords, G_los)
        R = np.bincount(codewords, weights=alpha, minlength=N).astype(float)
    else:
        mean = np.zeros((N, M), dtype=complex)
        np.add.at(mean, codewords, np.sqrt(beta)[:, None] * G_los)
        R = np.zeros(N)
        on = gamma_tilde > 0
        R[on] = gamma_tilde[on] / gamma[on]
        G_tilde[on] = mean[on] / gamma_tilde[on, None]
    return EffectiveChannelModel(G_tilde=G_tilde, R=R, gamma_true=gamma,
                                 gamma_tilde_true=gamma_tilde)


def prior_effective_channel(population, K_a, N):
    """Population-average statistics, identical for every codeword.

    The mean LOS vector is scaled by the expected occupancy K_a / N and
    divided by the mean gamma_tilde of an occupied codeword, mirroring the
    genie scaling.
    """
    beta = population.beta
    alpha_bar = float(np.mean(beta * population.alpha) / np.mean(beta))
    g_bar = np.mean(np.sqrt(beta)[:, None] * population.G, axis=0)
    occupancy = K_a / N
    gt_bar = float(np.mean(beta * population.alpha))
    row = occupancy * g_bar / gt_bar
    G_tilde = np.tile(row, (N, 1))
    return EffectiveChannelModel(G_tilde=G_tilde, R=np.full(N, alpha_bar))


@dataclass(frozen=True)
class DetectorOptions:
    max_outer_iters: int = 20
    tol: float = 0.01
    sweeps: Optional[int] = None  # T_max; default 2 * 2^J
    mode: str = "nonzero_mean"
    sigma2: float = 1.0
    seed: Optional[int] = None
    refresh_every: Optional[int] = None  # default 2^J rank-1 updates
    # "linearized": q frozen at its first-order expansion for a whole outer
    # iteration (closed-form root per coordinate). "exact": each coordinate
    # step minimizes p + q itself; see exact_step in _kernels.
    update: str = "exact"
    # "permutation": each pass visits every coordinate once in random order.
    # "uniform": T_max independent draws, so some coordinates may be skipped.
    order: str = "uniform"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.update not in UPDATES:
            raise ConfigError(f"update must be one of {UPDATES}")
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be > 0")

    def t_max(self, N):
        t = 2 * N if self.sweeps is None else int(self.sweeps)
        if t <= N:
            raise ConfigError(f"T_max={t} must exceed 2^J={N}")
        return t


class DetectorState:
    """Iterate, covariance model and linearization data for one sub-slot."""

    def __init__(self, Y, C, sigma2, G_tilde=None, mode="nonzero_mean", gamma=None):
        self.Y = np.asarray(Y, dtype=complex)
        self.C = np.ascontiguousarray(C, dtype=complex)
        self.CT = np.ascontiguousarray(self.C.T)
        n0, N = self.C.shape
        if self.Y.shape[0] != n0:
            raise ConfigError(f"Y has {self.Y.shape[0]} rows, codebook has {n0}")
        self.M = self.Y.shape[1]
        self.sigma2 = float(sigma2)
        self.mode = mode
        if G_tilde is None or mode == "zero_mean_baseline":
            G_tilde = np.zeros((N, self.M), dtype=complex)
        self.G_tilde = np.asarray(G_tilde, dtype=complex)
        if self.G_tilde.shape != (N, self.M):
            raise ConfigError(f"G_tilde must be {(N, self.M)}, got {self.G_tilde.shape}")
        self.Sigma_hat = (self.Y @ self.Y.conj().T) / self.M
        self.gamma_tilde = np.zeros(N) if gamma is None else np.array(gamma, dtype=float)
        self._Yh = np.ascontiguousarray(self.Y.conj().T)
        self._GY = self.G_tilde @ self._Yh  # (N, n0)
        self._B = self.G_tilde @ self.G_tilde.conj().T  # (N, N)
        self._g2 = np.real(np.diagonal(self._B)) / self.M
        self.refresh()
        self.linearization_point = self.gamma_tilde.copy()
        self.grad_q_at_point = self.grad_q()
        self._q_at_point = self.q()

    @property
    def n0(self):
        return self.C.shape[0]

    @property
    def N(self):
        return self.C.shape[1]

    def refresh(self):
        """Rebuild Sigma_tilde and its inverse from gamma_tilde."""
        S, Si = _kernels.rebuild_inverse(self.C, self.gamma_tilde, self.sigma2)
        self.Sigma_tilde = np.ascontiguousarray(S)
        self.Sigma_tilde_inv = np.ascontiguousarray(Si)
        self.E = np.ascontiguousarray((self.C * self.gamma_tilde) @ self.G_tilde)

    def set_linearization_point(self):
        self.linearization_point = self.gamma_tilde.copy()
        self.grad_q_at_point = self.grad_q()
        self._q_at_point = self.q()

    # -- objective pieces -------------------------------------------------
    def p(self, gamma=None):
        if gamma is None:
            S, Si = self.Sigma_tilde, self.Sigma_tilde_inv
        else:
            S, Si = _kernels.rebuild_inverse(self.C, np.asarray(gamma, float), self.sigma2)
        sign, logdet = np.linalg.slogdet(S)
        if sign.real <= 0:
            raise NumericalError("Sigma_tilde is not positive definite")
        return float(logdet + np.real(np.sum(Si * self.Sigma_hat.T)))

    def q(self, gamma=None):
        if self.mode == "zero_mean_baseline":
            return 0.0
        g = self.gamma_tilde if gamma is None else np.asarray(gamma, float)
        Si = self.Sigma_tilde_inv if gamma is None else _kernels.rebuild_inverse(self.C, g, self.sigma2)[1]
        CG = self.C * g  # C diag(gamma)
        A = CG.conj().T @ Si @ CG  # diag(g) C^H S^-1 C diag(g)
        first = np.real(np.sum(A * self._B.T))  # tr(B A) = tr(S^-1 E E^H)
        second = np.real(np.trace(Si @ CG @ self._GY))  # tr(S^-1 E Y^H)
        return float((first - 2.0 * second) / self.M)

    def grad_q(self, gamma=None):
        """Gradient of q from the Theta_1..Theta_5 decomposition."""
        N = self.N
        if self.mode == "zero_mean_baseline":
            return np.zeros(N)
        g = self.gamma_tilde if gamma is None else np.asarray(gamma, float)
        Si = self.Sigma_tilde_inv if gamma is None else _kernels.rebuild_inverse(self.C, g, self.sigma2)[1]
        SiC = Si @ self.C
        A = self.C.conj().T @ SiC  # C^H S^-1 C
        B = self._B  # G G^H
        W = self._GY @ SiC  # Theta_5 = G Y^H S^-1 C
        AgB = (A * g) @ B  # Theta_1 = A Gamma B
        theta1 = np.diagonal(AgB)
        theta2 = np.einsum("ij,ji->i", AgB * g, A)  # diag(A Gamma B Gamma A)
        theta3 = np.einsum("ij,ji->i", B * g, A)  # diag(B Gamma A)
        theta4 = np.einsum("ij,ji->i", A * g, W)  # diag(A Gamma W)
        theta5 = np.diagonal(W)
        grad = (theta1 - theta2 + theta3) / self.M - 2.0 * (-theta4 + theta5) / self.M
        return np.real(grad)

    def objective(self):
        """Surrogate o(gamma) with q linearized at ``linearization_point``."""
        val = self.p() + self._q_at_point + float(
            self.grad_q_at_point @ (self.gamma_tilde - self.linearization_point))
        if not np.isfinite(val):
            raise NumericalError("objective is not finite")
        return val

    def full_objective(self):
        """p + q at the current iterate (the exact scaled negative log-likelihood)."""
        val = self.p() + self.q()
        if not np.isfinite(val):
            raise NumericalError("objective is not finite")
        return val

    # -- coordinate moves -------------------------------------------------
    def coefficients(self, r):
        c = self.C[:, r]
        sc = self.Sigma_tilde_inv @ c
        n1 = float(np.real(np.vdot(c, sc)))
        n2 = float(np.real(np.vdot(sc, self.Sigma_hat @ sc)))
        n3 = -float(self.grad_q_at_point[r])
        return n1, n2, n3

    def coordinate_update(self, r):
        n1, n2, n3 = self.coefficients(r)
        if not n1 > 0:
            raise NumericalError(f"c_r^H Sigma^-1 c_r = {n1} is not positive (r={r})")
        return float(_kernels.coordinate_step(n1, n2, n3, self.gamma_tilde[r]))

    def apply_update(self, r, d):
        if d == 0.0:
            return
        if d < -self.gamma_tilde[r] - 1e-15:
            raise ValueError(f"step {d} would make gamma_tilde[{r}] negative")
        c = self.C[:, r]
        sc = self.Sigma_tilde_inv @ c
        n1 = float(np.real(np.vdot(c, sc)))
        denom = 1.0 + d * n1
        if denom <= _kernels.PD_FLOOR:
            raise NumericalError(f"rank-1 update on r={r} would lose positive definiteness")
        self.gamma_tilde[r] = max(self.gamma_tilde[r] + d, 0.0)
        self.Sigma_tilde += d * np.outer(c, c.conj())
        self.Sigma_tilde_inv -= (d / denom) * np.outer(sc, sc.conj())
        self.E += d * np.outer(c, self.G_tilde[r])

    def sweep(self, order, refresh_every, update="linearized"):
        """Run the compiled coordinate-descent loop over ``order``."""
        order = np.asarray(order, dtype=np.int64)
        if update == "exact":
            updates, status = _kernels.exact_sweep(
                self.C, self.CT, self.Sigma_tilde, self.Sigma_tilde_inv, self.Sigma_hat,
                self.E, self._Yh, self.G_tilde, self._g2, self.gamma_tilde, order,
                self.sigma2, float(self.M), int(refresh_every))
        else:
            updates, status = _kernels.coordinate_sweep(
                self.C, self.CT, self.Sigma_tilde, self.Sigma_tilde_inv, self.Sigma_hat,
                self.gamma_tilde, self.grad_q_at_point, order, self.sigma2, int(refresh_every))
        if status:
            raise NumericalError(f"coordinate update {status - 1} failed", state=self)
        return updates


@dataclass
class DetectionResult:
    gamma_hat: np.ndarray
    trace: list  # surrogate objective: start value, then one entry per outer iteration
    likelihood_trace: list = field(default_factory=list)  # p + q at each iterate
    iterations: int = 0
    converged: bool = False


def detect(Y, codebook, effective_channel=None, options=None, rng=None) -> DetectionResult:
    """Estimate gamma_tilde from one received block ``Y`` (n0 x M)."""
    options = options or DetectorOptions()
    C = codebook.C if hasattr(codebook, "C") else np.asarray(codebook)
    N = C.shape[1]
    T_max = options.t_max(N)
    refresh = N if options.refresh_every is None else options.refresh_every
    if rng is None:
        rng = np.random.default_rng(options.seed)
    G_tilde = None if effective_channel is None else effective_channel.G_tilde
    state = DetectorState(Y, C, options.sigma2, G_tilde=G_tilde, mode=options.mode)

    exact = options.update == "exact"
    value = state.full_objective if exact else state.objective
    trace = [value()]
    likelihood = [state.full_objective()]
    delta = np.inf
    i = 0
    while delta > options.tol and i < options.max_outer_iters:
        if i > 0 and not exact:
            state.set_linearization_point()
        v = value()
        order = _visit_order(rng, N, T_max, options.order)
        try:
            state.sweep(order, refresh, options.update)
        except NumericalError as exc:
            exc.iteration = i
            raise
        o_new = value()
        delta = v - o_new
        trace.append(o_new)
        likelihood.append(state.full_objective())
        i += 1
    state.refresh()
    return DetectionResult(gamma_hat=state.gamma_tilde.copy(), trace=trace,
                           likelihood_trace=likelihood, iterations=i,
                           converged=bool(delta <= options.tol))


def _visit_order(rng, N, T_max, kind):
    if kind == "uniform":
        return rng.integers(0, N, size=T_max)
    passes = -(-T_max // N)
    return np.concatenate([rng.permutation(N) for _ in range(passes)])[:T_max]


def select_support(gamma_hat, K_tilde_a, delta=0):
    """0-based indices of the K = K_tilde_a + delta largest entries, ties to lower index."""
    gamma_hat = np.asarray(gamma_hat)
    K = int(K_tilde_a) + int(delta)
    if K > gamma_hat.size:
        raise ConfigError(f"support size K={K} exceeds 2^J={gamma_hat.size}")
    if K <= 0:
        return np.array([], dtype=np.int64)
    order = np.lexsort((np.arange(gamma_hat.size), -gamma_hat))
    return np.sort(order[:K])
