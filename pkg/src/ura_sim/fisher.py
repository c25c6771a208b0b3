"""Fisher information of the effective activity vector and error statistics.

Each received column is CN(mu_m, Sigma) with mean C diag(g) G_tilde and
covariance Sigma = C diag(g) C^H + sigma2 I, both driven by the same g.
With A = C^H Sigma^{-1} C the information matrix is

    F_ij = M |A_ij|^2 + 2 Re(A_ij * (G_tilde G_tilde^H)_ji)

(the covariance part plus the mean part). ``form="expanded"`` evaluates a
longer closed form term by term instead. It agrees with the above only when
G_tilde = 0 and is kept for comparison.
"""
import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AggregationError, AnalysisError, NumericalError

FORMS = ("exact", "expanded")
RIDGE_SCALE = 1e-10
GAMMA_FLOOR = 1e-6


@dataclass(frozen=True)
class FisherMatrix:
    F: np.ndarray
    gamma_tilde: np.ndarray
    M: int
    form: str = "exact"

    @property
    def size(self):
        return self.F.shape[0]

    @property
    def F_inv(self):
        return predicted_covariance(self)[0]

    def is_symmetric(self, rtol=1e-10):
        return np.max(np.abs(self.F - self.F.T)) <= rtol * max(np.linalg.norm(self.F), 1e-300)


@dataclass
class PredictedErrors:
    mean: np.ndarray
    variance: np.ndarray
    regularized: np.ndarray  # coordinates whose pivot needed the ridge
    ridge: float


def _unpack(codebook, effective_channel):
    C = getattr(codebook, "C", codebook)
    C = np.asarray(C, dtype=complex)
    if effective_channel is None:
        G = None
    else:
        G = getattr(effective_channel, "G_tilde", effective_channel)
        G = None if G is None else np.asarray(G, dtype=complex)
    return C, G


def _sigma_inv(C, gamma, sigma2):
    S = (C * gamma) @ C.conj().T + sigma2 * np.eye(C.shape[0])
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    Li = np.linalg.inv(L)
    return Li.conj().T @ Li


def fisher_matrix(gamma_tilde_true, codebook, effective_channel=None, sigma2=1.0, M=None,
                  form="exact") -> FisherMatrix:
    """Information matrix at ``gamma_tilde_true``.

    ``effective_channel`` is an object with ``G_tilde`` or the (N, M) array
    itself; None means a zero mean. ``M`` defaults to G_tilde's width.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    C, G = _unpack(codebook, effective_channel)
    g = np.asarray(gamma_tilde_true, dtype=float)
    N = C.shape[1]
    if g.shape != (N,):
        raise ValueError(f"gamma has shape {g.shape}, expected ({N},)")
    if np.any(g < 0):
        raise ValueError("gamma must be non-negative")
    if M is None:
        if G is None:
            raise ValueError("M is required when there is no mean term")
        M = G.shape[1]
    if G is None:
        G = np.zeros((N, M), dtype=complex)
    elif G.shape[0] != N:
        raise ValueError(f"G_tilde has {G.shape[0]} rows, expected {N}")
    Si = _sigma_inv(C, g, sigma2)
    A = C.conj().T @ Si @ C
    if form == "exact":
        F = M * np.abs(A) ** 2 + 2.0 * np.real(A * (G @ G.conj().T).T)
    else:
        F = _expanded_form(C, g, G, Si, A, M)
    F = 0.5 * (F + F.T)
    if not np.all(np.isfinite(F)):
        raise NumericalError("non-finite Fisher entries")
    return FisherMatrix(F=F, gamma_tilde=g.copy(), M=int(M), form=form)


def _expanded_form(C, g, G, Si, A, M):
    GG = G @ G.conj().T
    CG = C * g
    X1 = CG @ GG @ C.conj().T  # C Gam G G^H C^H
    X2 = CG @ GG @ CG.conj().T  # C Gam G G^H Gam C^H
    X3 = C @ GG @ CG.conj().T  # C G G^H Gam C^H
    const = 2.0 * np.trace(Si @ C @ GG @ C.conj().T)
    P1 = C.conj().T @ Si @ X1 @ Si @ C
    P2 = C.conj().T @ Si @ X2 @ Si @ C
    P3 = C.conj().T @ Si @ X3 @ Si @ C
    d1, d3 = np.diag(P1), np.diag(P3)
    F = (M * A * A.T + const
         - d1[None, :] - d1[:, None]
         - A * P2.T + d3[:, None]
         - A.T * P2 + d3[None, :])
    return np.real(F)


def predicted_covariance(fisher: FisherMatrix):
    """(F^{-1}, regularized coordinates, ridge) with the ridge used only if needed."""
    F = fisher.F
    N = F.shape[0]
    if not np.linalg.norm(F) > 0:
        raise AnalysisError("Fisher matrix is identically zero")
    ridge = RIDGE_SCALE * np.trace(F) / N
    try:
        np.linalg.cholesky(F)
        return np.linalg.inv(F), np.zeros(0, dtype=int), 0.0
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(F)
    weak = w < ridge
    regularized = np.unique(np.argmax(np.abs(V[:, weak]), axis=0)) if weak.any() else np.zeros(0, int)
    Fr = F + ridge * np.eye(N)
    w_r = w + ridge
    if np.min(w_r) <= 0:
        null = int(np.argmax(np.abs(V[:, int(np.argmin(w_r))])))
        raise AnalysisError(f"Fisher matrix singular beyond the ridge; null space loads on coordinate {null}")
    return np.linalg.inv(Fr), regularized, ridge


def predicted_error_distribution(fisher) -> PredictedErrors:
    """Asymptotic per-coordinate error variance diag(F^{-1}); the mean is zero."""
    if not isinstance(fisher, FisherMatrix):
        F = np.asarray(fisher, dtype=float)
        fisher = FisherMatrix(F=F, gamma_tilde=np.zeros(F.shape[0]), M=0)
    cov, reg, ridge = predicted_covariance(fisher)
    n = fisher.size
    return PredictedErrors(mean=np.zeros(n), variance=np.diag(cov).copy(), regularized=reg, ridge=ridge)


def log_likelihood(Y, codebook, gamma, effective_channel=None, sigma2=1.0):
    """Exact Gaussian log-likelihood of Y (up to the constant -n0 M log pi)."""
    C, G = _unpack(codebook, effective_channel)
    Y = np.asarray(Y)
    g = np.asarray(gamma, dtype=float)
    S = (C * g) @ C.conj().T + sigma2 * np.eye(C.shape[0])
    R = Y if G is None else Y - (C * g) @ G
    sign, logdet = np.linalg.slogdet(S)
    if sign.real <= 0:
        raise NumericalError("covariance is not positive definite")
    return -Y.shape[1] * logdet - np.real(np.trace(np.linalg.solve(S, R) @ R.conj().T))


def sample_received(codebook, gamma, effective_channel, sigma2, M, rng):
    """Draw Y with columns CN(C diag(g) G_tilde[:, m], C diag(g) C^H + sigma2 I)."""
    C, G = _unpack(codebook, effective_channel)
    g = np.asarray(gamma, dtype=float)
    n0 = C.shape[0]
    S = (C * g) @ C.conj().T + sigma2 * np.eye(n0)
    W = (rng.standard_normal((n0, M)) + 1j * rng.standard_normal((n0, M))) / np.sqrt(2.0)
    Y = np.linalg.cholesky(S) @ W
    if G is not None:
        Y = Y + (C * g) @ G
    return Y


# --- empirical error statistics ---------------------------------------------

@dataclass(frozen=True)
class ErrorRun:
    """One detector output for a shared ground truth; ``key`` identifies the setup."""

    gamma_hat: np.ndarray
    mode: str
    key: str = ""


@dataclass
class ErrorSample:
    errors: np.ndarray  # (trials, N)
    mode: str
    key: str = ""
    predicted_variance: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def count(self):
        return self.errors.shape[0]

    @property
    def mean(self):
        return self.errors.mean(axis=0)

    @property
    def variance(self):
        return self.errors.var(axis=0, ddof=1) if self.count > 1 else np.zeros(self.errors.shape[1])

    @property
    def mean_standard_error(self):
        return np.sqrt(self.variance / max(self.count, 1))

    def histogram(self, bins=41, limit=None):
        """Pooled empirical PDF: (edges, density). A zero-width spread lands in the centre bin."""
        flat = self.errors.ravel()
        if limit is None:
            limit = float(np.max(np.abs(flat))) if flat.size else 0.0
        if limit == 0.0:
            limit = 1.0
        edges = np.linspace(-limit, limit, bins + 1)
        dens, _ = np.histogram(np.clip(flat, -limit, limit), bins=edges, density=True)
        return edges, dens

    def scatter_rows(self):
        t, n = np.indices(self.errors.shape)
        return np.column_stack([n.ravel(), self.errors.ravel()])

    def write_scatter_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coordinate", "error_value"])
            for coord, err in self.scatter_rows():
                w.writerow([int(coord), repr(float(err))])

    def write_histogram_csv(self, path, bins=41, limit=None):
        edges, dens = self.histogram(bins, limit)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "density"])
            for lo, hi, d in zip(edges[:-1], edges[1:], dens):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])

    def summary(self):
        out = {
            "mode": self.mode, "key": self.key, "count": int(self.count),
            "mean": self.mean.tolist(), "variance": self.variance.tolist(),
        }
        if self.predicted_variance is not None:
            out["predicted_variance"] = np.asarray(self.predicted_variance).tolist()
        return out

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def collect_error_samples(runs, true_gamma, predicted_variance=None):
    """Group runs by detector mode into :class:`ErrorSample` objects.

    All runs must share one ``key``; anything else means they were produced
    under different setups and cannot be pooled.
    """
    runs = list(runs)
    if not runs:
        raise AggregationError("no runs to aggregate")
    keys = {r.key for r in runs}
    if len(keys) > 1:
        raise AggregationError(f"runs come from different setups: {sorted(keys)}")
    truth = np.asarray(true_gamma, dtype=float)
    by_mode = {}
    for r in runs:
        gh = np.asarray(r.gamma_hat, dtype=float)
        if gh.shape != truth.shape:
            raise AggregationError(f"estimate shape {gh.shape} does not match truth {truth.shape}")
        by_mode.setdefault(r.mode, []).append(gh - truth)
    key = keys.pop()
    return {m: ErrorSample(errors=np.array(e), mode=m, key=key, predicted_variance=predicted_variance)
            for m, e in by_mode.items()}


def smaller_variance_mode(samples):
    """Mode whose coordinate-wise variance is smaller in the most coordinates, with the win share."""
    modes = sorted(samples)
    if len(modes) != 2:
        raise AggregationError("need exactly two modes to compare")
    a, b = (samples[m].variance for m in modes)
    share_a = float(np.mean(a < b))
    return (modes[0], share_a) if share_a >= 0.5 else (modes[1], float(np.mean(b < a)))
