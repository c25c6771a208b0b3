"""UE geometry, Rician parameters and per-block channel draws."""
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import ConfigError


@dataclass(frozen=True)
class UeProfile:
    d_k: float
    beta_k: float
    kappa_k: float
    alpha_k: float
    g_k: np.ndarray


@dataclass(frozen=True)
class Population:
    """Vectorized UE population; indexing yields :class:`UeProfile` views."""

    d: np.ndarray  # (K_tot,)
    beta: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray  # LOS angle per UE
    G: np.ndarray  # (K_tot, M) LOS means g_k

    def __len__(self):
        return self.d.shape[0]

    def __getitem__(self, k):
        return UeProfile(float(self.d[k]), float(self.beta[k]), float(self.kappa[k]),
                         float(self.alpha[k]), self.G[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def M(self):
        return self.G.shape[1]


@dataclass(frozen=True)
class ChannelDraw:
    H: np.ndarray  # (K_tot, M)
    active_set: np.ndarray  # sorted 0-based UE indices


def rician_factor(d):
    """kappa = 10^(1.3 - 0.003 d), d in meters."""
    return 10.0 ** (1.3 - 0.003 * np.asarray(d, dtype=float))


def steering_vector(theta, M):
    """Half-wavelength ULA response with unit-modulus entries, shape (..., M)."""
    m = np.arange(M)
    return np.exp(1j * np.pi * np.multiply.outer(np.sin(theta), m))


def large_scale_fading(d, mode, d_max):
    d = np.asarray(d, dtype=float)
    if mode == "unit":
        return np.ones_like(d)
    if mode == "db-normalized":
        # 10^(-PL(d)/10) / 10^(-PL(d_max)/10) with PL(d) = 126 + 35 log10 d
        return (d_max / d) ** 3.5
    raise ConfigError(f"unknown pathloss mode {mode!r}")


def build_population(cfg: SystemConfig, rng=None) -> Population:
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    K, M = cfg.K_tot, cfg.M
    # open interval (0, d_max)
    d = rng.uniform(0.0, cfg.d_max, size=K)
    d = np.where(d <= 0.0, np.nextafter(0.0, 1.0), d)
    if cfg.kappa is None:
        kappa = rician_factor(d)
    else:
        kappa = np.full(K, float(cfg.kappa))
    alpha = 1.0 / (kappa + 1.0)
    beta = large_scale_fading(d, cfg.pathloss, cfg.d_max)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=K)
    G = np.sqrt(kappa / (kappa + 1.0))[:, None] * steering_vector(theta, M)
    return Population(d=d, beta=beta, kappa=kappa, alpha=alpha, theta=theta, G=G)


def complex_normal(rng, shape, var=1.0):
    """i.i.d. CN(0, var) samples."""
    s = np.sqrt(var / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


def draw_channel(population: Population, cfg: SystemConfig, rng) -> ChannelDraw:
    K = len(population)
    if cfg.K_a > K:
        raise ConfigError(f"K_a={cfg.K_a} exceeds population size {K}")
    active = np.sort(rng.choice(K, size=cfg.K_a, replace=False))
    HS = complex_normal(rng, population.G.shape)
    H = population.G + np.sqrt(population.alpha)[:, None] * HS
    return ChannelDraw(H=H, active_set=active)
