"""End-to-end Monte Carlo driver.

One trial: sample distinct messages, tree-encode them, map sub-blocks to
codewords, push them through one channel realization (shared by the L
sub-slots, fresh noise per sub-slot), detect each sub-slot, keep the top
K_tilde_a + delta codewords and stitch. Every random draw comes from a
stream derived from (seed, trial), so results do not depend on the order
or the process in which trials run.
"""
import csv
import json
import logging
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codebook import Codebook, generate_codebook
from .config import SystemConfig
from .errors import ConfigError, NumericalError, UraSimError
from .inner_detector import (DetectorOptions, detect, genie_effective_channel,
                             prior_effective_channel, select_support)
from .length_optimizer import evaluate_allocation, optimize_lengths
from .outer_code import (AllocationProfile, ParityGeneratorSet, SubBlockList,
                         encode_values, outer_decode)
from .population import Population, build_population, complex_normal, draw_channel

log = logging.getLogger(__name__)

SWEEP_AXES = {
    "M": int, "K_a": int, "d_max": float, "eb_n0_db": float, "p_th": float,
    "detector": str, "channel_mode": str, "K_tot": int, "delta": int, "kappa": float,
}
INNER_MODES = ("detector", "oracle")
MAX_ABORT_FRACTION = 0.01
IDENTITY_TOL = 1e-10

# spawn-key roots for the independent random streams
_POPULATION, _TRIAL, _CODEBOOK, _GENERATORS = 0, 1, 2, 3


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class TransmissionRound:
    messages: np.ndarray  # (K_a, b) bits
    active_set: np.ndarray  # UE index per message
    values: np.ndarray  # (K_a, L) 0-based codeword indices
    gamma: np.ndarray  # (L, N) sum of beta over UEs on each codeword
    gamma_tilde: np.ndarray  # (L, N) sum of beta * alpha
    Y: np.ndarray  # (L, n0, M)
    effective: list  # per-slot genie EffectiveChannelModel
    identity_error: float = 0.0  # max Frobenius gap between the two signal forms

    @property
    def ground_truth(self):
        """Sorted distinct codeword indices per sub-slot."""
        return [np.unique(self.values[:, l]) for l in range(self.values.shape[1])]

    def activity_matrix(self, l, K_tot):
        """A_l (N x K_tot): column k is the one-hot codeword of UE k, zero if inactive."""
        N = self.gamma.shape[1]
        A = np.zeros((N, K_tot))
        A[self.values[:, l], self.active_set] = 1.0
        return A


@dataclass
class Setup:
    """Everything fixed across the trials of one sweep point."""

    cfg: SystemConfig
    population: Population
    codebook: Codebook
    alloc: AllocationProfile
    gens: ParityGeneratorSet
    options: DetectorOptions
    inner: str = "detector"
    keep_traces: bool = False


def sample_messages(K_a, b, rng, max_redraws=1000):
    """Uniform b-bit messages, redrawn until pairwise distinct."""
    msgs = rng.integers(0, 2, size=(K_a, b), dtype=np.uint8)
    for _ in range(max_redraws):
        _, first = np.unique(msgs, axis=0, return_index=True)
        if first.size == K_a:
            return msgs
        dup = np.setdiff1d(np.arange(K_a), first)
        log.info("redrawing %d colliding messages", dup.size)
        msgs[dup] = rng.integers(0, 2, size=(dup.size, b), dtype=np.uint8)
    raise ConfigError(f"cannot draw {K_a} distinct {b}-bit messages")


def synthesize_received(messages, population, codebook, cfg, rng, alloc, gens, channel=None,
                        check_identity=True) -> TransmissionRound:
    """Received blocks for every sub-slot.

    Y_l = C A_l B^{1/2} H + Z_l. The compact per-codeword form
    C Gamma_l^{1/2} H_tilde_l + Z_l is evaluated as well and the largest
    Frobenius gap between the two is recorded (and must stay below 1e-10).
    """
    messages = np.atleast_2d(np.asarray(messages, dtype=np.uint8)).reshape(-1, alloc.b)
    K_a = messages.shape[0]
    N, M, L = codebook.size, population.M, alloc.L
    n0 = codebook.n0
    if channel is None:
        channel = draw_channel(population, cfg.replace(K_a=max(K_a, 1)), rng)
    active = np.asarray(channel.active_set[:K_a], dtype=np.int64)
    values = encode_values(messages, alloc, gens) if K_a else np.zeros((0, L), np.int64)
    beta = population.beta[active]
    alpha = population.alpha[active]
    weighted = np.sqrt(beta)[:, None] * channel.H[active]  # rows sqrt(beta_k) h_k
    Y = np.empty((L, n0, M), dtype=complex)
    gamma = np.zeros((L, N))
    gamma_tilde = np.zeros((L, N))
    effective = []
    gap = 0.0
    for l in range(L):
        v = values[:, l]
        Z = complex_normal(rng, (n0, M), cfg.sigma2)
        signal = codebook.C[:, v] @ weighted if K_a else np.zeros((n0, M), complex)
        Y[l] = signal + Z
        eff = genie_effective_channel(v, population.G[active], alpha, beta, N, cfg.genie_form)
        effective.append(eff)
        gamma[l] = eff.gamma_true
        gamma_tilde[l] = eff.gamma_tilde_true
        if check_identity and K_a:
            # dense form with the full activity matrix
            A = np.zeros((N, len(population)))
            A[v, active] = 1.0
            full = codebook.C @ (A * np.sqrt(population.beta)[None, :]) @ channel.H
            # compact form: h_tilde_r = sum_k sqrt(beta_k) h_k / sqrt(gamma_r)
            Ht = np.zeros((N, M), dtype=complex)
            np.add.at(Ht, v, weighted)
            on = gamma[l] > 0
            Ht[on] /= np.sqrt(gamma[l][on])[:, None]
            compact = (codebook.C * np.sqrt(gamma[l])) @ Ht
            gap = max(gap, float(np.linalg.norm(full - compact)), float(np.linalg.norm(full - signal)))
    if gap > IDENTITY_TOL:
        raise NumericalError(f"received-signal forms disagree by {gap:.3g}")
    return TransmissionRound(messages=messages, active_set=active, values=values, gamma=gamma,
                             gamma_tilde=gamma_tilde, Y=Y, effective=effective, identity_error=gap)


@dataclass
class TrialResult:
    trial: int
    p_md: float
    p_fa: float
    n_decoded: int
    chi: np.ndarray
    checked: int
    recall: np.ndarray  # per slot
    precision: np.ndarray
    iterations: np.ndarray  # per slot
    converged: np.ndarray
    trace: Optional[list] = None  # first sub-slot objective trace
    aborted: str = ""


def _allocation(cfg):
    if cfg.p_th is None:
        return AllocationProfile.uniform(cfg.L, cfg.J, cfg.b)
    res = optimize_lengths(cfg.K_list, cfg.L, cfg.J, cfg.b, cfg.p_th, relax=True)
    if not res.feasible:
        log.warning("p_th=%g unreachable; using best-effort allocation %s", cfg.p_th, res.a)
    return AllocationProfile.from_parity(cfg.J, res.a)


def build_setup(cfg: SystemConfig, inner="detector", keep_traces=False) -> Setup:
    if inner not in INNER_MODES:
        raise ConfigError(f"inner must be one of {INNER_MODES}")
    population = build_population(cfg, _stream(cfg.seed, _POPULATION))
    cb_rng = (np.random.default_rng(cfg.codebook_seed) if cfg.codebook_seed is not None
              else _stream(cfg.seed, _CODEBOOK))
    codebook = generate_codebook(cfg.n0, cfg.J, cfg.P, rng=cb_rng, seed=cfg.codebook_seed)
    alloc = _allocation(cfg)
    g_rng = (np.random.default_rng(cfg.generator_seed) if cfg.generator_seed is not None
             else _stream(cfg.seed, _GENERATORS))
    gens = ParityGeneratorSet.random(alloc, rng=g_rng)
    options = DetectorOptions(max_outer_iters=cfg.max_outer_iters, tol=cfg.tol, sweeps=cfg.sweeps,
                              mode=cfg.detector, sigma2=cfg.sigma2, update=cfg.update,
                              order=cfg.visit_order)
    return Setup(cfg=cfg, population=population, codebook=codebook, alloc=alloc, gens=gens,
                 options=options, inner=inner, keep_traces=keep_traces)


def run_trial(setup: Setup, trial: int) -> TrialResult:
    cfg = setup.cfg
    msg_rng, chan_rng, det_rng = (
        np.random.default_rng(s)
        for s in np.random.SeedSequence(cfg.seed, spawn_key=(_TRIAL, trial)).spawn(3))
    L = cfg.L
    try:
        messages = sample_messages(cfg.K_a, cfg.b, msg_rng)
        rnd = synthesize_received(messages, setup.population, setup.codebook, cfg, chan_rng,
                                  setup.alloc, setup.gens)
        truth = rnd.ground_truth
        K = cfg.K_list
        iters = np.zeros(L, dtype=np.int64)
        conv = np.ones(L, dtype=bool)
        trace = None
        if setup.inner == "oracle":
            lists = SubBlockList.from_sets(truth, K=max(K, max(len(t) for t in truth)))
        else:
            prior = (prior_effective_channel(setup.population, cfg.K_tilde_a, cfg.N)
                     if cfg.channel_mode == "prior" else None)
            rows = []
            for l in range(L):
                eff = rnd.effective[l] if prior is None else prior
                res = detect(rnd.Y[l], setup.codebook, eff, setup.options, rng=det_rng)
                iters[l], conv[l] = res.iterations, res.converged
                if l == 0 and setup.keep_traces:
                    trace = list(zip(res.trace, res.likelihood_trace))
                rows.append(select_support(res.gamma_hat, cfg.K_tilde_a, cfg.delta))
            lists = SubBlockList(np.array(rows, dtype=np.int64))
        recall = np.empty(L)
        precision = np.empty(L)
        for l in range(L):
            got = lists.values[l][lists.values[l] >= 0]
            hit = np.intersect1d(got, truth[l]).size
            recall[l] = hit / truth[l].size
            precision[l] = hit / max(got.size, 1)
        dec = outer_decode(lists, setup.alloc, setup.gens)
        sent = {m.tobytes() for m in messages}
        found = {m.tobytes() for m in dec.messages}
        p_md = len(sent - found) / len(sent)
        p_fa = len(found - sent) / len(found) if found else 0.0
        real = lists.values[0] >= 0  # padded list slots are not roots
        return TrialResult(trial=trial, p_md=p_md, p_fa=p_fa, n_decoded=len(found), chi=dec.chi[real],
                           checked=dec.total_checked, recall=recall, precision=precision,
                           iterations=iters, converged=conv, trace=trace)
    except UraSimError as exc:
        log.warning("trial %d aborted: %s", trial, exc)
        return TrialResult(trial=trial, p_md=np.nan, p_fa=np.nan, n_decoded=0,
                           chi=np.zeros(0, np.int64), checked=0, recall=np.full(L, np.nan),
                           precision=np.full(L, np.nan), iterations=np.zeros(L, np.int64),
                           converged=np.zeros(L, bool), aborted=f"{type(exc).__name__}: {exc}")


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


@dataclass
class MetricsReport:
    axis: str
    value: object
    cfg: SystemConfig
    trials: int
    aborted: int
    p_md: float
    p_md_se: float
    p_fa: float
    p_fa_se: float
    p_e: float
    p_e_se: float
    recall: float
    precision: float
    chi_mean: float
    chi_zero: float
    chi_multi: float
    checked_mean: float
    xi: float
    survivors_bound: float
    iterations_mean: float
    converged_frac: float
    allocation: tuple
    elapsed_s: float = 0.0
    traces: list = field(default_factory=list, repr=False)
    abort_reasons: list = field(default_factory=list, repr=False)

    COLUMNS = ("axis", "value", "detector", "channel_mode", "M", "K_a", "d_max", "eb_n0_db",
               "trials", "aborted", "p_md", "p_md_se", "p_fa", "p_fa_se", "p_e", "p_e_se",
               "support_recall", "support_precision", "chi_mean", "chi_zero_frac",
               "chi_multi_frac", "checked_nodes_mean", "xi", "survivors_bound",
               "outer_iters_mean", "converged_frac", "allocation")

    def row(self):
        c = self.cfg
        vals = [self.axis, self.value, c.detector, c.channel_mode, c.M, c.K_a, c.d_max, c.eb_n0_db,
                self.trials, self.aborted, self.p_md, self.p_md_se, self.p_fa, self.p_fa_se,
                self.p_e, self.p_e_se, self.recall, self.precision, self.chi_mean, self.chi_zero,
                self.chi_multi, self.checked_mean, self.xi, self.survivors_bound,
                self.iterations_mean, self.converged_frac, " ".join(map(str, self.allocation))]
        return [repr(v) if isinstance(v, float) else v for v in vals]


def aggregate(setup: Setup, results, axis="", value=None) -> MetricsReport:
    """Associative summary of trial results (order of ``results`` is irrelevant)."""
    results = sorted(results, key=lambda r: r.trial)
    ok = [r for r in results if not r.aborted]
    p_md = [r.p_md for r in ok]
    p_fa = [r.p_fa for r in ok]
    p_e = [a + b for a, b in zip(p_md, p_fa)]
    chi = np.concatenate([r.chi for r in ok]) if ok else np.zeros(0)
    m_md, s_md = _mean_se(p_md)
    m_fa, s_fa = _mean_se(p_fa)
    m_e, s_e = _mean_se(p_e)
    alloc = setup.alloc
    xi, bound = evaluate_allocation(alloc.parity, setup.cfg.K_list, alloc.L) if alloc.L > 1 else (0.0, 0.0)

    def avg(vals):
        vals = list(vals)
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(
        axis=axis, value=value, cfg=setup.cfg, trials=len(results),
        aborted=len(results) - len(ok), p_md=m_md, p_md_se=s_md, p_fa=m_fa, p_fa_se=s_fa,
        p_e=m_e, p_e_se=s_e,
        recall=avg(np.mean(r.recall) for r in ok), precision=avg(np.mean(r.precision) for r in ok),
        chi_mean=float(chi.mean()) if chi.size else float("nan"),
        chi_zero=float(np.mean(chi == 0)) if chi.size else float("nan"),
        chi_multi=float(np.mean(chi >= 2)) if chi.size else float("nan"),
        checked_mean=avg(r.checked for r in ok), xi=float(xi), survivors_bound=float(bound),
        iterations_mean=avg(np.mean(r.iterations) for r in ok),
        converged_frac=avg(np.mean(r.converged) for r in ok),
        allocation=alloc.a, traces=[(r.trial, r.trace) for r in ok if r.trace is not None],
        abort_reasons=[(r.trial, r.aborted) for r in results if r.aborted])


def parse_sweep(spec):
    """'axis=a,b,c' -> (axis, [typed values])."""
    if spec is None:
        return None
    if "=" not in spec:
        raise ConfigError(f"sweep must look like axis=a,b,c, got {spec!r}")
    axis, raw = (s.strip() for s in spec.split("=", 1))
    if axis not in SWEEP_AXES:
        raise ConfigError(f"cannot sweep {axis!r}; choose from {sorted(SWEEP_AXES)}")
    try:
        values = [SWEEP_AXES[axis](v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value in {spec!r}") from exc
    if not values:
        raise ConfigError("empty sweep")
    return axis, values


def run_point(cfg, inner="detector", keep_traces=False, workers=1, axis="", value=None):
    setup = build_setup(cfg, inner=inner, keep_traces=keep_traces)
    t0 = time.perf_counter()
    trials = range(cfg.trials)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_trial, [setup] * cfg.trials, trials, chunksize=8))
    else:
        results = [run_trial(setup, t) for t in trials]
    report = aggregate(setup, results, axis=axis, value=value)
    report.elapsed_s = time.perf_counter() - t0
    if report.aborted > MAX_ABORT_FRACTION * report.trials:
        raise NumericalError(
            f"{report.aborted}/{report.trials} trials aborted at {axis}={value}: "
            f"{report.abort_reasons[0][1]}")
    return report


def run_experiment(cfg: SystemConfig, sweep=None, out_dir=None, inner="detector", workers=1,
                   keep_traces=True):
    """Run every sweep point; optionally persist CSV/JSON artifacts to ``out_dir``."""
    if isinstance(sweep, str):
        sweep = parse_sweep(sweep)
    points = [("", None, cfg)] if sweep is None else [
        (sweep[0], v, cfg.replace(**{sweep[0]: v})) for v in sweep[1]]
    reports = [run_point(c, inner=inner, keep_traces=keep_traces, workers=workers, axis=a, value=v)
               for a, v, c in points]
    if out_dir is not None:
        write_artifacts(out_dir, cfg, sweep, reports)
    return reports


def version_string():
    from importlib.metadata import PackageNotFoundError, version
    try:
        base = version("artifact")
    except PackageNotFoundError:
        base = "0+unknown"
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                              capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{base}+{desc}" if desc else base


FIGURE_FILES = {"M": "fig7_pe.csv", "K_a": "fig7_pe.csv", "d_max": "fig11_pe.csv"}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_artifacts(out_dir, cfg, sweep, reports):
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "results.csv"), MetricsReport.COLUMNS, [r.row() for r in reports])
    trace_rows = []
    for r in reports:
        for trial, tr in r.traces:
            for it, (obj, lik) in enumerate(tr):
                trace_rows.append([r.axis, r.value, trial, it, repr(float(obj)), repr(float(lik))])
    _write_csv(os.path.join(out_dir, "fig4_trace.csv"),
               ["axis", "value", "trial", "iteration", "objective", "likelihood_objective"], trace_rows)
    axis = sweep[0] if sweep else ""
    fig = FIGURE_FILES.get(axis, "pe_curve.csv")
    _write_csv(os.path.join(out_dir, fig), ["axis", "value", "detector", "p_e", "p_e_se", "p_md", "p_fa"],
               [[r.axis, r.value, r.cfg.detector, repr(r.p_e), repr(r.p_e_se), repr(r.p_md), repr(r.p_fa)]
                for r in reports])
    manifest = {
        "version": version_string(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "sweep": None if sweep is None else {"axis": sweep[0], "values": list(sweep[1])},
        "points": [{"value": r.value, "config_hash": r.cfg.digest(), "aborted": r.aborted,
                    "abort_reasons": r.abort_reasons} for r in reports],
        "timings": {"elapsed_s": [r.elapsed_s for r in reports]},
        "files": sorted(set(os.listdir(out_dir)) | {"manifest.json"}),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest

