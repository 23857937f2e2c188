"""Automatic tuning of the joint approximation sequences and debiasing laws.

The pipeline per estimator target (one per observation for IA, one merged for
RA): profile convergence in the truncation level and in the accuracy exponent
separately, place offsets just past the last surge of each profile, slope the
accuracy against the level, then fit the geometric law to the decay of the
joint sequence's differences. A grid stage compares candidate noise floors by
estimator cost and picks the proposal scale by effective samples per GFLOP.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .debias import (
    ACCURACY_CAP,
    EstimatorConfig,
    GeometricLaw,
    JointSequence,
    LikelihoodEstimator,
)
from .diagnostics import ess
from .expm import FlopMeter
from .sampler import Prior, sample_chain

__all__ = [
    "ConvergenceProfile",
    "profile",
    "last_peak",
    "offset_from_profile",
    "tune_sigma",
    "fit_p",
    "TunedConfig",
    "tune_estimator",
    "estimate_sigma_zeta",
    "map_estimate",
    "laplace_covariance",
    "grid_select",
    "P_MIN_GRID",
    "SIGMA_BAR_GRID",
    "tuned_config_to_text",
    "tuned_config_from_text",
]

P_MIN_GRID = (0.0, 0.01, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9)
SIGMA_BAR_GRID = (0.1, 1.0, 1.5, 2.0)
P_CLAMP = (0.4, 0.9)
K_START = -10

# relative decrease forgiven while walking supposedly nondecreasing profiles
_REL_SLACK = 1e-9


@dataclass(frozen=True)
class ConvergenceProfile:
    """Convergence of one a(r, k) target in each index separately.

    trunc_values[i] is a(i, k_high); acc_values[j] is a(r_eps, K_START + j).
    a_star is the converged value a(r_eps, k_high); r_eps and k_eps are the
    levels past which growth changes the value by less than the tolerance.
    """

    trunc_values: np.ndarray
    acc_values: np.ndarray
    a_star: float
    r_eps: int
    k_eps: float
    k_high: float
    k_start: int = K_START


def profile(value_fn, eps: float = 1e-8, r_explore: int = 15,
            r_cap: int = 200) -> ConvergenceProfile:
    """Scan the truncation level, then the accuracy exponent, to convergence.

    Differences are taken relative to the running value so targets of any
    magnitude (single transition probabilities or long products) profile the
    same way. The level scan runs at least r_explore evaluations and at most
    r_cap; the accuracy scan walks from K_START until within eps of the
    converged value, capped at the accuracy ceiling.
    """
    k_high = min(-math.log10(eps), ACCURACY_CAP)

    trunc_values = []
    r = 0
    delta = math.inf
    a_old = 0.0
    while (r < r_explore or delta >= eps) and r <= r_cap:
        a_new = float(value_fn(r, k_high))
        trunc_values.append(a_new)
        ref = a_new if a_new > 0 else 1.0
        delta = (a_new - a_old) / ref
        a_old = a_new
        r += 1
    r_eps = r - 1
    a_star = trunc_values[-1]

    acc_values = []
    k = K_START
    delta = math.inf
    ref = a_star if a_star > 0 else 1.0
    while delta >= eps and k <= ACCURACY_CAP:
        a_new = float(value_fn(r_eps, k))
        acc_values.append(a_new)
        delta = (a_star - a_new) / ref
        k += 1
    k_eps = float(k - 1)

    return ConvergenceProfile(
        trunc_values=np.asarray(trunc_values),
        acc_values=np.asarray(acc_values),
        a_star=a_star,
        r_eps=r_eps,
        k_eps=k_eps,
        k_high=k_high,
    )


def last_peak(diffs) -> int:
    """Index of the last local maximum, ties resolved toward larger index.

    Only positive differences can host a peak: a converged tail of zeros is
    not a surge, so it never drags the offset out to full convergence.
    """
    d = np.asarray(diffs, dtype=float)
    n = d.size
    if n == 0:
        return 0
    for i in range(n - 1, -1, -1):
        left_ok = i == 0 or d[i] >= d[i - 1]
        right_ok = i == n - 1 or d[i] > d[i + 1]
        if d[i] > 0 and left_ok and right_ok:
            return i
    return 0


def offset_from_profile(values, a_star: float, p_min: float) -> int:
    """First index at or past the difference peak with value >= p_min * a_star."""
    values = np.asarray(values, dtype=float)
    diffs = np.diff(values, prepend=0.0)
    start = last_peak(diffs)
    threshold = p_min * a_star
    for i in range(start, values.size):
        if values[i] >= threshold:
            return i
    return values.size - 1


def tune_sigma(value_fn, prof: ConvergenceProfile, trunc_offset: int,
               acc_offset: float, sigma_default: float = 0.1) -> float:
    """Slope of accuracy against level along the joint sequence.

    Starts from the profile aspect ratio (at least sigma_default) and doubles
    whenever the joint walk decreases while still below the profiled accuracy
    ceiling, so accuracy error never dominates the truncation gain.
    """
    if prof.k_eps <= acc_offset:
        return sigma_default
    sigma = max(sigma_default,
                (prof.r_eps - trunc_offset) / (prof.k_eps - acc_offset))
    n = 0
    a_old = 0.0
    doublings = 0
    while True:
        r = trunc_offset + n
        k = acc_offset + sigma * n
        if r > prof.r_eps or k > prof.k_eps:
            break
        a_new = float(value_fn(r, min(k, ACCURACY_CAP)))
        ref = max(a_new, a_old, 1e-300)
        if a_new < a_old - _REL_SLACK * ref and k <= prof.k_eps and doublings < 60:
            sigma *= 2.0
            doublings += 1
            continue
        a_old = a_new
        n += 1
    return sigma


def _joint_values(value_fn, prof: ConvergenceProfile, trunc_offset: int,
                  acc_offset: float, sigma: float) -> np.ndarray:
    vals = []
    n = 0
    while True:
        r = trunc_offset + n
        k = acc_offset + sigma * n
        if r > prof.r_eps or k > prof.k_eps:
            break
        vals.append(float(value_fn(r, min(k, ACCURACY_CAP))))
        n += 1
    if not vals:
        vals.append(float(value_fn(trunc_offset, min(acc_offset, ACCURACY_CAP))))
    return np.asarray(vals)


def fit_p(joint_diffs) -> float:
    """Geometric success probability fitted to the difference decay.

    Regresses log(d_n) - log(d_0) on n with no intercept; the implied decay
    e^beta maps to p = 1 - e^beta, clamped into P_CLAMP. Degenerate inputs
    (no usable positive differences) fall back to the upper clamp, the safe
    choice when convergence is effectively immediate.
    """
    d = np.asarray(joint_diffs, dtype=float)
    if d.size == 0 or d[0] <= 0.0:
        return P_CLAMP[1]
    xs, ns = [], []
    for n in range(1, d.size):
        if d[n] > 0.0:
            xs.append(math.log(d[n]) - math.log(d[0]))
            ns.append(n)
    if not ns:
        return P_CLAMP[1]
    ns = np.asarray(ns, dtype=float)
    xs = np.asarray(xs)
    beta = float((ns * xs).sum() / (ns * ns).sum())
    p = 1.0 - math.exp(beta)
    return min(max(p, P_CLAMP[0]), P_CLAMP[1])


# ---------------------------------------------------------------------------
# tuned configurations


@dataclass(frozen=True)
class TunedConfig:
    """A complete estimator-and-proposal configuration produced by tuning."""

    mode: str
    method: str
    sequence: JointSequence | None = None
    law: GeometricLaw | None = None
    sequences: tuple | None = None
    laws: tuple | None = None
    p_min: float = 0.9
    sigma_zeta: float | None = None
    proposal_cov: object = None
    q_bar_global: float | None = None

    def to_estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            mode=self.mode,
            method=self.method,
            sequence=self.sequence or JointSequence(),
            law=self.law or GeometricLaw(0.5),
            sequences=self.sequences,
            laws=self.laws,
            q_bar_global=self.q_bar_global,
        )


def _tune_target(value_fn, p_min: float, eps: float, r_explore: int,
                 sigma_default: float, prof: ConvergenceProfile | None = None):
    """Offsets, slope, and law for one estimator target."""
    if prof is None:
        prof = profile(value_fn, eps=eps, r_explore=r_explore)
    trunc_offset = offset_from_profile(prof.trunc_values, prof.a_star, p_min)
    k_idx = offset_from_profile(prof.acc_values, prof.a_star, p_min)
    acc_offset = float(prof.k_start + k_idx)
    sigma = tune_sigma(value_fn, prof, trunc_offset, acc_offset, sigma_default)

    # re-place the offsets along the joint walk itself, then fit the law to
    # the joint difference decay
    joint = _joint_values(value_fn, prof, trunc_offset, acc_offset, sigma)
    n0 = offset_from_profile(joint, prof.a_star, p_min)
    trunc_offset += n0
    acc_offset += sigma * n0
    joint = joint[n0:]
    diffs = np.diff(joint)
    p = fit_p(diffs)
    seq = JointSequence(trunc_offset=trunc_offset, acc_offset=acc_offset,
                        slope=sigma)
    return seq, GeometricLaw(p), prof


def tune_estimator(estimator: LikelihoodEstimator, theta, p_min: float = 0.9,
                   eps: float = 1e-8, r_explore: int = 15,
                   sigma_default: float = 0.1,
                   profiles: list | None = None) -> TunedConfig:
    """Tune every sequence the estimator needs at the given parameter point.

    profiles, when given, are reused across calls (they do not depend on
    p_min); pass the list returned via TunedConfig.profiles of a prior call.
    """
    theta = estimator.net.validate_theta(theta)
    cfg = estimator.config
    if estimator.mode == "ra":
        f = estimator.value_fn(theta)
        prof = profiles[0] if profiles else None
        seq, law, prof = _tune_target(f, p_min, eps, r_explore, sigma_default, prof)
        tuned = TunedConfig(
            mode="ra", method=cfg.method, sequence=seq, law=law, p_min=p_min,
            q_bar_global=cfg.q_bar_global,
        )
        tuned_profiles = [prof]
    else:
        seqs, laws, tuned_profiles = [], [], []
        for i in range(estimator.n_observations):
            f = estimator.value_fn(theta, obs_index=i)
            prof = profiles[i] if profiles else None
            seq, law, prof = _tune_target(f, p_min, eps, r_explore,
                                          sigma_default, prof)
            seqs.append(seq)
            laws.append(law)
            tuned_profiles.append(prof)
        tuned = TunedConfig(
            mode="ia", method=cfg.method, sequences=tuple(seqs),
            laws=tuple(laws), p_min=p_min, q_bar_global=cfg.q_bar_global,
        )
    object.__setattr__(tuned, "profiles", tuned_profiles)
    return tuned


def estimate_sigma_zeta(estimator: LikelihoodEstimator, theta, n_draws: int = 100,
                        seed: int = 0, meter: FlopMeter | None = None) -> float:
    """Standard deviation of the log-estimate at theta over n_draws draws."""
    rng = np.random.default_rng(seed)
    draws = np.empty(n_draws)
    for i in range(n_draws):
        draws[i] = estimator.log_estimate(theta, rng, meter)
    if not np.all(np.isfinite(draws)):
        return math.inf
    return float(np.std(draws, ddof=1))


def _golden(f, lo: float, hi: float, tol: float = 1e-3, max_iter: int = 40):
    """Golden-section minimizer on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol * (abs(a) + abs(b) + 1e-12):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def map_estimate(estimator: LikelihoodEstimator, prior: Prior, theta0,
                 eps: float = 1e-8, r_explore: int = 15, sweeps: int = 2,
                 bracket: tuple = (0.25, 4.0)) -> np.ndarray:
    """Posterior mode by coordinate-wise golden-section search.

    The objective is the deterministic approximate log-likelihood at the
    profiled (r_eps, k_eps) plus the log prior; each sweep searches every
    coordinate over a multiplicative bracket around its current value.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    f0 = estimator.value_fn(theta) if estimator.mode == "ra" else \
        estimator.value_fn(theta, obs_index=0)
    prof = profile(f0, eps=eps, r_explore=r_explore)
    r_eps, k_eps = prof.r_eps, prof.k_eps

    def neg_log_post(th):
        lp = prior.log_density(th)
        if lp == -math.inf:
            return math.inf
        return -(lp + estimator.deterministic_log_likelihood(th, r_eps, k_eps))

    for _ in range(sweeps):
        for j in range(theta.size):
            def along(v):
                trial = theta.copy()
                trial[j] = v
                return neg_log_post(trial)

            theta[j] = _golden(along, theta[j] * bracket[0], theta[j] * bracket[1])
    return theta


def laplace_covariance(estimator: LikelihoodEstimator, prior: Prior, theta,
                       r: int | None = None, k: float | None = None,
                       rel_step: float = 1e-3) -> np.ndarray:
    """Gaussian-approximation covariance at a posterior mode.

    Finite-difference Hessian of the deterministic log posterior, negated and
    inverted through an eigendecomposition. Eigenvalues pass through an
    absolute value and a relative floor, so a saddle or flat direction at an
    imperfect mode keeps its measured scale instead of blowing up the
    proposal.
    """
    theta = np.asarray(theta, dtype=float)
    if r is None or k is None:
        f0 = estimator.value_fn(theta) if estimator.mode == "ra" else \
            estimator.value_fn(theta, obs_index=0)
        prof = profile(f0)
        r, k = prof.r_eps, prof.k_eps

    def logpost(th):
        lp = prior.log_density(th)
        if lp == -math.inf:
            return -math.inf
        return lp + estimator.deterministic_log_likelihood(th, r, k)

    dim = theta.size
    h = rel_step * np.maximum(np.abs(theta), 1e-8)
    base = logpost(theta)
    hess = np.zeros((dim, dim))

    def at(*shifts):
        th = theta.copy()
        for j, sign in shifts:
            th[j] += sign * h[j]
        return logpost(th)

    for i in range(dim):
        hess[i, i] = (at((i, 1)) - 2.0 * base + at((i, -1))) / h[i] ** 2
        for j in range(i + 1, dim):
            mixed = (at((i, 1), (j, 1)) - at((i, 1), (j, -1))
                     - at((i, -1), (j, 1)) + at((i, -1), (j, -1)))
            hess[i, j] = hess[j, i] = mixed / (4.0 * h[i] * h[j])

    curv = -0.5 * (hess + hess.T)
    w, vecs = np.linalg.eigh(curv)
    w = np.abs(w)
    floor = max(w.max(), 1e-12) * 1e-6
    w = np.maximum(w, floor)
    return (vecs / w) @ vecs.T


def grid_select(net, dataset, prior: Prior, theta_map, v_hat,
                base_config: EstimatorConfig | None = None,
                p_min_grid=P_MIN_GRID, sigma_bars=SIGMA_BAR_GRID,
                alpha_grid=None, n_draws: int = 100, short_run: int = 200,
                seed: int = 0, eps: float = 1e-8) -> TunedConfig:
    """Full grid stage: noise-floor grid, cost filter, proposal-scale choice.

    For each candidate p_min the estimator is tuned and its log-estimate noise
    sigma_zeta measured with common random numbers, together with the metered
    FLOP cost per estimate. For each noise ceiling the cheapest config meeting
    it is shortlisted (best effort with a warning when even the loosest
    ceiling is missed). Shortlisted configs then run short chains over the
    proposal-scale grid and the winner by effective samples per GFLOP is
    returned, with sigma_zeta and the chosen proposal covariance filled in.
    """
    base_config = base_config or EstimatorConfig()
    base_est = LikelihoodEstimator(net, dataset, base_config)
    theta_map = np.asarray(theta_map, dtype=float)
    dim = theta_map.size
    v_hat = np.asarray(v_hat, dtype=float)
    if alpha_grid is None:
        alpha_grid = tuple((2.38**2 / dim) * f for f in (0.5, 1.0, 2.0))

    profiles = None
    candidates = []
    for p_min in p_min_grid:
        tuned = tune_estimator(base_est, theta_map, p_min=p_min, eps=eps,
                               profiles=profiles)
        profiles = tuned.profiles
        est = LikelihoodEstimator(net, dataset, tuned.to_estimator_config())
        meter = FlopMeter()
        sigma_zeta = estimate_sigma_zeta(est, theta_map, n_draws=n_draws,
                                         seed=seed, meter=meter)
        candidates.append({
            "p_min": p_min,
            "tuned": tuned,
            "sigma_zeta": sigma_zeta,
            "cost_flops": meter.flops / max(n_draws, 1),
        })

    shortlist = {}
    for sigma_bar in sigma_bars:
        feasible = [c for c in candidates if c["sigma_zeta"] <= sigma_bar]
        if feasible:
            best = min(feasible, key=lambda c: c["cost_flops"])
            shortlist[best["p_min"]] = best
    if not shortlist:
        warnings.warn(
            "no tuned configuration met the loosest noise ceiling "
            f"{max(sigma_bars)}; proceeding best-effort with the quietest one"
        )
        best = min(candidates, key=lambda c: c["sigma_zeta"])
        shortlist[best["p_min"]] = best

    best_rate = -math.inf
    best_choice = None
    for cand in shortlist.values():
        est = LikelihoodEstimator(net, dataset, cand["tuned"].to_estimator_config())
        for alpha in alpha_grid:
            meter = FlopMeter()
            trace = sample_chain(
                est, prior, alpha * v_hat, short_run, seed,
                theta_init=theta_map, meter=meter,
            )
            gf = trace.cum_gflops[-1]
            rate = ess(trace.thetas) / gf if gf > 0 else 0.0
            if rate > best_rate:
                best_rate = rate
                best_choice = (cand, alpha)

    cand, alpha = best_choice
    tuned = replace(
        cand["tuned"], sigma_zeta=cand["sigma_zeta"],
        proposal_cov=alpha * v_hat,
    )
    object.__setattr__(tuned, "profiles", profiles)
    object.__setattr__(tuned, "grid_report", candidates)
    return tuned


# ---------------------------------------------------------------------------
# flat key-value serialization (consumed by the command line)


def _seq_lines(prefix: str, seq: JointSequence, law: GeometricLaw) -> list:
    return [
        f"{prefix}trunc_offset = {seq.trunc_offset}",
        f"{prefix}acc_offset = {seq.acc_offset!r}",
        f"{prefix}slope = {seq.slope!r}",
        f"{prefix}law_p = {law.p!r}",
    ]


def tuned_config_to_text(cfg: TunedConfig) -> str:
    lines = [f"mode = {cfg.mode}", f"method = {cfg.method}",
             f"p_min = {cfg.p_min!r}"]
    if cfg.sigma_zeta is not None:
        lines.append(f"sigma_zeta = {cfg.sigma_zeta!r}")
    if cfg.q_bar_global is not None:
        lines.append(f"q_bar_global = {cfg.q_bar_global!r}")
    if cfg.sequence is not None:
        lines.extend(_seq_lines("", cfg.sequence, cfg.law))
    if cfg.sequences is not None:
        for i, (seq, law) in enumerate(zip(cfg.sequences, cfg.laws)):
            lines.extend(_seq_lines(f"obs{i}.", seq, law))
    if cfg.proposal_cov is not None:
        cov = np.asarray(cfg.proposal_cov, dtype=float)
        rows = [",".join(repr(float(v)) for v in row) for row in cov]
        lines.append("proposal_cov = " + ";".join(rows))
    return "\n".join(lines) + "\n"


def tuned_config_from_text(text: str) -> TunedConfig:
    pairs = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()

    def pop(key, default=None):
        return pairs.pop(key, default)

    mode = pop("mode", "auto")
    method = pop("method", "skeletoid")
    p_min = float(pop("p_min", "0.9"))
    sigma_zeta = pop("sigma_zeta")
    sigma_zeta = float(sigma_zeta) if sigma_zeta is not None else None
    q_bar_global = pop("q_bar_global")
    q_bar_global = float(q_bar_global) if q_bar_global is not None else None
    proposal_cov = pop("proposal_cov")
    if proposal_cov is not None:
        cov = [[float(v) for v in row.split(",")]
               for row in proposal_cov.split(";")]
        proposal_cov = np.asarray(cov)

    def read_seq(prefix):
        keys = [f"{prefix}trunc_offset", f"{prefix}acc_offset",
                f"{prefix}slope", f"{prefix}law_p"]
        if not all(k in pairs for k in keys):
            return None, None
        seq = JointSequence(
            trunc_offset=int(float(pairs.pop(keys[0]))),
            acc_offset=float(pairs.pop(keys[1])),
            slope=float(pairs.pop(keys[2])),
        )
        law = GeometricLaw(float(pairs.pop(keys[3])))
        return seq, law

    sequence, law = read_seq("")
    sequences, laws = [], []
    i = 0
    while f"obs{i}.trunc_offset" in pairs:
        seq_i, law_i = read_seq(f"obs{i}.")
        sequences.append(seq_i)
        laws.append(law_i)
        i += 1
    if pairs:
        raise ValueError(f"unknown config keys: {sorted(pairs)}")
    return TunedConfig(
        mode=mode, method=method, sequence=sequence, law=law,
        sequences=tuple(sequences) if sequences else None,
        laws=tuple(laws) if laws else None,
        p_min=p_min, sigma_zeta=sigma_zeta, proposal_cov=proposal_cov,
        q_bar_global=q_bar_global,
    )
