"""Single-term debiasing of monotone approximation sequences, and the
likelihood estimators built from it.

Given a nondecreasing sequence a_n converging to a limit, the debiased draw

    Z = a_offset + (a_(offset+N+1) - a_(offset+N)) / P(N = n)

with N geometric has expectation exactly equal to the limit. Applied to
transition-probability approximations indexed jointly by truncation level and
accuracy, this yields unbiased (pseudo-marginal usable) likelihood estimates:
one independent draw per observation (IA) or one shared draw on the merged
state space (RA), all carried in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset
from .expm import (
    rows_action,
    select_s_skeletoid,
    select_s_uniformization,
)
from .reaction import ReactionNetwork
from .statespace import (
    TruncationLadder,
    assemble,
    merge,
    ra_rule_of_thumb,
    seed_truncation,
)

__all__ = [
    "MonotonicityError",
    "GeometricLaw",
    "OsteResult",
    "oste",
    "oste_variance",
    "stable_log_combine",
    "JointSequence",
    "EstimatorConfig",
    "LikelihoodEstimator",
    "ACCURACY_CAP",
]

# hard ceiling on the accuracy exponent: approximations never run below
# a requested error of 10^-14, and the fallback retries at exactly this value
ACCURACY_CAP = 14.0

# a decrease between consecutive sequence values is forgiven (clipped to a
# tie) when it is this small, absolutely or relative to the values involved
_SLACK_ABS = 1e-12
_SLACK_LOG = 1e-9


class MonotonicityError(RuntimeError):
    """A supposedly nondecreasing sequence decreased beyond slack.

    indices carries the offending pair of sequence indices; values the pair
    of observed values (linear or log scale depending on the caller).
    """

    def __init__(self, message, indices=None, values=None):
        super().__init__(message)
        self.indices = indices
        self.values = values


@dataclass(frozen=True)
class GeometricLaw:
    """Geometric distribution on {0, 1, ...} with mass p*(1-p)^n."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")

    def mass(self, n: int) -> float:
        return self.p * (1.0 - self.p) ** n

    def sample(self, rng) -> int:
        # numpy's geometric counts trials, support {1, 2, ...}
        return int(rng.geometric(self.p)) - 1


@dataclass(frozen=True)
class OsteResult:
    z: float
    n_draw: int
    evaluations: int


def _check_step(lo, hi, lo_idx, hi_idx, scale="linear"):
    """Return hi, clipped up to lo on a within-slack decrease, else raise."""
    if hi >= lo:
        return hi
    if scale == "linear":
        ok = (lo - hi) <= _SLACK_ABS * max(1.0, abs(lo))
    else:
        # log scale: forgive tiny relative decreases and decreases whose
        # linear magnitude is below the absolute slack
        ok = (lo - hi) <= _SLACK_LOG or (
            lo <= 0 and math.exp(lo) - math.exp(hi) <= _SLACK_ABS
        )
    if ok:
        return lo
    raise MonotonicityError(
        f"sequence decreased at indices {lo_idx} -> {hi_idx}: {lo} > {hi}",
        indices=(lo_idx, hi_idx),
        values=(lo, hi),
    )


def oste(seq, offset: int, law: GeometricLaw, rng=None, n_draw=None) -> OsteResult:
    """One debiased draw from a nondecreasing sequence.

    seq maps an integer index to a value. Either an rng to sample N from the
    law or an explicit n_draw must be given. Evaluations are cached so the
    n_draw=0 case costs two sequence evaluations, otherwise three.
    """
    if n_draw is None:
        if rng is None:
            raise ValueError("provide rng or n_draw")
        n_draw = law.sample(rng)
    n_draw = int(n_draw)
    if n_draw < 0:
        raise ValueError("n_draw must be nonnegative")
    cache = {}

    def value(i):
        if i not in cache:
            cache[i] = float(seq(i))
        return cache[i]

    a0 = value(offset)
    a_lo = value(offset + n_draw)
    a_lo = _check_step(a0, a_lo, offset, offset + n_draw)
    a_hi = value(offset + n_draw + 1)
    a_hi = _check_step(a_lo, a_hi, offset + n_draw, offset + n_draw + 1)
    z = a0 + (a_hi - a_lo) / law.mass(n_draw)
    return OsteResult(z=z, n_draw=n_draw, evaluations=len(cache))


def oste_variance(diffs, law: GeometricLaw, a_offset: float = 0.0,
                  limit: float | None = None) -> float:
    """Exact variance of the debiased draw from its difference sequence.

    diffs[n] is a_(offset+n+1) - a_(offset+n); differences beyond the list
    are taken as zero. limit defaults to a_offset + sum(diffs).
    """
    diffs = np.asarray(diffs, dtype=float)
    if np.any(diffs < -_SLACK_ABS):
        raise MonotonicityError("difference sequence has negative entries")
    if limit is None:
        limit = a_offset + float(diffs.sum())
    second_moment = 0.0
    for n, d in enumerate(diffs):
        if d != 0.0:
            second_moment += d * d / law.mass(n)
    return second_moment - (limit - a_offset) ** 2


def stable_log_combine(log_a0: float, log_alo: float, log_ahi: float,
                       alpha: float) -> float:
    """log of a0 + (ahi - alo)/alpha from the logs of the three values.

    Requires 0 <= a0 <= alo <= ahi (within slack, which is clipped) and
    alpha in (0, 1]. Branches on which values vanish so no intermediate
    exponential can overflow or lose the small difference.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    log_alo = _check_step(log_a0, log_alo, 0, 1, scale="log")
    log_ahi = _check_step(log_alo, log_ahi, 1, 2, scale="log")
    log_alpha = math.log(alpha)
    if log_ahi == -math.inf:
        return -math.inf
    if log_alo == -math.inf:
        # then a0 = 0 too, so z = ahi / alpha
        return log_ahi - log_alpha
    gap = log_ahi - log_alo
    if log_a0 == -math.inf or log_alo - log_a0 > 500.0:
        # a0 vanishes (exactly, or beneath double precision of the ratio)
        if gap == 0.0:
            return log_a0 if log_a0 > -math.inf else -math.inf
        return log_alo + math.log(math.expm1(gap)) - log_alpha
    return log_a0 + math.log1p(
        math.exp(log_alo - log_a0 - log_alpha) * math.expm1(gap)
    )


# ---------------------------------------------------------------------------
# joint approximation sequences and the likelihood estimators


@dataclass(frozen=True)
class JointSequence:
    """Index n of the debiasing sequence mapped to (truncation level, accuracy).

    Level advances one growth step per index; the accuracy exponent advances
    by slope per index and is capped so requested errors never fall below
    10^-ACCURACY_CAP.
    """

    trunc_offset: int = 0
    acc_offset: float = 4.0
    slope: float = 0.1

    def level(self, n: int) -> int:
        return self.trunc_offset + n

    def accuracy(self, n: int) -> float:
        return min(self.acc_offset + self.slope * n, ACCURACY_CAP)


@dataclass(frozen=True)
class EstimatorConfig:
    """How likelihood estimates are formed.

    mode: 'ia' (independent draw per observation), 'ra' (one draw on the
    merged truncation), or 'auto' (RA when the merged seed set is at most
    ra_factor times the summed per-observation seed sets). method selects the
    approximation family; uniformization_global additionally needs
    q_bar_global, a uniform lower bound on every diagonal the run will see.
    Per-observation sequences/laws override the shared ones in IA mode.
    """

    mode: str = "auto"
    method: str = "skeletoid"
    sequence: JointSequence = field(default_factory=JointSequence)
    law: GeometricLaw = field(default_factory=lambda: GeometricLaw(0.5))
    sequences: tuple | None = None
    laws: tuple | None = None
    q_bar_global: float | None = None
    ra_factor: float = 1.0 / 3.0

    def __post_init__(self):
        if self.mode not in ("ia", "ra", "auto"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.method not in ("skeletoid", "uniformization_seq",
                               "uniformization_global"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "uniformization_global":
            q = self.q_bar_global
            if q is None or not math.isfinite(q) or not q < 0:
                raise ValueError(
                    "uniformization_global needs a finite negative q_bar_global"
                )


class LikelihoodEstimator:
    """Unbiased transition-likelihood estimates for a dataset under a network.

    Holds one lazily grown truncation ladder per observation plus the merged
    ladder; ladders persist across calls, assembled matrices do not (they
    depend on theta, which changes every sampler iteration).
    """

    def __init__(self, net: ReactionNetwork, dataset: Dataset,
                 config: EstimatorConfig | None = None):
        self.net = net
        self.dataset = dataset
        self.config = config or EstimatorConfig()
        if dataset.n_species != net.n_species:
            raise ValueError("dataset and network disagree on species count")
        for i in range(dataset.states.shape[0]):
            if not net.in_bounds(dataset.states[i]):
                raise ValueError(
                    f"observed state {tuple(dataset.states[i])} lies outside the bounds"
                )
        self.observations = list(dataset.intervals())
        bases = []
        for i, (x_from, x_to, _) in enumerate(self.observations):
            try:
                bases.append(seed_truncation(net, x_from, x_to))
            except Exception as exc:
                raise type(exc)(f"observation {i}: {exc}") from exc
        self.obs_ladders = [TruncationLadder(b, net) for b in bases]
        self.merged_ladder = TruncationLadder(merge(bases), net)
        if self.config.mode == "auto":
            use_ra = ra_rule_of_thumb(
                [len(b) for b in bases], len(self.merged_ladder.base),
                self.config.ra_factor,
            )
            self.mode = "ra" if use_ra else "ia"
        else:
            self.mode = self.config.mode

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def sequence_for(self, i: int | None) -> JointSequence:
        if i is not None and self.config.sequences is not None:
            return self.config.sequences[i]
        return self.config.sequence

    def law_for(self, i: int | None) -> GeometricLaw:
        if i is not None and self.config.laws is not None:
            return self.config.laws[i]
        return self.config.law

    # -- one (truncation, accuracy) evaluation ------------------------------

    def _plan(self, trmat, dt: float, k: float):
        """Method dispatch: (base method, s, q_bar argument)."""
        eps = 10.0 ** (-float(k))
        method = self.config.method
        if method == "skeletoid":
            return "skeletoid", select_s_skeletoid(trmat.q_bar * dt, eps), None
        if method == "uniformization_global":
            q_bar = self.config.q_bar_global
            if q_bar > trmat.q_bar + 1e-12 * max(1.0, abs(trmat.q_bar)):
                raise ValueError(
                    f"global q_bar {q_bar} does not dominate the truncation's "
                    f"exit rates (min diagonal {trmat.q_bar})"
                )
            return "uniformization", select_s_uniformization(-q_bar * dt, eps), q_bar
        q_bar = trmat.q_bar
        return "uniformization", select_s_uniformization(-q_bar * dt, eps), q_bar

    def _log_value(self, ladder, obs_list, theta, r: int, k: float,
                   mat_cache: dict, meter=None) -> float:
        """log of the product of approximate transition probabilities."""
        key = (id(ladder), r)
        trmat = mat_cache.get(key)
        if trmat is None:
            trmat = assemble(self.net, ladder.level(r), theta)
            mat_cache[key] = trmat
        trunc = trmat.truncation
        groups: dict = {}
        for x_from, x_to, dt in obs_list:
            groups.setdefault(dt, []).append(
                (trunc.index_of(x_from), trunc.index_of(x_to))
            )
        total = 0.0
        for dt, pairs in groups.items():
            base_method, s, q_bar = self._plan(trmat, dt, k)
            rows = sorted({src for src, _ in pairs})
            pos = {src: j for j, src in enumerate(rows)}
            block = rows_action(base_method, trmat, dt, s, rows, meter, q_bar)
            for src, dst in pairs:
                # exact values are nonnegative; rounding may leave a tiny
                # negative at structural zeros
                p = max(float(block[pos[src], dst]), 0.0)
                total += math.log(p) if p > 0.0 else -math.inf
        return total

    # -- debiased estimates --------------------------------------------------

    def _debiased(self, ladder, obs_list, seq: JointSequence, law: GeometricLaw,
                  theta, rng, meter=None) -> float:
        n_draw = law.sample(rng)
        mat_cache: dict = {}
        k_used = {}
        log_vals = {}

        def evaluate(n):
            k = k_used.setdefault(n, seq.accuracy(n))
            key = (seq.level(n), round(k, 12))
            if key not in log_vals:
                log_vals[key] = self._log_value(
                    ladder, obs_list, theta, seq.level(n), k, mat_cache, meter
                )
            return log_vals[key]

        def bump(n):
            k_used[n] = ACCURACY_CAP
            key = (seq.level(n), round(ACCURACY_CAP, 12))
            if key not in log_vals:
                log_vals[key] = self._log_value(
                    ladder, obs_list, theta, seq.level(n), ACCURACY_CAP, mat_cache,
                    meter,
                )
            return log_vals[key]

        def ordered_pair(lo, hi, lo_n, hi_n):
            try:
                return lo, _check_step(lo, hi, lo_n, hi_n, scale="log")
            except MonotonicityError:
                # sequential uniformization is not monotone across truncation
                # growth; retry the offending pair at the accuracy cap
                if self.config.method != "uniformization_seq":
                    raise
                lo2, hi2 = bump(lo_n), bump(hi_n)
                return lo2, _check_step(lo2, hi2, lo_n, hi_n, scale="log")

        l0 = evaluate(0)
        if n_draw == 0:
            l_lo = l0
        else:
            l_lo = evaluate(n_draw)
            l0, l_lo = ordered_pair(l0, l_lo, 0, n_draw)
        l_hi = evaluate(n_draw + 1)
        l_lo, l_hi = ordered_pair(l_lo, l_hi, n_draw, n_draw + 1)
        if n_draw == 0:
            # index 0 is the lower member of that pair; a bump there must
            # carry into the baseline or the combine sees a stale value
            l0 = l_lo
        return stable_log_combine(l0, l_lo, l_hi, law.mass(n_draw))

    def ia_estimate(self, i: int, theta, rng, meter=None) -> float:
        """Log of one debiased estimate of observation i's transition probability."""
        theta = self.net.validate_theta(theta)
        return self._debiased(
            self.obs_ladders[i], [self.observations[i]],
            self.sequence_for(i), self.law_for(i), theta, rng, meter,
        )

    def ra_estimate(self, theta, rng, meter=None) -> float:
        """Log of one debiased estimate of the full likelihood (merged run)."""
        theta = self.net.validate_theta(theta)
        return self._debiased(
            self.merged_ladder, self.observations,
            self.sequence_for(None), self.law_for(None), theta, rng, meter,
        )

    def log_estimate(self, theta, rng, meter=None) -> float:
        """Log-likelihood estimate in the estimator's mode."""
        if self.mode == "ra":
            return self.ra_estimate(theta, rng, meter)
        total = 0.0
        for i in range(self.n_observations):
            total += self.ia_estimate(i, theta, rng, meter)
            if total == -math.inf:
                break
        return total

    # -- deterministic evaluations for tuning and limits ---------------------

    def value_fn(self, theta, obs_index: int | None = None, meter=None):
        """f(r, k) -> linear-space approximate value, matrices cached per theta.

        obs_index selects one observation's transition probability; None gives
        the product over all observations on the merged truncation.
        """
        theta = self.net.validate_theta(theta)
        if obs_index is None:
            ladder, obs_list = self.merged_ladder, self.observations
        else:
            ladder = self.obs_ladders[obs_index]
            obs_list = [self.observations[obs_index]]
        mat_cache: dict = {}

        def f(r: int, k: float) -> float:
            return math.exp(
                self._log_value(ladder, obs_list, theta, r, k, mat_cache, meter)
            )

        return f

    def deterministic_log_likelihood(self, theta, r: int, k: float,
                                     meter=None) -> float:
        """log L at fixed truncation level and accuracy, no debiasing."""
        theta = self.net.validate_theta(theta)
        mat_cache: dict = {}
        if self.mode == "ra":
            return self._log_value(
                self.merged_ladder, self.observations, theta, r, k, mat_cache, meter
            )
        total = 0.0
        for i, obs in enumerate(self.observations):
            total += self._log_value(
                self.obs_ladders[i], [obs], theta, r, k, mat_cache, meter
            )
        return total
