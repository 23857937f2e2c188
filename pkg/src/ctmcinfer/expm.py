"""Monotone-from-below approximations of CTMC transition matrices.

Two families are provided, both converging entrywise upward to exp(tQ) for
sub-conservative rate matrices Q:

* uniformization: the s-term partial sum of the Poisson-weighted power series
  of P = I + Q/(-q_bar), nondecreasing in s, and nondecreasing in the
  truncation as well when one global q_bar is shared across truncations;
* the bridge-product approximation ("skeletoid"): the 2^s-fold product of a
  one-step matrix S(t/2^s) whose entries interpolate the two diagonals they
  connect, nondecreasing in both s and the truncation.

Both support full-matrix evaluation and a row-targeted action that computes
only selected rows, with a FLOP meter counting matrix-multiplication work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.special

__all__ = [
    "FlopMeter",
    "ExpmRequest",
    "poisson_quantile",
    "select_s_uniformization",
    "select_s_skeletoid",
    "skeletoid_base",
    "skeletoid",
    "uniformization",
    "rows_action",
    "skeletoid_split",
    "computable_error",
]

# relative tolerance deciding when two diagonal entries count as equal in the
# bridge formula (the limiting expression is used there)
_DIAG_TIE_RTOL = 1e-12

# uniformization weights are renormalized this often
_RENORM_EVERY = 64


class FlopMeter:
    """Accumulator for modeled matrix-multiplication FLOPs.

    Dense products count 2*m*b^2 for an (m, b) @ (b, b) multiply (so 2*b^3
    per dense square); sparse vector passes count 2*nnz per row swept. Only
    multiplications are counted, matching the cost model the method-selection
    heuristics use.
    """

    def __init__(self):
        self.flops = 0

    def add(self, n: int):
        self.flops += int(n)

    def add_dense_square(self, b: int):
        self.flops += 2 * b * b * b

    def add_block_product(self, m: int, b: int):
        self.flops += 2 * m * b * b

    def add_sparse_pass(self, m: int, nnz: int):
        self.flops += 2 * m * nnz

    @property
    def gflops(self) -> float:
        return self.flops / 1e9


@dataclass(frozen=True)
class ExpmRequest:
    """What to compute: exp(tQ) rows at a target accuracy.

    accuracy_k means a requested truncation-free error of 10**-accuracy_k.
    rows is None for the full matrix; targets optionally names (row, col)
    pairs of interest for callers that extract single entries.
    """

    t: float
    accuracy_k: float
    method: str = "skeletoid"
    rows: tuple | None = None
    targets: tuple | None = None


def _parts(Q, q_bar=None):
    """Accept a TruncatedRateMatrix, ndarray, or CSR; return (matrix, diag, q_bar)."""
    diag = getattr(Q, "diag", None)
    if diag is not None and hasattr(Q, "matrix"):
        mat = Q.matrix
        qb = Q.q_bar if q_bar is None else float(q_bar)
        return mat, np.asarray(diag, dtype=float), qb
    if sp.issparse(Q):
        mat = Q.tocsr()
        diag = mat.diagonal()
    else:
        mat = np.asarray(Q, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("rate matrix must be square")
        diag = np.diag(mat).copy()
    qb = float(diag.min()) if q_bar is None else float(q_bar)
    return mat, diag, qb


def _to_dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


# ---------------------------------------------------------------------------
# resolution-selection rules


def _norm_ppf(p: float) -> float:
    """Standard normal quantile (Acklam's rational approximation, ~1e-9)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    plow, phigh = 0.02425, 1 - 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > phigh:
        return -_norm_ppf(1 - p)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


def poisson_quantile(lam: float, eps: float) -> int:
    """Smallest s with P(Poisson(lam) > s) <= eps.

    A normal-quantile estimate centers a wide pmf window; summing that
    window from the far tail inward gives the survival function without
    cancellation, so the integer answer is exact down to tiny eps.
    """
    if eps >= 1.0 or lam <= 0.0:
        return 0
    z = abs(_norm_ppf(1.0 - max(eps, 1e-300))) if eps < 0.5 else 0.0
    sd = math.sqrt(lam)
    lo = max(0, int(lam - 12.0 * sd - 20.0))
    hi = int(lam + (z + 12.0) * sd + 100.0)
    ns = np.arange(lo, hi + 1, dtype=np.float64)
    pmf = np.exp(-lam + ns * math.log(lam) - scipy.special.gammaln(ns + 1.0))
    # sf[i] = P(N > lo+i); mass above hi is far below any eps the window
    # was sized for, so it is dropped
    sf = np.concatenate([np.cumsum(pmf[::-1])[::-1][1:], [0.0]])
    idx = np.nonzero(sf <= eps)[0]
    if idx.size == 0 or (idx[0] == 0 and lo > 0):
        raise ArithmeticError("Poisson quantile window missed the target")
    return lo + int(idx[0])


def select_s_uniformization(lam: float, eps: float) -> int:
    """Truncation order making the neglected Poisson tail at most eps."""
    return poisson_quantile(lam, eps)


def select_s_skeletoid(qbar_t: float, eps: float) -> int:
    """Doubling count making the leading error term (qbar*t)^2 / 2^(s+1) <= eps."""
    lam2 = float(qbar_t) * float(qbar_t)
    if lam2 <= 2.0 * eps:
        return 0
    return max(0, math.ceil(math.log2(lam2 / (2.0 * eps))))


# ---------------------------------------------------------------------------
# bridge-product ("skeletoid") approximation


def _bridge_increment(mat, diag, delta: float) -> np.ndarray:
    """B = S(delta) - I as a dense matrix.

    Off-diagonal (x, y): q_xy * delta * exp(q_xx delta) when the two diagonals
    tie, else q_xy * (exp(q_yy delta) - exp(q_xx delta)) / (q_yy - q_xx).
    Diagonal: expm1(q_xx delta), kept implicit relative to I for accuracy at
    tiny delta.
    """
    dense = _to_dense(mat)
    b = dense.shape[0]
    dx = diag[:, None]
    dy = diag[None, :]
    tie = np.abs(dx - dy) <= _DIAG_TIE_RTOL * np.maximum(np.abs(dx), np.abs(dy))
    gap = np.where(tie, 1.0, np.abs(dy - dx))
    # (e^{dy d} - e^{dx d}) / (dy - dx) = e^{max d} (-expm1(-gap d)) / gap.
    # Factoring by the larger exponent keeps every factor in [0, 1], so a huge
    # exit-rate spread cannot overflow expm1, while the expm1 form stays
    # accurate when delta (or the diagonal gap) is tiny.
    hi = np.maximum(dx, dy)
    bridge = np.where(tie, delta * np.exp(dx * delta),
                      np.exp(hi * delta) * -np.expm1(-gap * delta) / gap)
    off = dense * bridge
    np.fill_diagonal(off, 0.0)
    B = off
    B[np.arange(b), np.arange(b)] = np.expm1(diag * delta)
    return B


def skeletoid_base(Q, delta: float) -> np.ndarray:
    """The one-step matrix S(delta) itself (dense)."""
    mat, diag, _ = _parts(Q)
    B = _bridge_increment(mat, diag, delta)
    B[np.arange(len(diag)), np.arange(len(diag))] += 1.0
    return B


def implicit_square(B: np.ndarray, meter: FlopMeter | None = None) -> np.ndarray:
    """(I + B)^2 - I computed as 2B + B @ B, avoiding the I + B roundoff."""
    if meter is not None:
        meter.add_dense_square(B.shape[0])
    return 2.0 * B + B @ B


def skeletoid(Q, t: float, s: int, meter: FlopMeter | None = None) -> np.ndarray:
    """Approximate exp(tQ) by squaring S(t / 2^s) s times."""
    mat, diag, _ = _parts(Q)
    if s < 0:
        raise ValueError("s must be nonnegative")
    delta = t / float(2**s)
    B = _bridge_increment(mat, diag, delta)
    for _ in range(s):
        B = implicit_square(B, meter)
    M = B
    M[np.arange(len(diag)), np.arange(len(diag))] += 1.0
    return M


def skeletoid_split(k: int, b: int, m: int, beta: float = 0.1) -> tuple:
    """Split the total doubling count k into k1 squarings and 2^k2 row passes.

    Minimizes the modeled cost beta*k1*b^3 + m*b^2*2^k2 over the two integers
    bracketing the real-valued optimum, then clamps into [0, k].
    """
    if k <= 0:
        return 0, 0

    def cost(k2):
        return beta * (k - k2) * b**3 + m * b**2 * 2.0**k2

    x_star = math.log2(beta * b / (math.log(2.0) * m))
    lo, hi = math.floor(x_star), math.ceil(x_star)
    k2 = lo if cost(lo) <= cost(hi) else hi
    k2 = max(0, min(k, k2))
    return k - k2, k2


# ---------------------------------------------------------------------------
# uniformization


def _check_q_bar(diag, q_bar):
    if q_bar > diag.min() + 1e-12 * max(1.0, abs(diag.min())):
        raise ValueError(
            f"q_bar={q_bar} must lie at or below the smallest diagonal {diag.min()}"
        )
    if q_bar > 0:
        raise ValueError("q_bar must be nonpositive")


class _ScaledSeries:
    """Poisson-weighted accumulation with periodic renormalization.

    Terms arrive as matrices with entries in [0, 1] (powers of a
    sub-stochastic P); only the scalar weights need log-space care. The
    accumulator is kept at a floating anchor L so exp(logw - L) never
    overflows even when exp(-lam) itself underflows.
    """

    def __init__(self, shape, lam):
        self.lam = lam
        self.log_lam = math.log(lam)
        self.logw = -lam
        self.anchor = -lam
        self.acc = np.zeros(shape)
        self.n = 0

    def add(self, term):
        if self.n > 0:
            # direct evaluation: an incremental logw update drifts by the
            # rounding of a 1e6-magnitude float once per term
            self.logw = -self.lam + self.n * self.log_lam - math.lgamma(self.n + 1)
            if self.n % _RENORM_EVERY == 0 or self.logw > self.anchor + 600.0:
                new_anchor = max(self.anchor, self.logw)
                self.acc *= math.exp(self.anchor - new_anchor)
                self.anchor = new_anchor
        w = math.exp(self.logw - self.anchor)
        if w != 0.0:
            self.acc += w * term
        self.n += 1

    def value(self):
        return self.acc * math.exp(self.anchor)


def uniformization(Q, t: float, s: int, meter: FlopMeter | None = None,
                   q_bar: float | None = None) -> np.ndarray:
    """Partial sum of order s of the uniformized power series for exp(tQ).

    q_bar defaults to the smallest diagonal entry of Q; passing a more
    negative global value keeps partial sums comparable across truncations.
    """
    mat, diag, q_bar = _parts(Q, q_bar)
    _check_q_bar(diag, q_bar)
    b = len(diag)
    if s < 0:
        raise ValueError("s must be nonnegative")
    if q_bar == 0.0:
        return np.eye(b)
    lam = -q_bar * t
    dense = not sp.issparse(mat)
    if dense:
        P = np.eye(b) + mat / (-q_bar)
    else:
        P = (sp.eye(b, format="csr") + mat.multiply(1.0 / (-q_bar))).tocsr()
    series = _ScaledSeries((b, b), lam)
    term = np.eye(b)
    series.add(term)
    for _ in range(s):
        term = term @ P
        if meter is not None:
            if dense:
                meter.add_dense_square(b)
            else:
                meter.add_sparse_pass(b, P.nnz)
        series.add(term)
    return series.value()


# ---------------------------------------------------------------------------
# row-targeted action


def rows_action(method: str, Q, t: float, s: int, rows,
                meter: FlopMeter | None = None, q_bar: float | None = None,
                beta: float = 0.1) -> np.ndarray:
    """Selected rows of the order-s approximation to exp(tQ).

    Returns an (m, b) block, rows in the order given. The uniformization
    route runs the selector-row recursion; the bridge-product route squares
    the base matrix part of the way and finishes with row passes, splitting
    the work by the modeled cost.
    """
    mat, diag, q_bar = _parts(Q, q_bar)
    b = len(diag)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 1 or rows.size == 0:
        raise ValueError("rows must be a nonempty 1-D index list")
    if rows.min() < 0 or rows.max() >= b:
        raise ValueError("row index out of range")
    m = rows.size

    if method.startswith("uniformization"):
        _check_q_bar(diag, q_bar)
        if q_bar == 0.0:
            return np.eye(b)[rows]
        lam = -q_bar * t
        dense = not sp.issparse(mat)
        if dense:
            P = np.eye(b) + mat / (-q_bar)
        else:
            P = (sp.eye(b, format="csr") + mat.multiply(1.0 / (-q_bar))).tocsr()
        series = _ScaledSeries((m, b), lam)
        block = np.zeros((m, b))
        block[np.arange(m), rows] = 1.0
        series.add(block)
        for _ in range(s):
            block = block @ P
            if meter is not None:
                if dense:
                    meter.add_block_product(m, b)
                else:
                    meter.add_sparse_pass(m, P.nnz)
            series.add(block)
        return series.value()

    if method == "skeletoid":
        k1, k2 = skeletoid_split(s, b, m, beta)
        delta = t / float(2**s)
        B = _bridge_increment(mat, diag, delta)
        for _ in range(k1):
            B = implicit_square(B, meter)
        block = np.zeros((m, b))
        block[np.arange(m), rows] = 1.0
        for _ in range(2**k2):
            block = block + block @ B
            if meter is not None:
                meter.add_block_product(m, b)
        return block

    raise ValueError(f"unknown method {method!r}")


def computable_error(rows_block: np.ndarray) -> float:
    """Worst missing row mass of a computed block: 1 - min row sum.

    Exact (up to the approximation itself) for conservative generators; an
    upper bound otherwise.
    """
    rows_block = np.atleast_2d(rows_block)
    return float(1.0 - rows_block.sum(axis=1).min())
