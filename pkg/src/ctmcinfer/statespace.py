"""Finite truncations of countable state spaces and the matrices they carry.

Truncations are ordered: growing one appends new states after the old ones, so
a grown truncation indexes its parent as a prefix. Matrices assembled on a
truncation keep the full-lattice diagonal, which makes them sub-conservative:
each row may leak mass (its conservativeness deficit) through dropped targets.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .reaction import ReactionNetwork

__all__ = [
    "Truncation",
    "TruncationLadder",
    "TruncatedRateMatrix",
    "SeedPathError",
    "seed_reaction_counts",
    "seed_path",
    "grow",
    "merge",
    "assemble",
    "ra_rule_of_thumb",
]

# above this many states the assembled matrix is stored sparse
DENSE_LIMIT = 512


class SeedPathError(ValueError):
    """No admissible path between a pair of observed states."""


@dataclass(frozen=True)
class Truncation:
    """An ordered finite subset of the lattice, tagged with its growth level."""

    states: tuple
    level: int = 0

    def __post_init__(self):
        states = tuple(tuple(int(v) for v in s) for s in self.states)
        if not states:
            raise ValueError("a truncation must contain at least one state")
        object.__setattr__(self, "states", states)
        index = {}
        for i, s in enumerate(states):
            if s in index:
                raise ValueError(f"duplicate state {s} in truncation")
            index[s] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.states)

    def __contains__(self, state) -> bool:
        return tuple(int(v) for v in state) in self._index

    def index_of(self, state) -> int:
        return self._index[tuple(int(v) for v in state)]


def default_directions(n_species: int) -> np.ndarray:
    """Unit steps +e_j, -e_j for each species, in species order."""
    dirs = []
    for j in range(n_species):
        e = np.zeros(n_species, dtype=np.int64)
        e[j] = 1
        dirs.append(e.copy())
        dirs.append(-e)
    return np.asarray(dirs)


def grow(trunc: Truncation, net: ReactionNetwork, directions=None) -> Truncation:
    """One growth step: append in-bounds neighbors of every current state.

    New states appear in parent-state order, then direction order, so the
    parent truncation is an index prefix of the result.
    """
    if directions is None:
        directions = default_directions(net.n_species)
    else:
        directions = np.asarray(directions, dtype=np.int64)
    lo = np.asarray(net.lower_bounds)
    hi = np.asarray(net.upper_bounds, dtype=float)
    out = list(trunc.states)
    seen = set(trunc.states)
    for s in trunc.states:
        base = np.asarray(s, dtype=np.int64)
        for d in directions:
            cand = base + d
            if np.all(cand >= lo) and np.all(cand <= hi):
                key = tuple(int(v) for v in cand)
                if key not in seen:
                    seen.add(key)
                    out.append(key)
    return Truncation(tuple(out), level=trunc.level + 1)


def merge(truncs) -> Truncation:
    """First-seen union of truncations, in input order."""
    truncs = list(truncs)
    if not truncs:
        raise ValueError("merge needs at least one truncation")
    out = []
    seen = set()
    for tr in truncs:
        for s in tr.states:
            if s not in seen:
                seen.add(s)
                out.append(s)
    return Truncation(tuple(out), level=max(tr.level for tr in truncs))


class TruncationLadder:
    """Lazily grown tower of truncations sharing one base.

    Levels are appended on demand and never mutated, so concurrent reads are
    safe; growth itself is serialized by a lock.
    """

    def __init__(self, base: Truncation, net: ReactionNetwork, directions=None):
        self.net = net
        self.directions = directions
        self._levels = [base]
        self._lock = threading.Lock()

    @property
    def base(self) -> Truncation:
        return self._levels[0]

    def level(self, r: int) -> Truncation:
        if r < len(self._levels):
            return self._levels[r]
        with self._lock:
            while len(self._levels) <= r:
                self._levels.append(grow(self._levels[-1], self.net, self.directions))
        return self._levels[r]


# ---------------------------------------------------------------------------
# seed paths


def _pivot_loop(T, basis, cost, ncols, tol):
    """Bland-rule pivoting on an explicit tableau; T[:, -1] is the rhs."""
    m = T.shape[0]
    while True:
        reduced = cost[:ncols] - cost[basis] @ T[:, :ncols]
        enter = -1
        for j in range(ncols):
            if reduced[j] < -tol:
                enter = j
                break
        if enter < 0:
            return
        leave = -1
        best_ratio = None
        for i in range(m):
            if T[i, enter] > tol:
                ratio = T[i, -1] / T[i, enter]
                if (
                    best_ratio is None
                    or ratio < best_ratio - 1e-12
                    or (abs(ratio - best_ratio) <= 1e-12 and basis[i] < basis[leave])
                ):
                    leave, best_ratio = i, ratio
        if leave < 0:
            raise ArithmeticError("linear program is unbounded")
        T[leave] /= T[leave, enter]
        for i in range(m):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter


def _solve_lp(A, b, tol=1e-9):
    """Minimize 1'v subject to A v = b, v >= 0, by two-phase dense simplex.

    Returns the optimal v, or None if infeasible. Systems here are tiny
    (species x reactions), so a plain tableau is plenty.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = list(range(n, n + m))
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    _pivot_loop(T, basis, phase1_cost, n + m, tol)
    if phase1_cost[basis] @ T[:, -1] > tol:
        return None

    # pivot leftover zero-valued artificials out, dropping redundant rows
    keep = []
    for i in range(len(basis)):
        if basis[i] >= n:
            enter = next((j for j in range(n) if abs(T[i, j]) > tol), None)
            if enter is None:
                continue
            T[i] /= T[i, enter]
            for k in range(T.shape[0]):
                if k != i and T[k, enter] != 0.0:
                    T[k] -= T[k, enter] * T[i]
            basis[i] = enter
        keep.append(i)
    T = T[keep]
    basis = [basis[i] for i in keep]

    phase2_cost = np.concatenate([np.ones(n), np.full(m, 1e6)])
    _pivot_loop(T, basis, phase2_cost, n, tol)

    v = np.zeros(n)
    for i, j in enumerate(basis):
        if j < n:
            v[j] = T[i, -1]
    return v


def seed_reaction_counts(net: ReactionNetwork, x_from, x_to) -> np.ndarray:
    """Fewest reaction firings whose net effect moves x_from to x_to.

    Solves the linear relaxation; update matrices made of unit steps give
    integral vertices, and fractional solutions for other models are rounded
    up and re-verified.
    """
    x_from = np.asarray(x_from, dtype=np.int64)
    x_to = np.asarray(x_to, dtype=np.int64)
    delta = (x_to - x_from).astype(float)
    if not net.in_bounds(x_from) or not net.in_bounds(x_to):
        raise SeedPathError(
            f"observation pair {tuple(x_from)} -> {tuple(x_to)} leaves the state space"
        )
    if not delta.any():
        return np.zeros(net.n_reactions, dtype=np.int64)
    v = _solve_lp(net.update_matrix.T.astype(float), delta)
    if v is None:
        raise SeedPathError(
            f"no nonnegative reaction combination connects {tuple(x_from)} to {tuple(x_to)}"
        )
    rounded = np.round(v)
    if np.max(np.abs(v - rounded)) <= 1e-9:
        counts = rounded.astype(np.int64)
    else:
        counts = np.ceil(v - 1e-9).astype(np.int64)
        if not np.array_equal(net.update_matrix.T @ counts, x_to - x_from):
            raise SeedPathError(
                f"fractional reaction-count solution for {tuple(x_from)} -> {tuple(x_to)} "
                "does not round to a valid integer combination"
            )
    return counts


def seed_path(net: ReactionNetwork, x_from, x_to) -> list:
    """An in-bounds state path realizing the minimal reaction counts.

    Depth-first over orderings of the reaction multiset, trying channels in
    index order and pruning any prefix that leaves the state space.
    """
    counts = seed_reaction_counts(net, x_from, x_to)
    x_from = np.asarray(x_from, dtype=np.int64)
    lo = np.asarray(net.lower_bounds)
    hi = np.asarray(net.upper_bounds, dtype=float)
    path = [tuple(int(v) for v in x_from)]
    failed = set()

    def walk(state, rem):
        if not rem.any():
            return True
        key = (tuple(int(v) for v in state), tuple(rem))
        if key in failed:
            return False
        for r in range(net.n_reactions):
            if rem[r] == 0:
                continue
            nxt = state + net.update_matrix[r]
            if np.all(nxt >= lo) and np.all(nxt <= hi):
                path.append(tuple(int(v) for v in nxt))
                rem[r] -= 1
                if walk(nxt, rem):
                    return True
                rem[r] += 1
                path.pop()
        failed.add(key)
        return False

    if not walk(x_from, counts.copy()):
        raise SeedPathError(
            f"reaction counts for {tuple(x_from)} -> {tuple(x_to)} admit no in-bounds ordering"
        )
    return path


def seed_truncation(net: ReactionNetwork, x_from, x_to) -> Truncation:
    """Level-0 truncation holding the states of a seed path (deduplicated)."""
    states = []
    seen = set()
    for s in seed_path(net, x_from, x_to):
        if s not in seen:
            seen.add(s)
            states.append(s)
    return Truncation(tuple(states), level=0)


# ---------------------------------------------------------------------------
# assembled matrices


@dataclass
class TruncatedRateMatrix:
    """Rate matrix restricted to a truncation, diagonal taken on the full lattice.

    matrix is dense below DENSE_LIMIT states and CSR above. deficit[i] >= 0 is
    the rate mass row i loses to dropped targets; q_bar is the most negative
    diagonal entry (so -q_bar bounds every exit rate).
    """

    truncation: Truncation
    matrix: object
    diag: np.ndarray
    deficit: np.ndarray
    q_bar: float

    @property
    def dim(self) -> int:
        return len(self.truncation)

    @property
    def is_dense(self) -> bool:
        return isinstance(self.matrix, np.ndarray)

    @property
    def nnz(self) -> int:
        if self.is_dense:
            return int(np.count_nonzero(self.matrix))
        return int(self.matrix.nnz)

    def to_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.matrix
        return self.matrix.toarray()


def assemble(net: ReactionNetwork, trunc: Truncation, theta) -> TruncatedRateMatrix:
    """Build the truncated rate matrix for theta on the given truncation."""
    b = len(trunc)
    theta = net.validate_theta(theta)
    diag = np.zeros(b)
    deficit = np.zeros(b)
    rows, cols, vals = [], [], []
    for i, s in enumerate(trunc.states):
        row = net.rate_row(s, theta)
        diag[i] = row.diagonal
        kept = 0.0
        for tgt, rate in row.targets.items():
            if tgt in trunc:
                rows.append(i)
                cols.append(trunc.index_of(tgt))
                vals.append(rate)
                kept += rate
        deficit[i] = -row.diagonal - kept
    rows.extend(range(b))
    cols.extend(range(b))
    vals.extend(diag)
    mat = sp.csr_matrix(
        (np.asarray(vals), (np.asarray(rows), np.asarray(cols))), shape=(b, b)
    )
    matrix = mat.toarray() if b <= DENSE_LIMIT else mat
    # clamp tiny negative deficits from float cancellation
    np.maximum(deficit, 0.0, out=deficit)
    return TruncatedRateMatrix(
        truncation=trunc,
        matrix=matrix,
        diag=diag,
        deficit=deficit,
        q_bar=float(diag.min()),
    )


def ra_rule_of_thumb(sizes, merged_size: int, factor: float = 1.0 / 3.0) -> bool:
    """True when one merged run beats per-observation runs on state count."""
    return merged_size <= factor * float(np.sum(sizes))
