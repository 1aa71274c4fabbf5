"""Coefficient matrix of a Liouville system and its structural hypotheses.

The matrix ``A = (a_ij)`` couples the equations ``Δu_i + Σ_j a_ij e^{u_j} = 0``.
Two hypotheses drive everything downstream:

* **H1**: ``A`` is symmetric, nonnegative, irreducible and invertible.
* **H2**: the inverse ``(a^ij)`` has ``a^ii <= 0``, ``a^ij >= 0`` for
  ``i != j`` and nonnegative row sums.

When both hold, every off-diagonal entry is positive and dominates the two
diagonal entries it touches (``max(a_ii, a_jj) <= a_ij``). That consequence is
exposed as :func:`check_dominance` and serves as a consistency assertion.

Indices are 0-based throughout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    AsymmetricBeyondToleranceError,
    HypothesesNotSatisfied,
    NonSquareError,
    SingularMatrixError,
)

DEFAULT_REL_ZERO_TOL = 1e-12
PIVOT_REL_TOL = 1e-13


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Symmetric coefficient matrix with an optional cached inverse.

    Instances are immutable. Use :func:`build_matrix` to create one from raw
    data and :func:`invert` to attach the inverse.
    """

    entries: np.ndarray
    inverse_entries: Optional[np.ndarray] = None
    cond_estimate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))
        if self.inverse_entries is not None:
            object.__setattr__(self, "inverse_entries", _frozen(self.inverse_entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.entries))) if self.entries.size else 0.0

    def default_zero_tol(self) -> float:
        return DEFAULT_REL_ZERO_TOL * self.max_abs

    @property
    def inverse(self) -> np.ndarray:
        """The inverse entries, computing them on first access."""
        if self.inverse_entries is None:
            inv = invert(self)
            object.__setattr__(self, "inverse_entries", inv.inverse_entries)
            object.__setattr__(self, "cond_estimate", inv.cond_estimate)
        return self.inverse_entries

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self):
        return f"CoefficientMatrix({self.entries.tolist()!r})"


def as_matrix(A) -> CoefficientMatrix:
    """Accept a :class:`CoefficientMatrix` or anything array-like."""
    if isinstance(A, CoefficientMatrix):
        return A
    return build_matrix(A)


class Failure(NamedTuple):
    condition: str
    indices: tuple
    value: float


H1_CONDITIONS = ("nonnegative", "irreducible", "invertible")
H2_CONDITIONS = ("h2_diagonal", "h2_offdiagonal", "h2_rowsum", "singular")
DOMINANCE_CONDITIONS = ("offdiag_positive", "offdiag_dominance")


@dataclass
class HypothesisReport:
    """Pass flags for H1, H2 and the off-diagonal dominance consequence.

    A flag left as ``None`` was not evaluated. ``failures`` lists every
    violated clause; a flag is true exactly when none of the failures belong
    to its group.
    """

    h1_pass: Optional[bool] = None
    h2_pass: Optional[bool] = None
    dominance_pass: Optional[bool] = None
    failures: list = field(default_factory=list)

    def merge(self, other: "HypothesisReport") -> "HypothesisReport":
        pick = lambda a, b: b if b is not None else a
        return HypothesisReport(
            h1_pass=pick(self.h1_pass, other.h1_pass),
            h2_pass=pick(self.h2_pass, other.h2_pass),
            dominance_pass=pick(self.dominance_pass, other.dominance_pass),
            failures=self.failures + other.failures,
        )

    def failures_for(self, group) -> list:
        return [f for f in self.failures if f.condition in group]

    def to_dict(self) -> dict:
        return {
            "h1_pass": self.h1_pass,
            "h2_pass": self.h2_pass,
            "dominance_pass": self.dominance_pass,
            "failures": [
                {"condition": f.condition, "indices": list(f.indices), "value": f.value}
                for f in self.failures
            ],
        }


@dataclass(frozen=True)
class BlockDecomposition:
    blocks: tuple

    def __len__(self):
        return len(self.blocks)


def build_matrix(raw, sym_tol: float = 1e-12) -> CoefficientMatrix:
    """Validate and symmetrize raw coefficients.

    Entries are replaced by ``(raw_ij + raw_ji) / 2`` once the worst asymmetry
    is within ``sym_tol * max|raw|``.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.shape[0] < 1:
        raise NonSquareError(f"expected a nonempty square matrix, got shape {raw.shape}")
    gap = np.abs(raw - raw.T)
    allowed = sym_tol * float(np.max(np.abs(raw)))
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    if gap[i, j] > allowed:
        i, j = min(i, j), max(i, j)
        raise AsymmetricBeyondToleranceError(int(i), int(j), float(gap[i, j]), allowed)
    return CoefficientMatrix(entries=(raw + raw.T) / 2.0)


def invert(A) -> CoefficientMatrix:
    """Gauss-Jordan inversion with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If a pivot falls below ``1e-13 * max|a_ij|``.
    """
    A = as_matrix(A)
    n = A.n
    a = np.array(A.entries, dtype=float)
    inv = np.eye(n)
    threshold = PIVOT_REL_TOL * A.max_abs
    try:
        with np.errstate(over="raise", invalid="raise"):
            for col in range(n):
                p = col + int(np.argmax(np.abs(a[col:, col])))
                if abs(a[p, col]) <= threshold or a[p, col] == 0.0:
                    raise SingularMatrixError(
                        f"pivot {a[p, col]:.3e} at elimination step {col} below {threshold:.3e}"
                    )
                if p != col:
                    a[[col, p]] = a[[p, col]]
                    inv[[col, p]] = inv[[p, col]]
                piv = a[col, col]
                a[col] /= piv
                inv[col] /= piv
                for r in range(n):
                    if r != col and a[r, col] != 0.0:
                        f = a[r, col]
                        a[r] -= f * a[col]
                        inv[r] -= f * inv[col]
    except FloatingPointError as exc:
        raise SingularMatrixError("inverse overflows double precision") from exc
    if not np.all(np.isfinite(inv)):
        raise SingularMatrixError("inverse overflows double precision")
    cond = float(np.max(np.abs(A.entries).sum(axis=1)) * np.max(np.abs(inv).sum(axis=1)))
    return replace(A, inverse_entries=inv, cond_estimate=cond)


def _adjacency(A: CoefficientMatrix, zero_tol):
    if zero_tol is None:
        zero_tol = A.default_zero_tol()
    adj = np.abs(A.entries) > zero_tol
    np.fill_diagonal(adj, False)
    return adj


def _components(adj) -> list:
    n = adj.shape[0]
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        comp = []
        while queue:
            v = queue.popleft()
            comp.append(v)
            for w in np.flatnonzero(adj[v]):
                if not seen[w]:
                    seen[w] = True
                    queue.append(int(w))
        comps.append(tuple(sorted(comp)))
    return comps


def is_irreducible(A, zero_tol: Optional[float] = None) -> bool:
    """Connectivity of the off-diagonal graph, by breadth-first traversal."""
    A = as_matrix(A)
    if A.n == 1:
        return True
    adj = _adjacency(A, zero_tol)
    seen = {0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in np.flatnonzero(adj[v]):
            w = int(w)
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == A.n


def decompose_blocks(A, zero_tol: Optional[float] = None) -> BlockDecomposition:
    """Split the index set into irreducible diagonal blocks."""
    A = as_matrix(A)
    comps = _components(_adjacency(A, zero_tol))
    return BlockDecomposition(blocks=tuple(sorted(comps, key=lambda c: c[0])))


def check_h1(A, zero_tol: Optional[float] = None) -> HypothesisReport:
    A = as_matrix(A)
    tol = A.default_zero_tol() if zero_tol is None else zero_tol
    failures = []
    for i, j in zip(*np.nonzero(A.entries < -tol)):
        if i <= j:
            failures.append(Failure("nonnegative", (int(i), int(j)), float(A.entries[i, j])))
    if not is_irreducible(A, tol):
        nblocks = len(decompose_blocks(A, tol))
        failures.append(Failure("irreducible", (), float(nblocks)))
    try:
        invert(A)
    except SingularMatrixError:
        failures.append(Failure("invertible", (), 0.0))
    return HypothesisReport(h1_pass=not failures, failures=failures)


def check_h2(A, zero_tol: Optional[float] = None) -> HypothesisReport:
    """Sign conditions on the inverse matrix.

    ``zero_tol`` is an absolute tolerance on inverse entries; by default it
    is ``1e-12 * max|a^ij|``. The diagonal sign rule is skipped for ``n = 1``,
    where the system is the scalar equation.
    """
    A = as_matrix(A)
    inv = A.inverse
    tol = DEFAULT_REL_ZERO_TOL * float(np.max(np.abs(inv))) if zero_tol is None else zero_tol
    failures = []
    n = A.n
    for i in range(n if n > 1 else 0):
        if inv[i, i] > tol:
            failures.append(Failure("h2_diagonal", (i, i), float(inv[i, i])))
    for i in range(n):
        for j in range(i + 1, n):
            if inv[i, j] < -tol:
                failures.append(Failure("h2_offdiagonal", (i, j), float(inv[i, j])))
    sums = inv.sum(axis=1)
    for i in range(n):
        if sums[i] < -tol:
            failures.append(Failure("h2_rowsum", (i,), float(sums[i])))
    return HypothesisReport(h2_pass=not failures, failures=failures)


def check_dominance(A) -> HypothesisReport:
    """Positivity and diagonal dominance of off-diagonal entries.

    Only meaningful for matrices passing H1 and H2, where it must hold. A
    failure here points at a tolerance problem rather than at the math.
    """
    A = as_matrix(A)
    pre = check_h1(A)
    if pre.h1_pass:
        pre = pre.merge(check_h2(A))
    if not (pre.h1_pass and pre.h2_pass):
        raise HypothesesNotSatisfied(
            "check_dominance needs H1 and H2: "
            + ", ".join(f.condition for f in pre.failures)
        )
    a = A.entries
    failures = []
    for i in range(A.n):
        for j in range(i + 1, A.n):
            if not a[i, j] > 0:
                failures.append(Failure("offdiag_positive", (i, j), float(a[i, j])))
            dom = max(a[i, i], a[j, j])
            if dom > a[i, j]:
                failures.append(Failure("offdiag_dominance", (i, j), float(dom - a[i, j])))
    return HypothesisReport(dominance_pass=not failures, failures=failures)


def check_hypotheses(A, zero_tol: Optional[float] = None) -> HypothesisReport:
    """Full report: H1, then H2 if invertible, then off-diagonal dominance if both pass."""
    A = as_matrix(A)
    report = check_h1(A, zero_tol)
    if any(f.condition == "invertible" for f in report.failures):
        report.h2_pass = False
        report.failures.append(Failure("singular", (), 0.0))
        return report
    report = report.merge(check_h2(A))
    if report.h1_pass and report.h2_pass:
        report = report.merge(check_dominance(A))
    return report


def satisfies_h1_h2(A, zero_tol: Optional[float] = None) -> bool:
    A = as_matrix(A)
    rep = check_h1(A, zero_tol)
    if not rep.h1_pass:
        return False
    return bool(check_h2(A).h2_pass)
