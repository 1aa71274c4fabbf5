"""Quadratic energy forms, parameter regions and the degree formula.

For a nonempty index set ``J`` the energy form is

    Λ_J(v) = scale * Σ_{i∈J} v_i - Σ_{i,j∈J} a_ij v_i v_j

with ``scale = 4`` for masses of entire solutions (``ENTIRE``) and
``scale = 8π`` for mean-field parameters (``MEANFIELD``).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptySubsetError,
    HypothesesNotSatisfied,
    NonpositiveRhoError,
    PreconditionError,
    ZeroMassError,
)
from .matrix_core import CoefficientMatrix, as_matrix, satisfies_h1_h2

ENTIRE = 4.0
MEANFIELD = 8.0 * math.pi

MAX_SUBSET_N = 20
XI_ZERO_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MassVector:
    """Masses ``σ_i`` together with decay exponents ``m = A σ``."""

    sigma: np.ndarray
    m: np.ndarray

    @classmethod
    def from_sigma(cls, A, sigma) -> "MassVector":
        A = as_matrix(A)
        sigma = np.array(sigma, dtype=float)
        if sigma.shape != (A.n,):
            raise PreconditionError(f"sigma has shape {sigma.shape}, expected ({A.n},)")
        m = A.entries @ sigma
        sigma.setflags(write=False)
        m.setflags(write=False)
        return cls(sigma=sigma, m=m)

    def __repr__(self):
        return f"MassVector(sigma={self.sigma.tolist()}, m={self.m.tolist()})"


@dataclass(frozen=True, eq=False)
class PartialEPoint:
    """Masses supported on a proper subset ``support`` of the indices.

    ``masses`` is the mass vector of the subsystem ``A[support][:, support]``;
    ``sigma_full`` pads it with zeros to length ``n``.
    """

    support: tuple
    masses: MassVector
    sigma_full: np.ndarray


class Region(str, enum.Enum):
    INTERIOR = "InteriorO"
    ON_GAMMA = "OnGamma"
    OUTSIDE = "OutsideDomain"


@dataclass(frozen=True, eq=False)
class RhoPoint:
    rho: np.ndarray
    classification: Region
    N: Optional[int]
    q: float
    degree: Optional[int] = None
    note: str = ""

    @property
    def degree_defined(self) -> bool:
        return self.degree is not None


@dataclass(frozen=True)
class SurfaceSpec:
    """Closed surface of genus ``g`` or planar domain with ``holes`` holes."""

    kind: str
    genus: int = 0
    holes: int = 0

    def __post_init__(self):
        if self.kind not in ("closed", "planar"):
            raise PreconditionError(f"unknown surface kind {self.kind!r}")
        if self.genus < 0 or self.holes < 0:
            raise PreconditionError("genus and holes must be nonnegative")

    @classmethod
    def closed(cls, genus: int) -> "SurfaceSpec":
        return cls("closed", genus=genus)

    @classmethod
    def planar(cls, holes: int) -> "SurfaceSpec":
        return cls("planar", holes=holes)

    @property
    def chi(self) -> int:
        if self.kind == "closed":
            return 2 - 2 * self.genus
        return 1 - self.holes


TORUS = SurfaceSpec.closed(1)
SPHERE = SurfaceSpec.closed(0)


def lambda_J(A, v, J: Sequence[int], scale: float) -> float:
    A = as_matrix(A)
    J = sorted(set(int(j) for j in J))
    if not J:
        raise EmptySubsetError("Λ_J needs a nonempty index set")
    v = np.asarray(v, dtype=float)
    vj = v[J]
    sub = A.entries[np.ix_(J, J)]
    return float(scale * vj.sum() - vj @ sub @ vj)


def _proper_subsets(n: int):
    if n > MAX_SUBSET_N:
        raise PreconditionError(f"subset enumeration limited to n <= {MAX_SUBSET_N}")
    for size in range(1, n):
        yield from itertools.combinations(range(n), size)


def in_gamma(A, rho) -> bool:
    """Strict positivity of every ``Λ_J`` at scale 8π, including ``J = I``.

    Including the full index set confines the result to the region below
    the first critical hypersurface.
    """
    A = as_matrix(A)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise NonpositiveRhoError("every rho_i must be positive")
    if lambda_J(A, rho, range(A.n), MEANFIELD) <= 0:
        return False
    return all(lambda_J(A, rho, J, MEANFIELD) > 0 for J in _proper_subsets(A.n))


def quotient(A, rho) -> float:
    """``q = Σ a_ij ρ_i ρ_j / (8π Σ ρ_i)``; ``q ∈ (N, N+1)`` means O_N."""
    A = as_matrix(A)
    rho = np.asarray(rho, dtype=float)
    total = rho.sum()
    if np.any(rho < 0):
        raise PreconditionError("rho must be nonnegative")
    if not total > 0:
        raise ZeroMassError("sum of rho must be positive")
    return float(rho @ A.entries @ rho / (MEANFIELD * total))


def classify_rho(A, rho, rel_tol: float = 1e-9) -> RhoPoint:
    q = quotient(A, rho)
    rho = np.array(rho, dtype=float)
    if q < 0:
        return RhoPoint(rho, Region.OUTSIDE, None, q, note="negative quadratic form")
    N = int(round(q))
    if N >= 1 and abs(q - N) <= rel_tol * N:
        return RhoPoint(rho, Region.ON_GAMMA, N, q)
    return RhoPoint(rho, Region.INTERIOR, int(math.floor(q)), q)


def degree(chi: int, N: int) -> int:
    """Leray-Schauder degree ``Π_{k=1}^N (k - χ) / N!`` in exact arithmetic.

    This is the generalized binomial coefficient ``C(N - χ, N)``.
    """
    if isinstance(chi, SurfaceSpec):
        chi = chi.chi
    if N < 0:
        raise PreconditionError("N must be nonnegative")
    if N == 0:
        return 1
    num = math.prod(k - chi for k in range(1, N + 1))
    q, r = divmod(num, math.factorial(N))
    assert r == 0, "product of N consecutive integers is divisible by N!"
    return q


def degree_for_rho(A, rho, surface: SurfaceSpec, rel_tol: float = 1e-9) -> RhoPoint:
    pt = classify_rho(A, rho, rel_tol)
    if pt.classification is Region.INTERIOR:
        return RhoPoint(pt.rho, pt.classification, pt.N, pt.q, degree(surface.chi, pt.N))
    if pt.classification is Region.ON_GAMMA:
        return RhoPoint(pt.rho, pt.classification, pt.N, pt.q, None,
                        note=f"rho lies on the critical set Gamma_{pt.N}; degree undefined")
    return RhoPoint(pt.rho, pt.classification, None, pt.q, None, note=pt.note)


def in_E(A, sigma, tol: float = 1e-9) -> bool:
    """Membership in the admissible mass hypersurface.

    ``|Λ_I| <= tol * 4Σσ`` is accepted as zero; every proper subset must have
    strictly positive ``Λ_J``.
    """
    A = as_matrix(A)
    s = sigma.sigma if isinstance(sigma, MassVector) else np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        return False
    if abs(lambda_J(A, s, range(A.n), ENTIRE)) > tol * ENTIRE * s.sum():
        return False
    return all(lambda_J(A, s, J, ENTIRE) > 0 for J in _proper_subsets(A.n))


def construct_E_point(A):
    """Explicit masses from the inverse row sums ``ξ = A⁻¹ 1``.

    Returns a :class:`MassVector` ``σ = 4ξ`` when every ``ξ_i > 0``. If some
    row sums vanish, the positive ones define a support ``J`` and a
    :class:`PartialEPoint` with ``Λ_J(σ_J) = 0`` is returned instead.
    """
    A = as_matrix(A)
    if not satisfies_h1_h2(A):
        raise HypothesesNotSatisfied("construct_E_point requires H1 and H2")
    xi = A.inverse @ np.ones(A.n)
    scale = float(np.max(np.abs(xi)))
    assert scale > 0, "inverse row sums cannot all vanish for an invertible matrix"
    zero = np.abs(xi) <= XI_ZERO_REL_TOL * scale
    if not zero.any():
        return MassVector.from_sigma(A, 4.0 * xi)
    support = tuple(int(i) for i in np.flatnonzero(~zero))
    sub = A.entries[np.ix_(support, support)]
    masses = MassVector.from_sigma(CoefficientMatrix(sub), 4.0 * xi[list(support)])
    full = np.zeros(A.n)
    full[list(support)] = masses.sigma
    return PartialEPoint(support=support, masses=masses, sigma_full=full)
