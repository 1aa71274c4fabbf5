"""Mean-field Liouville system on the unit flat torus.

Solves, for ``i = 1..n``::

    Δu_i + Σ_j a_ij ρ_j (h_j e^{u_j} / ∫ h_j e^{u_j} - 1) = 0,   ∫ u_i = 0

on ``[0,1)²`` with periodic boundary conditions (volume 1, Euler
characteristic 0). Fields are plain ``(K, K)`` arrays sampled at
``(i/K, j/K)``; a system of fields is an ``(n, K, K)`` array. Derivatives are
spectral and the quadrature weight is ``1/K²`` per node, so grid means are
integrals.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy_geometry import Region, classify_rho
from .errors import (
    MaxIterExceeded,
    NonzeroMeanError,
    PreconditionError,
    QuadratureUnderflowError,
    SingularMatrixError,
)
from .matrix_core import CoefficientMatrix, as_matrix

log = logging.getLogger(__name__)

TWO_PI_SQ = 4.0 * math.pi**2
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    K: int

    def __post_init__(self):
        if self.K < 2 or self.K & (self.K - 1):
            raise PreconditionError(f"K must be a power of two >= 2, got {self.K}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.K

    @property
    def weight(self) -> float:
        return 1.0 / self.K**2

    def coords(self):
        x = np.arange(self.K) / self.K
        return np.meshgrid(x, x, indexing="ij")

    def ksq(self) -> np.ndarray:
        """``|k|²`` on the rfft2 layout."""
        kx = np.fft.fftfreq(self.K, d=1.0 / self.K)
        ky = np.fft.rfftfreq(self.K, d=1.0 / self.K)
        return kx[:, None] ** 2 + ky[None, :] ** 2


def mean(f) -> np.ndarray:
    """Grid integral of one field or of each field in a stack."""
    return np.mean(f, axis=(-2, -1))


def is_zero_mean(f, tol: float = MEAN_TOL) -> bool:
    f = np.asarray(f)
    scale = max(1.0, float(np.max(np.abs(f)))) if f.size else 1.0
    return bool(np.all(np.abs(mean(f)) <= tol * scale))


def project_zero_mean(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f - mean(f)[..., None, None]


def _ksq_for(f):
    return TorusGrid(f.shape[-1]).ksq()


def laplacian(f) -> np.ndarray:
    """Spectral Laplacian: multiply the Fourier coefficients by ``-4π²|k|²``."""
    # constants are annihilated exactly; dropping them first avoids round-off
    f = project_zero_mean(f)
    K = f.shape[-1]
    F = np.fft.rfft2(f)
    return np.fft.irfft2(-TWO_PI_SQ * _ksq_for(f) * F, s=(K, K))


def inverse_laplacian(f) -> np.ndarray:
    """Zero-mean solution of ``Δw = f``.

    Raises
    ------
    NonzeroMeanError
        If ``f`` does not integrate to zero.
    """
    f = np.asarray(f, dtype=float)
    if not is_zero_mean(f, 1e-10):
        raise NonzeroMeanError(f"source has mean {mean(f)!r}")
    K = f.shape[-1]
    ksq = _ksq_for(f)
    F = np.fft.rfft2(f)
    mult = np.zeros_like(ksq)
    mult[ksq > 0] = -1.0 / (TWO_PI_SQ * ksq[ksq > 0])
    return np.fft.irfft2(mult * F, s=(K, K))


def dirichlet_form(u, v) -> float:
    """``∫ ∇u·∇v`` by Parseval on the discrete Fourier coefficients."""
    K = u.shape[-1]
    U = np.fft.fft2(u)
    V = np.fft.fft2(v)
    kx = np.fft.fftfreq(K, d=1.0 / K)
    ksq = kx[:, None] ** 2 + kx[None, :] ** 2
    return float(TWO_PI_SQ * np.sum(ksq * (U * np.conj(V)).real) / K**4)


@dataclass(frozen=True)
class HSpec:
    """Weight ``h(x, y) = const + Σ amp·cos(2π(kx·x + ky·y))``."""

    const: float
    cos_terms: tuple = ()

    @classmethod
    def from_dict(cls, d) -> "HSpec":
        terms = tuple((int(t["kx"]), int(t["ky"]), float(t["amp"])) for t in d.get("cos_terms", ()))
        return cls(float(d["const"]), terms)

    def to_dict(self) -> dict:
        return {"const": self.const,
                "cos_terms": [{"kx": kx, "ky": ky, "amp": amp} for kx, ky, amp in self.cos_terms]}

    def evaluate(self, grid: TorusGrid) -> np.ndarray:
        x, y = grid.coords()
        h = np.full_like(x, self.const)
        for kx, ky, amp in self.cos_terms:
            h += amp * np.cos(2.0 * math.pi * (kx * x + ky * y))
        return h


@dataclass(eq=False)
class MeanFieldProblem:
    """Coefficients, parameters and weights of one torus problem.

    ``forcing`` is an optional zero-mean source added to every equation; it
    is only used for manufactured-solution checks.
    """

    A: CoefficientMatrix
    rho: np.ndarray
    h: np.ndarray
    grid: TorusGrid
    forcing: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = as_matrix(self.A)
        self.rho = np.asarray(self.rho, dtype=float).reshape(-1)
        n, K = self.A.n, self.grid.K
        if self.rho.shape != (n,):
            raise PreconditionError(f"rho has length {self.rho.size}, expected {n}")
        if np.any(self.rho < 0):
            raise PreconditionError("rho must be nonnegative")
        self.h = np.asarray(self.h, dtype=float)
        if self.h.shape != (n, K, K):
            raise PreconditionError(f"h has shape {self.h.shape}, expected {(n, K, K)}")
        if not np.min(self.h) > 0:
            raise PreconditionError(f"weights must be positive, min h = {np.min(self.h):.3e}")
        if self.forcing is not None:
            self.forcing = np.asarray(self.forcing, dtype=float)
            if not is_zero_mean(self.forcing, 1e-10):
                raise NonzeroMeanError("forcing must have zero mean")

    @property
    def n(self) -> int:
        return self.A.n

    @classmethod
    def from_specs(cls, A, rho, h_specs: Sequence[HSpec], K: int, forcing=None):
        grid = TorusGrid(K)
        h = np.stack([s.evaluate(grid) for s in h_specs])
        return cls(as_matrix(A), rho, h, grid, forcing)


@dataclass(eq=False)
class MeanFieldSolution:
    u: np.ndarray
    residual_norm: float
    phi_value: float
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    phi_history: list = field(default_factory=list)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.u)))


def _weights(p: MeanFieldProblem, u):
    """Normalized densities ``h e^u / Q`` and ``log Q`` computed without overflow."""
    top = np.max(u, axis=(-2, -1))
    w = p.h * np.exp(u - top[:, None, None])
    q = mean(w)
    if not np.all(q > 0):
        raise QuadratureUnderflowError(f"nonpositive quadrature {q!r}")
    return w / q[:, None, None], top + np.log(q)


def _source(p: MeanFieldProblem, u):
    dens, _ = _weights(p, u)
    s = np.einsum("ij,jxy->ixy", p.A.entries, p.rho[:, None, None] * (dens - 1.0))
    if p.forcing is not None:
        s = s + p.forcing
    return s


def residual(p: MeanFieldProblem, u) -> np.ndarray:
    """``Δu_i + Σ_j a_ij ρ_j (h_j e^{u_j}/Q_j - 1)`` (plus forcing) per equation."""
    u = np.asarray(u, dtype=float)
    r = laplacian(u) + _source(p, u)
    scale = max(1.0, float(np.max(np.abs(r))))
    assert np.all(np.abs(mean(r)) <= 1e-10 * scale), "residual lost its zero mean"
    return r


def _inverse(p: MeanFieldProblem):
    try:
        return p.A.inverse
    except Exception as exc:
        raise SingularMatrixError(str(exc)) from exc


def phi_functional(p: MeanFieldProblem, u) -> float:
    """``½ Σ a^ij ∫∇u_i·∇u_j - Σ ρ_j log ∫ h_j e^{u_j}``.

    The linear term ``Σ ρ_i ∫ u_i`` vanishes on zero-mean fields and is only
    asserted. With a forcing ``f`` the term ``-Σ a^ij ∫ f_i u_j`` is added so
    that the Euler-Lagrange equation stays the forced system.
    """
    u = np.asarray(u, dtype=float)
    inv = _inverse(p)
    assert is_zero_mean(u, 1e-10), "phi_functional expects zero-mean fields"
    n = p.n
    dir_term = 0.0
    for i in range(n):
        for j in range(i, n):
            d = dirichlet_form(u[i], u[j])
            dir_term += inv[i, j] * d * (1.0 if i == j else 2.0)
    _, logq = _weights(p, u)
    val = 0.5 * dir_term - float(p.rho @ logq)
    if p.forcing is not None:
        val -= float(np.sum(inv * np.einsum("ixy,jxy->ij", p.forcing, u) / p.grid.K**2))
    return val


def phi_gradient(p: MeanFieldProblem, u) -> np.ndarray:
    """L²-gradient of :func:`phi_functional`: ``dΦ[v] = Σ_j ∫ g_j v_j``."""
    u = np.asarray(u, dtype=float)
    inv = _inverse(p)
    dens, _ = _weights(p, u)
    rhs = -laplacian(u)
    if p.forcing is not None:
        rhs = rhs - p.forcing
    return np.einsum("ij,ixy->jxy", inv, rhs) - p.rho[:, None, None] * dens


def normalize_v(p: MeanFieldProblem, u) -> np.ndarray:
    """``v_i = u_i - log ∫ h_i e^{u_i}``, so that ``∫ h_i e^{v_i} = 1``."""
    u = np.asarray(u, dtype=float)
    _, logq = _weights(p, u)
    return u - logq[:, None, None]


def _res_norm(r) -> float:
    return float(np.max(np.abs(r)))


def solve_mean_field(p: MeanFieldProblem, theta: float = 0.5, max_iter: int = 5000,
                     tol: float = 1e-8, u0=None, track_phi: bool = False) -> MeanFieldSolution:
    """Damped Picard iteration on ``u ↦ -Δ⁻¹(Σ_j a_ij ρ_j (h_j e^{u_j}/Q_j - 1))``.

    Parameters
    ----------
    theta : float
        Damping; each step moves ``theta`` of the way to the image.
    tol : float
        Success threshold on the max-norm of :func:`residual`.
    u0 : array, optional
        Starting fields (projected to zero mean); zero by default.
    track_phi : bool
        Record the functional along the iterates and warn if it rises.

    Raises
    ------
    MaxIterExceeded
        Carries the best iterate as ``exc.solution``.
    """
    if not 0 < theta <= 1:
        raise PreconditionError("theta must lie in (0, 1]")
    pt = classify_rho(p.A, p.rho)
    if not (pt.classification is Region.INTERIOR and pt.N == 0):
        warnings.warn(
            f"rho is classified {pt.classification.value}({pt.N}); the Picard solve "
            "is only expected to converge in O_0",
            RuntimeWarning,
            stacklevel=2,
        )
    shape = (p.n, p.grid.K, p.grid.K)
    u = np.zeros(shape) if u0 is None else project_zero_mean(np.broadcast_to(u0, shape))
    best_u, best_res = u, math.inf
    res_hist, phi_hist = [], []
    if track_phi:
        phi_hist.append(phi_functional(p, u))
    for it in range(1, max_iter + 1):
        image = -inverse_laplacian(_source(p, u))
        u = project_zero_mean((1.0 - theta) * u + theta * image)
        res = _res_norm(residual(p, u))
        res_hist.append(res)
        if not math.isfinite(res):
            break
        if track_phi:
            phi = phi_functional(p, u)
            if phi > phi_hist[-1] + 1e-12 * max(1.0, abs(phi)):
                log.warning("phi rose from %.17g to %.17g at iteration %d", phi_hist[-1], phi, it)
            phi_hist.append(phi)
        if res < best_res:
            best_u, best_res = u, res
        if res <= tol:
            return MeanFieldSolution(u, res, phi_functional(p, u), it, True, res_hist, phi_hist)
    sol = MeanFieldSolution(best_u, best_res, phi_functional(p, best_u), len(res_hist), False,
                            res_hist, phi_hist)
    raise MaxIterExceeded(
        f"residual {best_res:.3e} above tol {tol:.1e} after {len(res_hist)} iterations", sol
    )


@dataclass
class ContinuationStep:
    rho: np.ndarray
    solution: MeanFieldSolution

    @property
    def max_abs(self) -> float:
        return self.solution.max_abs


def rho_continuation(A, h, K: int, rhos, **solve_opts):
    """Solve along a path of parameters, seeding each solve with the previous
    solution. ``h`` is a list of :class:`HSpec` or an ``(n, K, K)`` array.

    Returns the list of :class:`ContinuationStep` and the path-wide bound
    ``max_k ‖u^k‖_∞``.
    """
    A = as_matrix(A)
    grid = TorusGrid(K)
    if isinstance(h, np.ndarray):
        hv = h
    else:
        hv = np.stack([s.evaluate(grid) for s in h])
    steps = []
    u_prev = None
    for rho in rhos:
        p = MeanFieldProblem(A, np.atleast_1d(np.asarray(rho, dtype=float)), hv, grid)
        sol = solve_mean_field(p, u0=u_prev, **solve_opts)
        steps.append(ContinuationStep(p.rho, sol))
        u_prev = sol.u
        log.info("rho=%s  max|u|=%.6g  residual=%.3e  iterations=%d",
                 p.rho.tolist(), sol.max_abs, sol.residual_norm, sol.iterations)
    bound = max(s.max_abs for s in steps) if steps else 0.0
    log.info("path-wide bound max|u| <= %.6g", bound)
    return steps, bound
