"""Radial entire solutions of ``Δu_i + Σ_j a_ij e^{u_j} = 0`` in the plane.

A radial solution is fixed by its heights ``u_i(0) = α_i``. We integrate in
``t = log r`` where the system becomes first order in ``(u, σ)``::

    du_i/dt = -Σ_j a_ij σ_j(t)        (= r u_i'(r) = -m_i(r))
    dσ_i/dt = exp(u_i + 2t)           (σ_i(r) = ∫_0^r e^{u_i(s)} s ds)

so the running masses are integrated alongside the profile and ``m = Aσ``
holds by construction. Finite total mass requires every ``m_i(∞) > 2``;
beyond the stopping radius the remaining mass is supplied by a power-law
tail fitted to the current decay exponents.
"""

from __future__ import annotations

import concurrent.futures
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _dopri
from .energy_geometry import ENTIRE, MassVector, in_E, lambda_J
from .errors import (
    HypothesesNotSatisfied,
    LiouvilleError,
    NoConvergenceError,
    OverflowInExponentialError,
    PreconditionError,
    StepUnderflowError,
)
from .matrix_core import as_matrix, check_h1

EXP_CLAMP = 40.0

CONVERGED = "converged"
EXTRAPOLATED = "extrapolated"
DIVERGENT = "divergent"


@dataclass(frozen=True)
class RadialOptions:
    r0: float = 1e-4
    r_max: float = 1e8
    atol: float = 1e-12
    rtol: float = 1e-9
    delta: float = 0.05
    first_step: float = 1e-3
    max_step: float = 0.25
    max_steps: int = 200_000


@dataclass(eq=False)
class RadialSolution:
    """Grid-sampled radial profiles and running masses.

    ``status`` is ``"converged"`` when the tail mass fell below ``rtol``
    before ``r_max``, ``"extrapolated"`` when ``r_max`` was reached with
    every ``m_i > 2 + delta`` (finite masses, tail from the power-law model)
    and ``"divergent"`` otherwise, in which case ``sigma_infinity`` is None.
    """

    A: object
    alpha: np.ndarray
    r_grid: np.ndarray
    u: np.ndarray
    sigma_running: np.ndarray
    m_running: np.ndarray
    delta: float
    status: str = DIVERGENT
    sigma_infinity: Optional[MassVector] = None
    tail_constants: Optional[np.ndarray] = None
    steps: int = 0
    rejected: int = 0

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def stop_radius(self) -> float:
        return float(self.r_grid[-1])

    @property
    def divergent(self) -> bool:
        return self.sigma_infinity is None


def taylor_start(A, alpha, r0: float = 1e-4):
    """Second-order start off the axis: ``u(r0)`` and ``u'(r0)``."""
    A = as_matrix(A)
    alpha = np.asarray(alpha, dtype=float)
    if not r0 > 0:
        raise PreconditionError("r0 must be positive")
    forcing = A.entries @ np.exp(alpha)
    return alpha - forcing * r0**2 / 4.0, -forcing * r0 / 2.0


def _check_alpha(A, alpha):
    alpha = np.array(alpha, dtype=float)
    if alpha.shape != (A.n,):
        raise PreconditionError(f"alpha has shape {alpha.shape}, expected ({A.n},)")
    if not np.all(np.isfinite(alpha)):
        raise PreconditionError("alpha must be finite")
    return alpha


def integrate_radial(A, alpha, opts: Optional[RadialOptions] = None, **kw) -> RadialSolution:
    """Shoot from ``u(0) = alpha`` and integrate until the masses settle.

    Options come from ``opts`` (a :class:`RadialOptions`) overridden by
    keyword arguments of the same names.

    Raises
    ------
    HypothesesNotSatisfied
        If ``A`` fails H1.
    OverflowInExponentialError
        If some starting height exceeds ``EXP_CLAMP``.
    StepUnderflowError
        If the step controller collapses.
    """
    opts = _options(opts, kw)
    A = as_matrix(A)
    rep = check_h1(A)
    if not rep.h1_pass:
        raise HypothesesNotSatisfied(
            "integrate_radial requires H1: " + ", ".join(f.condition for f in rep.failures)
        )
    alpha = _check_alpha(A, alpha)
    n = A.n
    a = A.entries

    if np.max(alpha) > EXP_CLAMP:
        raise OverflowInExponentialError(float(np.max(alpha)), EXP_CLAMP)
    # large heights shrink the natural length scale; keep the Taylor term small
    r0 = opts.r0 / math.sqrt(max(1.0, float(np.max(a @ np.exp(alpha)))))
    u0, _ = taylor_start(A, alpha, r0)
    s0 = np.exp(alpha) * r0**2 / 2.0

    def rhs(t, y):
        out = np.empty(2 * n)
        out[:n] = -(a @ y[n:])
        out[n:] = np.exp(np.minimum(y[:n], EXP_CLAMP) + 2.0 * t)
        return out

    t = math.log(r0)
    t_end = math.log(opts.r_max)
    y = np.concatenate([u0, s0])
    k1 = rhs(t, y)
    ts, ys = [t], [y]
    h = opts.first_step
    steps = rejected = 0
    status = None
    target = 2.0 + opts.delta

    while t < t_end:
        if steps + rejected >= opts.max_steps:
            raise StepUnderflowError(f"step budget of {opts.max_steps} exhausted at r={math.exp(t):.3e}")
        h = min(h, opts.max_step, t_end - t)
        if h <= 1e-14 * max(1.0, abs(t)) and t_end - t > 1e-14 * max(1.0, abs(t)):
            raise StepUnderflowError(f"step size {h:.3e} underflowed at r={math.exp(t):.3e}")
        y_new, err, k_last = _dopri.step(rhs, t, y, h, k1)
        if not np.all(np.isfinite(y_new)):
            rejected += 1
            h *= _dopri.MIN_FACTOR
            continue
        en = _dopri.error_norm(err, y, y_new, opts.atol, opts.rtol)
        if en > 1.0:
            rejected += 1
            h *= max(_dopri.MIN_FACTOR, _dopri.SAFETY * en**-0.2)
            continue
        t = t + h if t_end - (t + h) > 1e-15 * abs(t_end) else t_end
        y, k1 = y_new, k_last
        ts.append(t)
        ys.append(y)
        steps += 1
        h *= _dopri.next_factor(en)

        m = a @ y[n:]
        if m.min() >= target:
            tail = np.exp(y[:n] + 2.0 * t) / (m - 2.0)
            if np.all(tail < opts.rtol * y[n:]):
                status = CONVERGED
                break

    Y = np.array(ys).T
    sol = RadialSolution(
        A=A,
        alpha=alpha,
        r_grid=np.exp(np.array(ts)),
        u=Y[:n].copy(),
        sigma_running=Y[n:].copy(),
        m_running=a @ Y[n:],
        delta=opts.delta,
        steps=steps,
        rejected=rejected,
    )
    if status is None and sol.m_running[:, -1].min() > target:
        status = EXTRAPOLATED
    if status is None:
        sol.status = DIVERGENT
        return sol
    sol.status = status
    sol.sigma_infinity = extrapolate_masses(sol)
    R = sol.stop_radius
    sol.tail_constants = sol.u[:, -1] + sol.sigma_infinity.m * math.log(R)
    return sol


def _options(opts, kw) -> RadialOptions:
    opts = opts or RadialOptions()
    if kw:
        unknown = set(kw) - set(RadialOptions.__dataclass_fields__)
        if unknown:
            raise TypeError(f"unknown radial options: {sorted(unknown)}")
        opts = RadialOptions(**{**opts.__dict__, **kw})
    return opts


def extrapolate_masses(sol: RadialSolution, R: Optional[float] = None,
                       tol: float = 1e-12, max_iter: int = 100) -> MassVector:
    """Total masses from the running masses at ``R`` plus a power-law tail.

    With ``e^{u_i(r)} ≈ e^{u_i(R)} (r/R)^{-m_i}`` the tail integral is
    ``e^{u_i(R)} R² / (m_i - 2)``. Since the tail feeds back into ``m = Aσ``
    the two are iterated to a fixed point.

    ``R`` defaults to the last grid radius; otherwise the largest grid
    radius not exceeding ``R`` is used.
    """
    A = as_matrix(sol.A)
    if R is None:
        idx = len(sol.r_grid) - 1
    else:
        idx = int(np.searchsorted(sol.r_grid, R * (1 + 1e-12), side="right")) - 1
        if idx < 0:
            raise PreconditionError(f"R={R} lies below the first grid radius")
    R = float(sol.r_grid[idx])
    uR = sol.u[:, idx]
    sR = sol.sigma_running[:, idx]
    mR = A.entries @ sR
    if mR.min() <= 2.0 + sol.delta:
        raise PreconditionError(
            f"min m_i(R) = {mR.min():.6g} does not exceed 2 + delta = {2.0 + sol.delta:g}"
        )
    weight = np.exp(uR) * R * R
    sigma, m = sR, mR
    for _ in range(max_iter):
        new = sR + weight / (m - 2.0)
        m_new = A.entries @ new
        if np.max(np.abs(new - sigma)) < tol * max(1.0, float(np.max(new))):
            return MassVector.from_sigma(A, new)
        if np.any(m_new <= 2.0):
            break
        sigma, m = new, m_new
    raise NoConvergenceError(f"tail fixed point did not settle; last m = {m.tolist()}")


@dataclass
class EntireSolutionReport:
    pohozaev_residual: float
    relative_residual: float
    m_min: float
    subset_positivity: bool
    tol: float

    @property
    def ok(self) -> bool:
        return self.relative_residual <= self.tol and self.m_min > 2.0 and self.subset_positivity


def verify_entire_solution(A, sol: RadialSolution, tol: float = 1e-3) -> EntireSolutionReport:
    """Check the Pohozaev identity, the decay floor and subset positivity.

    ``pohozaev_residual`` is ``|Λ_I(σ∞)|`` at scale 4; the relative residual
    divides it by ``4Σσ∞``.
    """
    if sol.sigma_infinity is None:
        raise PreconditionError("solution has no finite total masses")
    A = as_matrix(A)
    s = sol.sigma_infinity
    res = abs(lambda_J(A, s.sigma, range(A.n), ENTIRE))
    return EntireSolutionReport(
        pohozaev_residual=res,
        relative_residual=res / (ENTIRE * float(s.sigma.sum())),
        m_min=float(s.m.min()),
        subset_positivity=in_E(A, s, tol),
        tol=tol,
    )


@dataclass
class SweepRow:
    point: tuple
    alpha: np.ndarray
    status: str
    masses: Optional[MassVector] = None
    pohozaev_residual: Optional[float] = None
    error: str = ""


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)
    non_injective: list = field(default_factory=list)


def full_alpha(n: int, point) -> np.ndarray:
    """Complete a grid point to initial heights.

    Points of length ``n - 1`` get ``u_n(0) = 0`` appended; points of length
    ``n`` are taken as the full height vector.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.size == n - 1:
        return np.append(point, 0.0)
    if point.size == n:
        return point
    raise PreconditionError(f"grid point of length {point.size} does not fit n={n}")


def _sweep_point(args) -> SweepRow:
    A, point, opts = args
    try:
        alpha = full_alpha(A.n, point)
    except PreconditionError as exc:
        return SweepRow(tuple(point), np.asarray(point, float), "error", error=str(exc))
    try:
        sol = integrate_radial(A, alpha, opts)
    except LiouvilleError as exc:
        return SweepRow(tuple(point), alpha, "error", error=f"{type(exc).__name__}: {exc}")
    if sol.divergent:
        return SweepRow(tuple(point), alpha, DIVERGENT)
    res = verify_entire_solution(A, sol).pohozaev_residual
    return SweepRow(tuple(point), alpha, sol.status, sol.sigma_infinity, res)


def sweep_initial_values(A, grid, opts: Optional[RadialOptions] = None, jobs: int = 1,
                         on_row: Optional[Callable[[SweepRow], None]] = None,
                         injectivity_tol: float = 1e-6, **kw) -> SweepTable:
    """Map each grid point of heights to its total masses.

    Per-point failures are recorded in the row and never abort the sweep.
    ``on_row`` is called with each row in grid order as soon as it is ready.
    Pairs of points whose masses agree within ``injectivity_tol`` are listed
    in ``non_injective`` (diagnostic only).
    """
    A = as_matrix(A)
    opts = _options(opts, kw)
    tasks = [(A, tuple(np.atleast_1d(np.asarray(p, dtype=float)).tolist()), opts) for p in grid]
    table = SweepTable()
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_sweep_point, tasks)
            for row in results:
                table.rows.append(row)
                if on_row:
                    on_row(row)
    else:
        for task in tasks:
            row = _sweep_point(task)
            table.rows.append(row)
            if on_row:
                on_row(row)
    done = [(k, r) for k, r in enumerate(table.rows) if r.masses is not None]
    for (i, ri), (j, rj) in itertools.combinations(done, 2):
        if np.max(np.abs(ri.masses.sigma - rj.masses.sigma)) < injectivity_tol:
            table.non_injective.append((i, j))
    return table


def epsilon_family(A, l: int, alpha_head, eps: float,
                   opts: Optional[RadialOptions] = None, **kw) -> RadialSolution:
    """Shoot with the first ``l`` heights given and the rest at ``log eps``.

    As ``eps -> 0`` the trailing components start ever lower; when the
    leading subsystem carries an entire solution, their masses shrink
    towards zero.
    """
    A = as_matrix(A)
    if not 1 <= l < A.n:
        raise PreconditionError(f"need 1 <= l < n, got l={l}, n={A.n}")
    if not 0.0 < eps <= 1.0:
        raise PreconditionError(f"eps must lie in (0, 1], got {eps}")
    head = np.asarray(alpha_head, dtype=float).reshape(-1)
    if head.size != l:
        raise PreconditionError(f"alpha_head has length {head.size}, expected {l}")
    alpha = np.concatenate([head, np.full(A.n - l, math.log(eps))])
    return integrate_radial(A, alpha, opts, **kw)
