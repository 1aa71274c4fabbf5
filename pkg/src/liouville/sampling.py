"""Random coefficient matrices and the randomized property drivers."""

from __future__ import annotations

import numpy as np

from .energy_geometry import (
    ENTIRE,
    MassVector,
    _proper_subsets,
    construct_E_point,
    in_E,
    lambda_J,
)
from .matrix_core import build_matrix, check_dominance, satisfies_h1_h2


def _h2_prefilter(batch):
    # cheap vectorized screen; every survivor is rechecked by the real checkers
    det = np.linalg.det(batch)
    ok = np.abs(det) > 1e-8
    inv = np.zeros_like(batch)
    inv[ok] = np.linalg.inv(batch[ok])
    n = batch.shape[-1]
    eye = np.eye(n, dtype=bool)
    margin = -1e-9
    diag_ok = np.all(np.where(eye, inv <= -margin, True), axis=(1, 2))
    off_ok = np.all(np.where(eye, True, inv >= margin), axis=(1, 2))
    sums_ok = np.all(inv.sum(axis=2) >= margin, axis=1)
    return ok & diag_ok & off_ok & sums_ok


def random_h1h2_matrices(rng, n: int, count: int, high: float = 3.0, batch: int = 4096):
    """Rejection-sample ``count`` symmetric matrices with entries in ``[0, high]``
    that pass H1 and H2."""
    out = []
    iu = np.triu_indices(n)
    while len(out) < count:
        vals = rng.uniform(0.0, high, size=(batch, len(iu[0])))
        mats = np.zeros((batch, n, n))
        mats[:, iu[0], iu[1]] = vals
        mats[:, iu[1], iu[0]] = vals
        for k in np.flatnonzero(_h2_prefilter(mats)):
            A = build_matrix(mats[k])
            if satisfies_h1_h2(A):
                out.append(A)
                if len(out) == count:
                    break
    return out


def random_h1h2_matrix(rng, n: int, high: float = 3.0):
    return random_h1h2_matrices(rng, n, 1, high, batch=256)[0]


def _mixed_sizes(rng, trials, sizes):
    per = {n: random_h1h2_matrices(rng, n, -(-trials // len(sizes))) for n in sizes}
    return [per[sizes[k % len(sizes)]][k // len(sizes)] for k in range(trials)]


def rescale_to_hypersurface(A, sigma0):
    """Scale a positive ray onto ``Λ_I(tσ₀) = 0``: ``t = 4Σσ₀ / σ₀ᵀAσ₀``."""
    sigma0 = np.asarray(sigma0, dtype=float)
    t = ENTIRE * sigma0.sum() / float(sigma0 @ np.asarray(A) @ sigma0)
    return t * sigma0


def dominance_suite(rng, trials: int, sizes=(2, 3, 4)) -> dict:
    """Draw H1∧H2 matrices and count off-diagonal dominance violations."""
    exceptions = []
    for A in _mixed_sizes(rng, trials, sizes):
        rep = check_dominance(A)
        if not rep.dominance_pass:
            exceptions.append({"matrix": A.entries.tolist(), "failures": rep.failures})
    return {"trials": trials, "exceptions": len(exceptions), "details": exceptions}


def subset_positivity_suite(rng, trials: int, sizes=(2, 3)) -> dict:
    """Random positive masses pushed onto ``Λ_I = 0``; every proper ``Λ_J``
    must then be positive."""
    exceptions = []
    worst = np.inf
    for A in _mixed_sizes(rng, trials, sizes):
        n = A.n
        sigma = rescale_to_hypersurface(A, rng.uniform(0.0, 1.0, size=n) + 1e-12)
        lam = min(lambda_J(A, sigma, J, ENTIRE) for J in _proper_subsets(n))
        worst = min(worst, lam)
        if not lam > 0:
            exceptions.append({"matrix": A.entries.tolist(), "sigma": sigma.tolist(), "lambda": lam})
    return {"trials": trials, "exceptions": len(exceptions), "min_lambda": float(worst),
            "details": exceptions}


def e_point_suite(rng, trials: int, sizes=(2, 3, 4)) -> dict:
    """construct_E_point on random matrices with all ``ξ_i > 0`` must land in E."""
    exceptions = []
    pool = []
    while len(pool) < trials:
        for A in _mixed_sizes(rng, trials, sizes):
            if len(pool) < trials and isinstance(construct_E_point(A), MassVector):
                pool.append(A)
    for A in pool:
        pt = construct_E_point(A)
        if not in_E(A, pt):
            exceptions.append({"matrix": A.entries.tolist(), "sigma": pt.sigma.tolist()})
    return {"trials": trials, "exceptions": len(exceptions), "details": exceptions}
