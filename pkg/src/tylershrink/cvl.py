"""Shrinkage coefficient selection by leave-one-out cross validation.

Two routes to the same objective: ``exact_cvl`` refits the scatter on
every leave-one-out subset, costing n regularized fits per coefficient
value; ``approx_cvl`` runs one full fit, then rebuilds each held-out
scatter by reweighting the full-data second moment, so an m point grid
costs m fits instead of m * n. A bracketing minimizer over the
approximate objective replaces the grid when only the argmin is wanted.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg.blas import dtrsm
from scipy.linalg.lapack import dpotrf

from .errors import ConvergenceError, NotPositiveDefiniteError
from .scatter import FitConfig, ScatterMatrix, UnitSamples, _unit_rows, rtme_fit

_METHODS = {"exact": "exact", "approximate": "approximate", "approx": "approximate"}


@dataclass(frozen=True)
class AlphaGrid:
    """Strictly increasing shrinkage coefficient grid in (lower_bound, 1).

    ``lower_bound`` is the admissibility threshold max(0, 1 - n/p): the
    regularized fixed point does not exist at or below it, so no grid
    value may touch it.
    """

    values: tuple
    lower_bound: float

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("grid needs at least 2 points")
        if not (0.0 <= self.lower_bound < 1.0):
            raise ValueError(f"lower_bound must lie in [0, 1), got {self.lower_bound}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be strictly increasing")
        if vals[0] <= self.lower_bound or vals[-1] >= 1.0:
            raise ValueError(
                f"grid values must lie strictly inside ({self.lower_bound}, 1)"
            )

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def step(self) -> float:
        return self.values[1] - self.values[0]

    @classmethod
    def uniform(cls, m: int, *, n: int, p: int) -> "AlphaGrid":
        """Evenly spaced m point grid adapted to the sample geometry.

        The lower edge starts five percent of the way from the strictest
        admissibility threshold toward 1. Two thresholds matter: the
        full-sample bound 1 - n/p and the leave-one-out bound 1 - (n-1)/p,
        since grid searches feed both the full fit and n fits on n - 1
        rows. The five percent cushion also keeps the fixed point
        iteration affordable; its contraction rate decays like the
        distance to the threshold, so a grid hugging the bound would need
        tens of thousands of iterations for its first point. The upper
        edge stops at 0.999 because the loss is flat and fits are instant
        near the target.
        """
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        lb = max(0.0, 1.0 - n / p)
        lo_base = max(lb, 1.0 - (n - 1) / p)
        lo = lo_base + 0.05 * (1.0 - lo_base)
        hi = 1.0 - 1e-3
        vals = lo + (hi - lo) * np.arange(m) / (m - 1)
        return cls(values=tuple(vals), lower_bound=lb)


@dataclass(frozen=True)
class CvlPoint:
    alpha: float
    loss: float
    rfpi_calls: int
    wall_time_ns: int


@dataclass(frozen=True)
class CvlCurve:
    """Cross-validated loss evaluated over a coefficient grid."""

    points: tuple
    method: str
    argmin_alpha: float
    argmin_loss: float

    @property
    def alphas(self) -> np.ndarray:
        return np.array([pt.alpha for pt in self.points])

    @property
    def losses(self) -> np.ndarray:
        return np.array([pt.loss for pt in self.points])

    @property
    def total_rfpi_calls(self) -> int:
        return sum(pt.rfpi_calls for pt in self.points)

    @property
    def total_wall_time_ns(self) -> int:
        return sum(pt.wall_time_ns for pt in self.points)


@dataclass(frozen=True)
class BisectionResult:
    """Outcome of the bracketing minimizer.

    ``fell_back`` is set when the sampled values contradicted
    unimodality and the result came from a coarse grid pass instead.
    ``evaluations`` counts objective evaluations, each one regularized
    fit.
    """

    alpha: float
    loss: float
    iterations: int
    evaluations: int
    fell_back: bool


def _point_losses(rows, sq, chol, logdet, idx, p):
    # Held-out loss of row idx against a factored scatter: the quadratic
    # form log is taken relative to log(x'x) so the value is exact at the
    # identity and insensitive to last-bit norm error in the row.
    x = rows[idx : idx + 1]
    z = np.ascontiguousarray(dtrsm(1.0, chol, x, side=1, lower=1, trans_a=1))
    w = np.einsum("ij,ij->i", z, z)[0]
    return 0.5 * p * (np.log(w) - np.log(sq[idx])) + 0.5 * logdet


def exact_cvl(X, alpha: float, cfg: FitConfig | None = None):
    """Leave-one-out cross-validated loss by brute refitting.

    For each i, fits the regularized scatter on the other n - 1 rows
    (started from ``cfg.init``, never warm started) and scores the held
    out row. Returns ``(loss, rfpi_calls)`` with ``rfpi_calls == n``.

    Raises
    ------
    ValueError
        If alpha is inadmissible for fits on n - 1 samples, that is
        alpha <= max(0, 1 - (n-1)/p).
    ConvergenceError
        Naming the left-out index whose refit failed.
    """
    cfg = cfg or FitConfig(alpha=alpha)
    rows = _unit_rows(X)
    n, p = rows.shape
    loo_bound = max(0.0, 1.0 - (n - 1) / p)
    if alpha <= loo_bound:
        raise ValueError(
            f"alpha={alpha} inadmissible for leave-one-out fits on {n - 1} "
            f"samples; need alpha > {loo_bound}"
        )
    cfg = replace(cfg, alpha=alpha)
    sq = np.einsum("ij,ij->i", rows, rows)
    total = 0.0
    calls = 0
    for i in range(n):
        subset = np.delete(rows, i, axis=0)
        try:
            est = rtme_fit(UnitSamples(subset), cfg)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"leave-one-out fit for index {i} did not converge: {err}",
                last_iterate=err.last_iterate,
                iterations=err.iterations,
                final_step=err.final_step,
            ) from err
        calls += 1
        S = est.estimate
        total += _point_losses(rows, sq, S.factor, S.logdet(), i, p)
    return total / n, calls


def approx_leave_one_out_scatter(X, i: int, full_fit: ScatterMatrix, alpha: float, target=None) -> ScatterMatrix:
    """Held-out scatter approximated from the full-data fit.

    Rebuilds what the fit on rows excluding i would look like by reusing
    the full fit's quadratic form weights: the weighted second moment of
    the remaining rows, scaled by (1 - alpha) p / (n - 1), plus the
    shrinkage term. No fixed point iteration runs.
    """
    rows = _unit_rows(X)
    n, p = rows.shape
    if not (0 <= i < n):
        raise ValueError(f"index {i} out of range for {n} samples")
    T = np.eye(p) if target is None else _coerce_target(target, p)
    vtil, M = _reweighted_moment(rows, full_fit)
    scale = (1.0 - alpha) * p / (n - 1)
    S = scale * (M - np.outer(rows[i], rows[i]) / vtil[i])
    S += alpha * T
    return ScatterMatrix(S)


def _coerce_target(target, p):
    entries = target.entries if isinstance(target, ScatterMatrix) else np.asarray(target, dtype=float)
    if entries.shape != (p, p):
        raise ValueError(f"target must be (p, p) = ({p}, {p}), got {entries.shape}")
    return entries


def _reweighted_moment(rows, full_fit):
    vtil = full_fit.quad_forms(rows)
    W = rows / vtil[:, None]
    M = W.T @ rows
    M = 0.5 * (M + M.T)
    return vtil, M


def approx_cvl(X, alpha: float, cfg: FitConfig | None = None):
    """Approximate cross-validated loss from a single full-data fit.

    Fits the regularized scatter once on all n rows, then scores each
    held out row against its reweighted held-out scatter. Returns
    ``(loss, rfpi_calls)`` with ``rfpi_calls == 1``.
    """
    cfg = cfg or FitConfig(alpha=alpha)
    rows = _unit_rows(X)
    n, p = rows.shape
    cfg = replace(cfg, alpha=alpha)
    full = rtme_fit(UnitSamples(rows), cfg)
    T = np.eye(p) if cfg.target is None else cfg.target.entries
    vtil, M = _reweighted_moment(rows, full.estimate)
    scale = (1.0 - alpha) * p / (n - 1)
    aT = alpha * T
    sq = np.einsum("ij,ij->i", rows, rows)
    total = 0.0
    for i in range(n):
        S = scale * (M - np.outer(rows[i], rows[i]) / vtil[i])
        S += aT
        chol, info = dpotrf(S, lower=1)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"held-out scatter for index {i} lost positive definiteness"
            )
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        total += _point_losses(rows, sq, chol, logdet, i, p)
    return total / n, 1


def _evaluate(method, X, alpha, cfg):
    t0 = time.perf_counter_ns()
    try:
        loss, calls = (exact_cvl if method == "exact" else approx_cvl)(X, alpha, cfg)
    except (ValueError, ConvergenceError) as err:
        if isinstance(err, ConvergenceError):
            raise ConvergenceError(
                f"cross-validated loss failed at alpha={alpha}: {err}",
                last_iterate=err.last_iterate,
                iterations=err.iterations,
                final_step=err.final_step,
            ) from err
        raise type(err)(f"cross-validated loss failed at alpha={alpha}: {err}") from err
    return CvlPoint(alpha, loss, calls, time.perf_counter_ns() - t0)


def select_alpha_grid(X, grid: AlphaGrid, cfg: FitConfig | None = None,
                      method: str = "approximate", threads: int = 1) -> CvlCurve:
    """Evaluate a cross-validated loss curve and locate its grid argmin.

    Parameters
    ----------
    X : UnitSamples or (n, p) array_like
    grid : AlphaGrid
    cfg : FitConfig, optional
        Fit settings; its ``alpha`` field is overridden per grid point.
    method : {'exact', 'approximate'}
        'approx' is accepted as an alias.
    threads : int
        Evaluate grid points concurrently when > 1. Results are
        assembled in grid order, so the curve is identical either way.

    Returns
    -------
    CvlCurve
        Ties in the minimum break toward the smaller coefficient.
    """
    norm = _METHODS.get(method)
    if norm is None:
        raise ValueError(f"method must be 'exact' or 'approximate', got {method!r}")
    rows = _unit_rows(X)
    sam = UnitSamples(rows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pts = list(pool.map(lambda a: _evaluate(norm, sam, a, cfg), grid.values))
    else:
        pts = [_evaluate(norm, sam, a, cfg) for a in grid.values]
    best = min(range(len(pts)), key=lambda j: (pts[j].loss, pts[j].alpha))
    return CvlCurve(
        points=tuple(pts),
        method=norm,
        argmin_alpha=pts[best].alpha,
        argmin_loss=pts[best].loss,
    )


def select_alpha_bisection(X, bracket, eps: float, cfg: FitConfig | None = None) -> BisectionResult:
    """Locate the approximate loss minimizer by interval halving.

    Keeps a bracket known to contain a minimizer of the (assumed
    unimodal) approximate loss, with its midpoint already evaluated.
    Each iteration scores the two quarter points and keeps the half
    interval whose interior point is lowest, so the bracket width halves
    every iteration and the loop runs at most
    ``ceil(log2((hi - lo) / eps))`` times. If both quarter points beat
    the midpoint the curve is not unimodal on the bracket; the search
    falls back to a 33 point sweep and flags it.

    Parameters
    ----------
    X : UnitSamples or (n, p) array_like
    bracket : (lo, hi) pair
        Probes stay strictly inside, so the endpoints themselves may
        touch the admissible boundary.
    eps : float
        Final bracket width; the returned midpoint is within eps/2 of
        every point of the final bracket.
    cfg : FitConfig, optional
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (lo < hi):
        raise ValueError(f"bracket must satisfy lo < hi, got ({lo}, {hi})")
    if not (0.0 <= lo and hi <= 1.0):
        raise ValueError(f"bracket must lie within [0, 1], got ({lo}, {hi})")
    if not (eps > 0.0):
        raise ValueError("eps must be positive")
    rows = _unit_rows(X)
    n, p = rows.shape
    lb = max(0.0, 1.0 - n / p)
    if lo < lb:
        raise ValueError(f"bracket low end {lo} is below the admissible bound {lb}")
    sam = UnitSamples(rows)

    def f(a):
        return approx_cvl(sam, a, cfg)[0]

    mid = 0.5 * (lo + hi)
    fmid = f(mid)
    evaluations = 1
    iterations = 0
    while hi - lo > eps:
        q1 = 0.5 * (lo + mid)
        q3 = 0.5 * (mid + hi)
        f1, f3 = f(q1), f(q3)
        evaluations += 2
        iterations += 1
        if f1 < fmid and f3 < fmid:
            # Two descending directions from the midpoint: not unimodal
            # on this bracket. Sweep coarsely instead.
            sweep = np.linspace(lo, hi, 33)
            best_a, best_v = mid, fmid
            for a in sweep[1:-1]:
                v = f(a)
                evaluations += 1
                if v < best_v or (v == best_v and a < best_a):
                    best_a, best_v = float(a), v
            return BisectionResult(best_a, best_v, iterations, evaluations, True)
        if f1 <= fmid:
            hi, mid, fmid = mid, q1, f1
        elif f3 < fmid:
            lo, mid, fmid = mid, q3, f3
        else:
            lo, hi = q1, q3
    return BisectionResult(mid, fmid, iterations, evaluations, False)
