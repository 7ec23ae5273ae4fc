"""Accuracy metrics against a known population scatter and a timing harness.

Everything here presumes synthetic data: the population matrix is known,
so estimates can be scored directly and coefficient selectors can be
compared against the oracle that minimizes the true error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .cvl import AlphaGrid, select_alpha_grid
from .scatter import FitConfig, ScatterMatrix, normalize_samples, rtme_fit
from .synth import EllipticalSpec, sample_elliptical, toeplitz_scatter


def nmse(estimate, truth) -> float:
    """Squared Frobenius error of ``estimate`` relative to ``truth``.

    Computes ``||estimate - truth||_F^2 / ||truth||_F^2`` on the matrices
    exactly as given. Callers comparing estimates that are only defined
    up to scale should bring both to a common trace first.
    """
    E = estimate.entries if isinstance(estimate, ScatterMatrix) else np.asarray(estimate, dtype=float)
    T = truth.entries if isinstance(truth, ScatterMatrix) else np.asarray(truth, dtype=float)
    if E.shape != T.shape:
        raise ValueError(f"shape mismatch: estimate {E.shape} vs truth {T.shape}")
    return float(np.linalg.norm(E - T) ** 2 / np.linalg.norm(T) ** 2)


@dataclass(frozen=True)
class NmsePoint:
    alpha: float
    nmse: float


@dataclass(frozen=True)
class SelectedAlpha:
    label: str
    alpha: float
    nmse: float


@dataclass(frozen=True)
class NmseSweep:
    """Estimation error across a coefficient grid, with selector overlays.

    ``oracle_alpha`` is the grid coefficient with the smallest true
    error, knowable only because the population scatter is. ``selected``
    holds the data-driven selections for comparison against it.
    """

    points: tuple
    oracle_alpha: float
    oracle_nmse: float
    selected: tuple


def nmse_sweep(spec: EllipticalSpec, grid: AlphaGrid, cfg: FitConfig | None = None) -> NmseSweep:
    """Fit the regularized scatter at every grid coefficient and score it.

    Draws one dataset from ``spec``, fits at each grid value, and records
    the error against the population scatter. The approximate
    cross-validation selection runs on the same dataset and is overlaid
    with label 'acvl'; its fit is read back from the sweep, not refit.
    """
    cfg = cfg or FitConfig()
    X = normalize_samples(sample_elliptical(spec))
    truth = spec.scatter
    pts = []
    by_alpha = {}
    for a in grid.values:
        rep = rtme_fit(X, replace(cfg, alpha=a))
        val = nmse(rep.estimate, truth)
        pts.append(NmsePoint(a, val))
        by_alpha[a] = val
    best = min(pts, key=lambda pt: (pt.nmse, pt.alpha))
    curve = select_alpha_grid(X, grid, cfg, method="approximate")
    picked = SelectedAlpha("acvl", curve.argmin_alpha, by_alpha[curve.argmin_alpha])
    return NmseSweep(
        points=tuple(pts),
        oracle_alpha=best.alpha,
        oracle_nmse=best.nmse,
        selected=(picked,),
    )


@dataclass(frozen=True)
class BenchSetting:
    p: int
    n: int
    gamma: float
    radial: str
    seed: int
    m: int


@dataclass(frozen=True)
class BenchReport:
    """Paired timing of the exact and approximate selectors on one dataset."""

    setting: BenchSetting
    exact_time_ns: int
    approx_time_ns: int
    speedup: float
    exact_calls: int
    approx_calls: int
    argmin_exact: float
    argmin_approx: float


def _infer_gamma(scatter: ScatterMatrix) -> float:
    """Recover the decay rate when the scatter is a Toeplitz power matrix."""
    p = scatter.p
    if p < 2:
        return 0.0
    g = float(scatter.entries[0, 1])
    if 0.0 <= g < 1.0 and np.array_equal(scatter.entries, toeplitz_scatter(p, g).entries):
        return g
    return float("nan")


def bench_exact_vs_approx(spec: EllipticalSpec, grid: AlphaGrid, cfg: FitConfig | None = None,
                          threads: int = 1) -> BenchReport:
    """Wall-time comparison of the two selectors on identical data.

    One untimed approximate pass warms caches and library state, then
    each selector runs once under a monotonic clock. Data generation is
    excluded from both timings. The same thread count is handed to both
    selectors so the comparison stays fair. The invocation-count ratio
    is asserted, not sampled: the approximate route must have made
    exactly n times fewer fixed point runs.
    """
    X = normalize_samples(sample_elliptical(spec))
    n = X.n
    select_alpha_grid(X, grid, cfg, method="approximate", threads=threads)
    t0 = time.perf_counter_ns()
    ce = select_alpha_grid(X, grid, cfg, method="exact", threads=threads)
    exact_ns = time.perf_counter_ns() - t0
    t0 = time.perf_counter_ns()
    ca = select_alpha_grid(X, grid, cfg, method="approximate", threads=threads)
    approx_ns = time.perf_counter_ns() - t0
    if ca.total_rfpi_calls * n != ce.total_rfpi_calls:
        raise RuntimeError(
            f"call-count identity violated: exact made {ce.total_rfpi_calls} "
            f"fixed point runs, approximate {ca.total_rfpi_calls}, n={n}"
        )
    setting = BenchSetting(
        p=X.p, n=n, gamma=_infer_gamma(spec.scatter),
        radial=spec.radial.label(), seed=spec.seed, m=grid.m,
    )
    return BenchReport(
        setting=setting,
        exact_time_ns=exact_ns,
        approx_time_ns=approx_ns,
        speedup=exact_ns / approx_ns,
        exact_calls=ce.total_rfpi_calls,
        approx_calls=ca.total_rfpi_calls,
        argmin_exact=ce.argmin_alpha,
        argmin_approx=ca.argmin_alpha,
    )
