import numpy as np
import pytest

from tylershrink.cvl import AlphaGrid
from tylershrink.metrics import (
    BenchReport,
    NmseSweep,
    bench_exact_vs_approx,
    nmse,
    nmse_sweep,
)
from tylershrink.scatter import FitConfig, ScatterMatrix
from tylershrink.synth import EllipticalSpec, RadialLaw, toeplitz_scatter


# ---------------------------------------------------------------------------
# nmse


def test_nmse_trivial_values():
    S = toeplitz_scatter(5, 0.5)
    assert nmse(S, S) == 0.0
    assert nmse(np.zeros((5, 5)), S) == 1.0
    assert nmse(2.0 * S.entries, S) == 1.0


def test_nmse_shape_mismatch():
    with pytest.raises(ValueError):
        nmse(np.eye(3), np.eye(4))


def test_nmse_invariant_under_permutation_conjugation():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6))
    B = rng.standard_normal((6, 6))
    A, B = A @ A.T + np.eye(6), B @ B.T + np.eye(6)
    base = nmse(A, B)
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(6)
        P = np.eye(6)[perm]
        assert abs(nmse(P @ A @ P.T, P @ B @ P.T) - base) < 1e-12


# ---------------------------------------------------------------------------
# nmse_sweep


def small_sweep(seed=5):
    spec = EllipticalSpec(
        p=20, n=40, scatter=toeplitz_scatter(20, 0.5), seed=seed,
    )
    grid = AlphaGrid.uniform(10, n=40, p=20)
    return nmse_sweep(spec, grid)


def test_sweep_oracle_no_worse_than_edge():
    sweep = small_sweep()
    assert sweep.oracle_nmse <= sweep.points[-1].nmse
    assert min(pt.nmse for pt in sweep.points) == sweep.oracle_nmse


def test_sweep_deterministic():
    a, b = small_sweep(), small_sweep()
    assert a == b


def test_sweep_overlay_consistent():
    sweep = small_sweep()
    assert len(sweep.selected) == 1
    sel = sweep.selected[0]
    assert sel.label == "acvl"
    assert sel.alpha in [pt.alpha for pt in sweep.points]
    assert sel.nmse >= sweep.oracle_nmse


def test_sweep_oracle_needs_less_shrinkage_with_more_samples():
    # The pull toward the target should fade as sampling noise falls.
    # At n = 2p the best grid coefficient is still large (about 0.65 for
    # this geometry); values below one half only show up once n dwarfs p.
    oracles = {}
    for n in (100, 1000):
        spec = EllipticalSpec(
            p=50, n=n, scatter=toeplitz_scatter(50, 0.5),
            radial=RadialLaw("cauchy"), seed=1,
        )
        grid = AlphaGrid.uniform(20, n=n, p=50)
        oracles[n] = nmse_sweep(spec, grid).oracle_alpha
    assert oracles[1000] < oracles[100]
    assert oracles[1000] <= 0.5


def test_sweep_selected_alpha_near_optimal_undersampled():
    spec = EllipticalSpec(
        p=50, n=25, scatter=toeplitz_scatter(50, 0.5),
        radial=RadialLaw("cauchy"), seed=1,
    )
    grid = AlphaGrid.uniform(20, n=25, p=50)
    sweep = nmse_sweep(spec, grid)
    assert sweep.selected[0].nmse <= 1.2 * sweep.oracle_nmse


# ---------------------------------------------------------------------------
# bench


def test_bench_small_instance():
    spec = EllipticalSpec(
        p=4, n=8, scatter=toeplitz_scatter(4, 0.5),
        radial=RadialLaw("cauchy"), seed=2,
    )
    grid = AlphaGrid.uniform(4, n=8, p=4)
    rep = bench_exact_vs_approx(spec, grid)
    assert rep.exact_calls == 4 * 8
    assert rep.approx_calls == 4
    assert rep.exact_calls == rep.approx_calls * 8
    assert rep.speedup > 0
    assert rep.setting.p == 4 and rep.setting.n == 8 and rep.setting.m == 4
    assert rep.setting.gamma == 0.5
    assert rep.setting.radial == "cauchy"


def test_bench_gamma_unknown_for_free_form_scatter():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4))
    S = ScatterMatrix(A @ A.T + 4 * np.eye(4))
    spec = EllipticalSpec(p=4, n=8, scatter=S, seed=2)
    grid = AlphaGrid.uniform(3, n=8, p=4)
    rep = bench_exact_vs_approx(spec, grid)
    assert np.isnan(rep.setting.gamma)
