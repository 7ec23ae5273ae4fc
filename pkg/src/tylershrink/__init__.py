"""Robust scatter estimation with data-driven shrinkage selection."""

from .errors import ConvergenceError, CsvFormatError, NotPositiveDefiniteError
from .scatter import (
    FitConfig,
    FitReport,
    ScatterMatrix,
    UnitSamples,
    acg_nll,
    fixed_point_residual,
    normalize_samples,
    rfpi_call_count,
    rtme_fit,
    tme_fit,
    weights,
)
from .synth import (
    EllipticalSpec,
    RadialLaw,
    RawSamples,
    sample_elliptical,
    toeplitz_scatter,
)
from .cvl import (
    AlphaGrid,
    BisectionResult,
    CvlCurve,
    CvlPoint,
    approx_cvl,
    approx_leave_one_out_scatter,
    exact_cvl,
    select_alpha_bisection,
    select_alpha_grid,
)
from .metrics import (
    BenchReport,
    BenchSetting,
    NmsePoint,
    NmseSweep,
    SelectedAlpha,
    bench_exact_vs_approx,
    nmse,
    nmse_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaGrid",
    "BenchReport",
    "BenchSetting",
    "BisectionResult",
    "ConvergenceError",
    "CsvFormatError",
    "CvlCurve",
    "CvlPoint",
    "EllipticalSpec",
    "FitConfig",
    "FitReport",
    "NmsePoint",
    "NmseSweep",
    "NotPositiveDefiniteError",
    "RadialLaw",
    "RawSamples",
    "ScatterMatrix",
    "SelectedAlpha",
    "UnitSamples",
    "acg_nll",
    "approx_cvl",
    "approx_leave_one_out_scatter",
    "bench_exact_vs_approx",
    "exact_cvl",
    "fixed_point_residual",
    "nmse",
    "nmse_sweep",
    "normalize_samples",
    "rfpi_call_count",
    "rtme_fit",
    "sample_elliptical",
    "select_alpha_bisection",
    "select_alpha_grid",
    "tme_fit",
    "toeplitz_scatter",
    "weights",
]
