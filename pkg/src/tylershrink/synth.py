"""Synthetic elliptical sample generation with coupled random sub-streams.

Draws follow the stochastic representation z = u * (y @ L'), where y is a
uniform direction on the unit sphere, L is the Cholesky factor of the
scatter matrix, and u is a positive radial scale. Directions and radii
come from independent counter based sub-streams of one seed, so changing
the radial law never perturbs the directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .rng import DIRECTION_STREAM, RADIAL_STREAM, substream
from .scatter import ScatterMatrix

_LAW_KINDS = ("constant", "student", "laplace", "cauchy")


@dataclass(frozen=True)
class RadialLaw:
    """Distribution of the positive radial scale u.

    Attributes
    ----------
    kind : str
        One of 'constant', 'student', 'laplace', 'cauchy'.
    dof : float or None
        Degrees of freedom, required for 'student' and meaningless
        otherwise.
    """

    kind: str
    dof: float | None = None

    def __post_init__(self):
        if self.kind not in _LAW_KINDS:
            raise ValueError(f"unknown radial law {self.kind!r}, expected one of {_LAW_KINDS}")
        if self.kind == "student":
            if self.dof is None or not (self.dof > 0):
                raise ValueError("student radial law needs dof > 0")
        elif self.dof is not None:
            raise ValueError(f"radial law {self.kind!r} takes no dof")

    @classmethod
    def parse(cls, text: str) -> "RadialLaw":
        """Parse a law name such as 'constant', 'cauchy' or 'student:3'.

        'gaussian' is accepted as an alias for 'constant': a constant
        radius times a uniform direction has the same directional law as
        a Gaussian draw, and only directions matter downstream.
        """
        text = text.strip().lower()
        if text == "gaussian":
            return cls("constant")
        if ":" in text:
            name, _, arg = text.partition(":")
            if name != "student":
                raise ValueError(f"only the student law takes a parameter, got {text!r}")
            try:
                dof = float(arg)
            except ValueError:
                raise ValueError(f"bad degrees of freedom {arg!r} in {text!r}") from None
            return cls("student", dof)
        return cls(text)

    def label(self) -> str:
        if self.kind == "student":
            d = self.dof
            return f"student:{d:g}"
        return self.kind

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n positive radial scales.

        The heavy tailed laws go through inverse CDF transforms of the
        same uniform block, so a fixed sub-stream state yields coupled
        radii across laws. The constant law consumes no randomness.
        """
        if self.kind == "constant":
            return np.ones(n)
        if self.kind == "student":
            # u^2 ~ d / chi2_d gives multivariate t radial behavior.
            chi2 = rng.chisquare(self.dof, size=n)
            return np.sqrt(self.dof / np.maximum(chi2, 1e-300))
        u = rng.random(n)
        if self.kind == "laplace":
            # |Laplace(0,1)| is Exp(1); -log1p(-u) maps [0,1) to finite values.
            return -np.log1p(-u)
        # Half Cauchy inverse CDF; u in [0,1) keeps the tangent finite.
        return np.tan(0.5 * np.pi * u)


@dataclass(frozen=True)
class EllipticalSpec:
    """Full description of one synthetic draw."""

    p: int
    n: int
    scatter: ScatterMatrix
    radial: RadialLaw = field(default_factory=lambda: RadialLaw("constant"))
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError(f"need p >= 1 and n >= 1, got p={self.p}, n={self.n}")
        if self.scatter.p != self.p:
            raise ValueError(f"scatter has p={self.scatter.p}, spec says p={self.p}")


@dataclass
class RawSamples:
    """Generated rows plus the spec that produced them.

    ``directions`` holds the unit directions z_i / ||z_i||, computed from
    the pre-radial rows so they are bit identical across radial laws
    sharing a seed. ``normalize_samples`` picks them up when present.
    """

    rows: np.ndarray
    origin: EllipticalSpec
    directions: np.ndarray | None = None


def toeplitz_scatter(p: int, gamma: float) -> ScatterMatrix:
    """Toeplitz correlation scatter with entries gamma^|i-j|.

    Positive definite on the whole domain gamma in [0, 1); gamma = 0
    gives the identity and gamma -> 1 approaches a singular matrix.
    """
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    col = gamma ** np.arange(p)
    return ScatterMatrix(toeplitz(col))


def sample_elliptical(spec: EllipticalSpec) -> RawSamples:
    """Draw n rows from the elliptical law described by ``spec``.

    Directions come from normalized Gaussian draws on sub-stream 0 and
    radii from sub-stream 1, so two specs differing only in the radial
    law produce rows with bit identical directions.
    """
    dir_rng = substream(spec.seed, DIRECTION_STREAM)
    g = dir_rng.standard_normal((spec.n, spec.p))
    norms = np.linalg.norm(g, axis=1)
    if (norms == 0.0).any():
        raise ValueError("degenerate zero norm Gaussian draw; try another seed")
    y = g / norms[:, None]
    v = y @ spec.scatter.factor.T
    vnorms = np.linalg.norm(v, axis=1)
    if (vnorms == 0.0).any():
        raise ValueError("scatter factor collapsed a direction to zero")
    directions = v / vnorms[:, None]
    rad_rng = substream(spec.seed, RADIAL_STREAM)
    u = spec.radial.draw(spec.n, rad_rng)
    rows = u[:, None] * v
    if not np.isfinite(rows).all():
        raise ValueError("non finite sample rows; radial law produced an overflow")
    return RawSamples(rows=rows, origin=spec, directions=directions)
