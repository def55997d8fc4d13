"""Outcome basis functions and the treatment-indicator expansion."""

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateBasisError


@dataclass(frozen=True)
class BasisSpec:
    """Which outcome functions span the projection space.

    ``family`` is ``"natural_spline"`` (knots at equally spaced sample
    quantiles of Yd, boundary knots at its range), ``"polynomial"`` (powers
    1..xi of the standardised outcome) or ``"indicator"`` (one column per
    distinct outcome value, xi ignored). ``history`` chooses how the
    projection coefficients vary: ``"saturated"`` over history strata or
    ``"constant"``.
    """

    xi: int = 6
    family: str = "natural_spline"
    history: str = "saturated"

    def __post_init__(self):
        if self.family not in ("natural_spline", "polynomial", "indicator"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.history not in ("saturated", "constant"):
            raise ValueError(f"unknown history family {self.history!r}")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")


class NaturalSpline:
    """Natural cubic spline basis without intercept, ``df`` columns.

    Built as a cubic B-spline basis on the augmented knot vector with the
    first function dropped, then restricted to the null space of the second
    derivative at both boundary knots.
    """

    def __init__(self, knots, boundary):
        self.knots = np.asarray(knots, dtype=np.float64)
        self.boundary = (float(boundary[0]), float(boundary[1]))
        lo, hi = self.boundary
        self._t = np.concatenate(([lo] * 4, self.knots, [hi] * 4))
        n_b = len(self._t) - 4
        second = np.empty((2, n_b))
        for j in range(n_b):
            c = np.zeros(n_b)
            c[j] = 1.0
            d2 = BSpline(self._t, c, 3, extrapolate=True).derivative(2)
            second[:, j] = d2(np.array([lo, hi]))
        second = second[:, 1:]
        q, _ = np.linalg.qr(second.T, mode="complete")
        self._null = q[:, 2:]

    @classmethod
    def from_sample(cls, y, df):
        y = np.asarray(y, dtype=np.float64)
        probs = np.linspace(0.0, 1.0, df + 1)[1:-1]
        knots = np.quantile(y, probs) if df > 1 else np.zeros(0)
        return cls(knots, (y.min(), y.max()))

    @property
    def df(self):
        return self._null.shape[1]

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        lo, hi = self.boundary
        inside = np.clip(y, lo, hi)
        B = BSpline.design_matrix(inside, self._t, 3).toarray()[:, 1:]
        out = B @ self._null
        # linear continuation beyond the boundary knots
        outside = (y < lo) | (y > hi)
        if outside.any():
            eps = 1e-6 * max(hi - lo, 1.0)
            for edge, mask in ((lo, y < lo), (hi, y > hi)):
                if mask.any():
                    pts = np.array([edge, edge + eps if edge == lo else edge - eps])
                    vals = BSpline.design_matrix(pts, self._t, 3).toarray()[:, 1:] @ self._null
                    slope = (vals[1] - vals[0]) / (pts[1] - pts[0])
                    out[mask] = vals[0] + np.outer(y[mask] - edge, slope)
        return out


class Polynomial:
    def __init__(self, degree, center, scale):
        self.degree, self.center, self.scale = degree, center, scale

    @classmethod
    def from_sample(cls, y, degree):
        y = np.asarray(y, dtype=np.float64)
        scale = y.std() or 1.0
        return cls(degree, y.mean(), scale)

    def __call__(self, y):
        z = (np.asarray(y, dtype=np.float64) - self.center) / self.scale
        return np.stack([z ** p for p in range(1, self.degree + 1)], axis=1) if self.degree else \
            np.zeros((len(z), 0))


class Indicator:
    def __init__(self, levels):
        self.levels = np.asarray(levels)

    @classmethod
    def from_sample(cls, y):
        return cls(np.unique(y))

    def __call__(self, y):
        y = np.asarray(y)
        return (y[:, None] == self.levels[None, :]).astype(np.float64)


def fit_outcome_basis(spec, y):
    """Fit knot placement / scaling on ``y``; returns a callable ``phi(y) -> (n, xi)``."""
    if spec.family == "indicator":
        phi = Indicator.from_sample(y)
    elif spec.xi == 0:
        phi = Polynomial(0, 0.0, 1.0)
    elif spec.family == "polynomial":
        phi = Polynomial.from_sample(y, spec.xi)
    else:
        phi = NaturalSpline.from_sample(y, spec.xi)
    values = phi(y)
    if values.shape[1] and spec.family != "indicator":
        if np.linalg.matrix_rank(values) < values.shape[1]:
            raise DegenerateBasisError("outcome basis columns are collinear on this sample")
    return phi


def treatment_combinations(ds, t):
    """Lexicographic list of (S_t, ..., S_K) level combinations."""
    levels = [np.unique(ds.S[:, m]).tolist() for m in range(t, ds.K + 1)]
    return list(product(*levels))


def build_basis_columns(ds, spec, t, phi=None):
    """Columns phi_j(Yd) * 1{(S_t..S_K) = c}, ordered by j then by combination c."""
    phi = fit_outcome_basis(spec, ds.Yd) if phi is None else phi
    F = phi(ds.Yd)
    combos = treatment_combinations(ds, t)
    future = ds.S[:, t:]
    ind = np.stack([np.all(future == np.array(c), axis=1) for c in combos], axis=1).astype(np.float64)
    return (F[:, :, None] * ind[:, None, :]).reshape(ds.n, -1)
