"""Cubic B-spline bases with quartile interior knots.

One basis engine serves both the non-linear hazard transformations of the
Cox models and the time effect of the mixed model.  Inside the boundary the
basis is evaluated with the Cox-de Boor recursion; outside it continues the
boundary polynomial pieces linearly, so landmark features beyond the
training range never blow up cubically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularDesignError, ValidationError

DEGREE = 3  # cubic, fixed


def quantile_knots(values, probs=(0.25, 0.5, 0.75)):
    """Interior knots at empirical quantiles (type-7 definition).

    Raises if the sample is too small or the quantiles coincide.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 4:
        raise ValidationError("need at least 4 values to place quantile knots")
    knots = np.quantile(values, probs)
    if np.unique(knots).size != len(knots):
        raise SingularDesignError(
            "coincident knots: sample quantiles are not distinct",
            knots=knots.tolist(),
        )
    return tuple(float(k) for k in knots)


@dataclass(frozen=True)
class SplineBasis:
    """Clamped cubic B-spline basis on ``[boundary[0], boundary[1]]``.

    ``include_intercept`` keeps the full partition-of-unity basis; dropping
    it removes the first column (absorbed by an explicit intercept or by
    the Cox baseline hazard).
    """

    interior_knots: tuple
    boundary: tuple
    include_intercept: bool = True

    def __post_init__(self):
        lo, hi = self.boundary
        if not lo < hi:
            raise ValidationError("boundary knots must satisfy min < max")
        interior = tuple(float(k) for k in self.interior_knots)
        if any(not lo < k < hi for k in interior):
            raise ValidationError("interior knots must lie strictly inside the boundary")
        if list(interior) != sorted(set(interior)):
            raise SingularDesignError("coincident or unordered interior knots", knots=interior)
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "boundary", (float(lo), float(hi)))

    @classmethod
    def from_sample(cls, values, probs=(0.25, 0.5, 0.75), include_intercept=True):
        """Basis with quartile interior knots and sample min/max boundary."""
        values = np.asarray(values, dtype=float)
        knots = quantile_knots(values, probs)
        return cls(knots, (float(values.min()), float(values.max())), include_intercept)

    @property
    def n_basis(self):
        n = len(self.interior_knots) + DEGREE + 1
        return n if self.include_intercept else n - 1

    @property
    def knot_vector(self):
        lo, hi = self.boundary
        return np.asarray([lo] * (DEGREE + 1) + list(self.interior_knots) + [hi] * (DEGREE + 1))


def _all_basis_inside(basis, x):
    """Full-basis rows (including intercept column) for points inside the boundary."""
    t = basis.knot_vector
    n_full = len(basis.interior_knots) + DEGREE + 1
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, n_full))
    if x.size == 0:
        return out
    # knot span such that t[span] <= x < t[span+1]; right boundary uses last span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, DEGREE, n_full - 1)
    # Cox-de Boor triangular scheme, vectorised over points
    nval = np.zeros((x.size, DEGREE + 1))
    left = np.zeros((x.size, DEGREE + 1))
    right = np.zeros((x.size, DEGREE + 1))
    nval[:, 0] = 1.0
    for j in range(1, DEGREE + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom > 0, nval[:, r] / np.where(denom > 0, denom, 1.0), 0.0)
            nval[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        nval[:, j] = saved
    cols = span[:, None] - DEGREE + np.arange(DEGREE + 1)[None, :]
    np.put_along_axis(out, cols, nval, axis=1)
    return out


def _all_basis_deriv_inside(basis, x):
    """First-derivative rows of the full basis for points inside the boundary."""
    t = basis.knot_vector
    n_full = len(basis.interior_knots) + DEGREE + 1
    x = np.asarray(x, dtype=float)
    # derivative of a degree-3 B-spline is a difference of degree-2 splines
    rows2 = _basis_lower_degree(t, x, n_full)
    out = np.zeros((x.size, n_full))
    for i in range(n_full):
        d1 = t[i + DEGREE] - t[i]
        d2 = t[i + DEGREE + 1] - t[i + 1]
        if d1 > 0:
            out[:, i] += DEGREE / d1 * rows2[:, i]
        if d2 > 0:
            out[:, i] -= DEGREE / d2 * rows2[:, i + 1]
    return out


def _basis_lower_degree(t, x, n_full):
    """Degree-2 basis values on the cubic knot vector (helper for derivatives)."""
    deg = DEGREE - 1
    n2 = n_full + 1  # number of degree-2 splines on the same knot vector
    out = np.zeros((x.size, n2))
    if x.size == 0:
        return out
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, DEGREE, n_full - 1)
    nval = np.zeros((x.size, deg + 1))
    left = np.zeros((x.size, deg + 1))
    right = np.zeros((x.size, deg + 1))
    nval[:, 0] = 1.0
    for j in range(1, deg + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom > 0, nval[:, r] / np.where(denom > 0, denom, 1.0), 0.0)
            nval[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        nval[:, j] = saved
    cols = span[:, None] - deg + np.arange(deg + 1)[None, :]
    np.put_along_axis(out, cols, nval, axis=1)
    return out


def eval_basis(basis, x):
    """Design matrix of the basis at ``x`` (scalar or 1-d array).

    Points outside the boundary are extrapolated linearly from the value and
    slope at the nearest boundary, so the second derivative vanishes there.
    """
    scalar = np.isscalar(x)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValidationError("spline evaluation requires finite inputs")
    lo, hi = basis.boundary
    inside = (x >= lo) & (x <= hi)
    out = np.empty((x.size, len(basis.interior_knots) + DEGREE + 1))
    out[inside] = _all_basis_inside(basis, x[inside])
    for bound, sel in ((lo, x < lo), (hi, x > hi)):
        if np.any(sel):
            b = np.asarray([bound])
            val = _all_basis_inside(basis, b)
            der = _all_basis_deriv_inside(basis, b)
            out[sel] = val + (x[sel, None] - bound) * der
    if not basis.include_intercept:
        out = out[:, 1:]
    return out[0] if scalar else out
