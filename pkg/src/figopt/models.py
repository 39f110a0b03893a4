"""Exponential-family response models and their Fisher information.

Four response families are supported: the normal linear model with a
monomial regression function, Poisson and logistic GLMs sharing the same
regression machinery, and a two-exponential compartmental model with
normally distributed errors.  Each family exposes the mean function, its
gradient with respect to the parameters, and the response variance; the
module-level helpers assemble the n-by-p Jacobian ``M`` of the mean over a
whole design and the Fisher information matrix ``M' W M``.

All model objects are immutable and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import DegenerateVarianceError, DomainError, InputError

__all__ = [
    "DesignSpace",
    "Design",
    "RegressionSpec",
    "KnownScale",
    "ScaleOfInterest",
    "NuisanceIGScale",
    "ScaleSpec",
    "NormalLinear",
    "PoissonGLM",
    "LogisticGLM",
    "CompartmentalNormal",
    "ModelSpec",
    "eval_regression",
    "build_M",
    "fisher_information",
]


def _as_point(d, k: int | None = None) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.ndim != 1:
        raise InputError(f"control point must be 1-D, got shape {d.shape}")
    if k is not None and d.shape[0] != k:
        raise InputError(f"control point has length {d.shape[0]}, expected {k}")
    return d


def _as_points(points, k: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2:
        raise InputError(f"points must be an (m, k) array, got shape {pts.shape}")
    if k is not None and pts.shape[1] != k:
        raise InputError(f"points have dimension {pts.shape[1]}, expected {k}")
    return pts


def _as_theta(theta, p: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (p,):
        raise InputError(f"theta has shape {theta.shape}, expected ({p},)")
    if not np.all(np.isfinite(theta)):
        raise InputError("theta contains non-finite entries")
    return theta


@dataclass(frozen=True, eq=False)
class DesignSpace:
    """Box constraints for the controllable variables.

    ``bounds[r] = (a_r, b_r)`` with ``a_r < b_r`` for each of the k
    controllable variables.
    """

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        norm = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(norm) < 1:
            raise InputError("design space needs at least one variable")
        for r, (a, b) in enumerate(norm):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise InputError(f"bounds for variable {r} are not finite")
            if not a < b:
                raise InputError(f"bounds for variable {r} must satisfy a < b, got ({a}, {b})")
        object.__setattr__(self, "bounds", norm)

    @property
    def k(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.bounds])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, d, atol: float = 0.0) -> bool:
        d = _as_point(d, self.k)
        return bool(np.all(d >= self.lower - atol) and np.all(d <= self.upper + atol))

    def clip(self, points: np.ndarray) -> np.ndarray:
        """Project points onto the box, exactly attaining bounds."""
        return np.clip(points, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class Design:
    """An ordered list of n control points, one per experimental run."""

    points: np.ndarray  # (n, k)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InputError(f"design must be an (n, k) array with n >= 1, got shape {pts.shape}")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class RegressionSpec:
    """Monomial regression function given by a k-by-p exponent matrix.

    Component j of the regression vector is ``prod_r d_r ** exponents[r, j]``.
    The convention 0**0 = 1 makes intercept columns valid at d = 0.
    """

    exponents: np.ndarray  # (k, p) non-negative integers

    def __post_init__(self):
        expo = np.asarray(self.exponents)
        if expo.ndim != 2:
            raise InputError(f"exponent matrix must be 2-D, got shape {expo.shape}")
        if not np.issubdtype(expo.dtype, np.integer):
            as_int = expo.astype(int)
            if not np.array_equal(as_int, expo):
                raise InputError("exponents must be integers")
            expo = as_int
        if np.any(expo < 0):
            raise InputError("exponents must be non-negative")
        if expo.shape[1] < 1:
            raise InputError("regression needs at least one column")
        cols = {tuple(col) for col in expo.T}
        if len(cols) != expo.shape[1]:
            raise InputError("exponent matrix columns must be pairwise distinct")
        expo = np.ascontiguousarray(expo)
        expo.setflags(write=False)
        object.__setattr__(self, "exponents", expo)

    @property
    def k(self) -> int:
        return self.exponents.shape[0]

    @property
    def p(self) -> int:
        return self.exponents.shape[1]

    def features(self, d) -> np.ndarray:
        """Regression vector f(d), length p."""
        return self.features_batch(_as_point(d, self.k)[None, :])[0]

    def features_batch(self, points: np.ndarray) -> np.ndarray:
        """Regression vectors for an (m, k) array of points, as (m, p)."""
        pts = _as_points(points, self.k)
        # 0.0 ** 0 evaluates to 1.0, which is exactly the intercept convention.
        return np.prod(pts[:, :, None] ** self.exponents[None, :, :], axis=1)


@dataclass(frozen=True)
class KnownScale:
    """Scale parameter fixed at a known positive value."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"known scale must be positive, got {self.gamma}")


@dataclass(frozen=True)
class ScaleOfInterest:
    """Scale parameter unknown and itself a target of inference."""


@dataclass(frozen=True)
class NuisanceIGScale:
    """Unknown nuisance scale with an IG(s1/2, s2/2) prior."""

    s1: float
    s2: float

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise InputError(f"IG hyperparameters must be positive, got ({self.s1}, {self.s2})")


ScaleSpec = Union[KnownScale, ScaleOfInterest, NuisanceIGScale]


def _resolve_known_gamma(scale: ScaleSpec, gamma: float | None) -> float:
    if gamma is not None:
        if not gamma > 0:
            raise InputError(f"scale must be positive, got {gamma}")
        return float(gamma)
    if isinstance(scale, KnownScale):
        return scale.gamma
    raise InputError("scale parameter is unknown for this model; pass gamma explicitly")


@dataclass(frozen=True, eq=False)
class NormalLinear:
    """Normal response with mean f(d)'theta and variance gamma."""

    regression: RegressionSpec
    scale: ScaleSpec

    @property
    def p(self) -> int:
        return self.regression.p

    @property
    def k(self) -> int:
        return self.regression.k

    def mean(self, theta, d) -> float:
        return float(self.mean_batch(theta, _as_point(d, self.k)[None, :])[0])

    def mean_batch(self, theta, points) -> np.ndarray:
        theta = _as_theta(theta, self.p)
        return self.regression.features_batch(points) @ theta

    def mean_gradient(self, theta, d) -> np.ndarray:
        _as_theta(theta, self.p)
        return self.regression.features(d)

    def gradient_batch(self, theta, points) -> np.ndarray:
        _as_theta(theta, self.p)
        return self.regression.features_batch(points)

    def variance(self, theta, d, gamma: float | None = None) -> float:
        return float(self.variance_batch(theta, _as_point(d, self.k)[None, :], gamma)[0])

    def variance_batch(self, theta, points, gamma: float | None = None) -> np.ndarray:
        g = _resolve_known_gamma(self.scale, gamma)
        pts = _as_points(points, self.k)
        return np.full(pts.shape[0], g)


@dataclass(frozen=True, eq=False)
class PoissonGLM:
    """Poisson response with log link: mean exp(f(d)'theta), scale fixed at 1."""

    regression: RegressionSpec

    @property
    def p(self) -> int:
        return self.regression.p

    @property
    def k(self) -> int:
        return self.regression.k

    @property
    def scale(self) -> KnownScale:
        return KnownScale(1.0)

    def mean(self, theta, d) -> float:
        return float(self.mean_batch(theta, _as_point(d, self.k)[None, :])[0])

    def mean_batch(self, theta, points) -> np.ndarray:
        theta = _as_theta(theta, self.p)
        return np.exp(self.regression.features_batch(points) @ theta)

    def mean_gradient(self, theta, d) -> np.ndarray:
        return self.gradient_batch(theta, _as_point(d, self.k)[None, :])[0]

    def gradient_batch(self, theta, points) -> np.ndarray:
        F = self.regression.features_batch(points)
        mu = np.exp(F @ _as_theta(theta, self.p))
        return mu[:, None] * F

    def variance(self, theta, d, gamma: float | None = None) -> float:
        return float(self.variance_batch(theta, _as_point(d, self.k)[None, :], gamma)[0])

    def variance_batch(self, theta, points, gamma: float | None = None) -> np.ndarray:
        _check_unit_scale(gamma)
        return self.mean_batch(theta, points)


@dataclass(frozen=True, eq=False)
class LogisticGLM:
    """Bernoulli response with logit link, scale fixed at 1."""

    regression: RegressionSpec

    @property
    def p(self) -> int:
        return self.regression.p

    @property
    def k(self) -> int:
        return self.regression.k

    @property
    def scale(self) -> KnownScale:
        return KnownScale(1.0)

    def mean(self, theta, d) -> float:
        return float(self.mean_batch(theta, _as_point(d, self.k)[None, :])[0])

    def mean_batch(self, theta, points) -> np.ndarray:
        theta = _as_theta(theta, self.p)
        return expit(self.regression.features_batch(points) @ theta)

    def mean_gradient(self, theta, d) -> np.ndarray:
        return self.gradient_batch(theta, _as_point(d, self.k)[None, :])[0]

    def gradient_batch(self, theta, points) -> np.ndarray:
        F = self.regression.features_batch(points)
        mu = expit(F @ _as_theta(theta, self.p))
        return (mu * (1.0 - mu))[:, None] * F

    def variance(self, theta, d, gamma: float | None = None) -> float:
        return float(self.variance_batch(theta, _as_point(d, self.k)[None, :], gamma)[0])

    def variance_batch(self, theta, points, gamma: float | None = None) -> np.ndarray:
        _check_unit_scale(gamma)
        mu = self.mean_batch(theta, points)
        var = mu * (1.0 - mu)
        if np.any(var == 0.0):
            # A finite linear predictor cannot reach mu in {0, 1} exactly.
            raise DegenerateVarianceError(
                "Bernoulli variance is exactly zero; linear predictor overflowed"
            )
        return var


def _check_unit_scale(gamma: float | None) -> None:
    if gamma is not None and gamma != 1.0:
        raise InputError(f"this family has scale fixed at 1, got gamma={gamma}")


@dataclass(frozen=True, eq=False)
class CompartmentalNormal:
    """Normal response with mean theta3 * (exp(-theta1 d) - exp(-theta2 d)).

    Single controllable variable (sampling time d >= 0); requires
    theta2 > theta1 so uptake is faster than elimination.
    """

    scale: ScaleSpec

    @property
    def p(self) -> int:
        return 3

    @property
    def k(self) -> int:
        return 1

    @staticmethod
    def _check_theta(theta) -> np.ndarray:
        theta = _as_theta(theta, 3)
        if not theta[1] > theta[0]:
            raise DomainError(
                f"compartmental mean requires theta2 > theta1, got ({theta[0]}, {theta[1]})"
            )
        return theta

    def mean(self, theta, d) -> float:
        return float(self.mean_batch(theta, _as_point(d, 1)[None, :])[0])

    def mean_batch(self, theta, points) -> np.ndarray:
        t1, t2, t3 = self._check_theta(theta)
        d = _as_points(points, 1)[:, 0]
        return t3 * (np.exp(-t1 * d) - np.exp(-t2 * d))

    def mean_gradient(self, theta, d) -> np.ndarray:
        return self.gradient_batch(theta, _as_point(d, 1)[None, :])[0]

    def gradient_batch(self, theta, points) -> np.ndarray:
        t1, t2, t3 = self._check_theta(theta)
        d = _as_points(points, 1)[:, 0]
        e1 = np.exp(-t1 * d)
        e2 = np.exp(-t2 * d)
        return np.column_stack((-t3 * d * e1, t3 * d * e2, e1 - e2))

    def variance(self, theta, d, gamma: float | None = None) -> float:
        return float(self.variance_batch(theta, _as_point(d, 1)[None, :], gamma)[0])

    def variance_batch(self, theta, points, gamma: float | None = None) -> np.ndarray:
        g = _resolve_known_gamma(self.scale, gamma)
        pts = _as_points(points, 1)
        return np.full(pts.shape[0], g)


ModelSpec = Union[NormalLinear, PoissonGLM, LogisticGLM, CompartmentalNormal]


def eval_regression(spec: RegressionSpec, d) -> np.ndarray:
    """Evaluate the monomial regression vector f(d)."""
    return spec.features(d)


def build_M(model: ModelSpec, theta, design: Design) -> np.ndarray:
    """Jacobian of the mean function over a design: row i is the gradient at run i."""
    if design.k != model.k:
        raise InputError(f"design has k={design.k}, model expects k={model.k}")
    return model.gradient_batch(theta, design.points)


def fisher_information(model: ModelSpec, theta, design: Design, gamma: float | None = None) -> np.ndarray:
    """Fisher information M' W M with W the diagonal of reciprocal variances.

    Requires a known-scale context: either the model's scale is known, or an
    explicit positive ``gamma`` is supplied.  The result is symmetrised so
    callers can rely on exact symmetry.
    """
    M = build_M(model, theta, design)
    w = 1.0 / model.variance_batch(theta, design.points, gamma)
    info = M.T @ (w[:, None] * M)
    return 0.5 * (info + info.T)
