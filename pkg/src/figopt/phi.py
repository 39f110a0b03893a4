"""The reduced per-run design objective and the expected information gain.

For exponential-family models the expected gain in Fisher information of a
whole design is a sum of identical per-run contributions phi(d), so design
search collapses to maximising phi over the k-dimensional design space.
This module evaluates phi in three regimes:

* known scale: phi(d) = sum_j E_theta[ (dmu/dtheta_j)^2 / var(y|theta, d) ]
* scale of interest: the same sum with the expectation extended over the
  scale; its own information entry is design-free and dropped.
* nuisance scale, normal response, inverse-gamma prior:
  phi(d) = sum_j E_theta[ (dmu/dtheta_j)^2 ]; the IG hyperparameters enter
  the expected gain only through a constant factor a(a+n) / (b(a+n+2)).

Expectations use a tensor quadrature rule over the prior, except for the
normal linear family whose gradient is parameter-free and evaluates in
closed form.  Vectorised batch evaluation over many candidate points is the
hot path for the multistart optimizer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EvaluationError, InputError
from .models import (
    CompartmentalNormal,
    Design,
    KnownScale,
    LogisticGLM,
    ModelSpec,
    NormalLinear,
    NuisanceIGScale,
    PoissonGLM,
    RegressionSpec,
    ScaleOfInterest,
    _as_point,
    _as_points,
)
from .priors import PriorSpec, QuadratureRule, quadrature_rule

__all__ = [
    "Regime",
    "PhiEvaluator",
    "phi_known_scale",
    "phi_nuisance_normal",
    "phi_closed_linear",
    "phi_closed_poisson",
    "expected_fig",
    "phi_curve",
    "write_phi_curve",
]

# Elements per chunk when sweeping node-by-point matrices.
_CHUNK_ELEMENTS = 4_000_000


class Regime(enum.Enum):
    KNOWN_SCALE = "known-scale"
    SCALE_OF_INTEREST = "scale-of-interest"
    NUISANCE_NORMAL_IG = "nuisance-normal-ig"


def _regime_for(model: ModelSpec) -> Regime:
    scale = model.scale
    if isinstance(scale, KnownScale):
        return Regime.KNOWN_SCALE
    if isinstance(scale, ScaleOfInterest):
        return Regime.SCALE_OF_INTEREST
    if isinstance(scale, NuisanceIGScale):
        if not isinstance(model, (NormalLinear, CompartmentalNormal)):
            raise InputError("nuisance-scale regime requires a normal-response family")
        return Regime.NUISANCE_NORMAL_IG
    raise InputError(f"unrecognised scale spec {scale!r}")


@dataclass(frozen=True, eq=False)
class PhiEvaluator:
    """A compiled objective phi(d), deterministic and safe to share.

    ``rule`` is None when the objective has a closed form that needs no
    quadrature (normal linear family, whose mean gradient is f(d) for
    every theta).
    """

    model: ModelSpec
    prior: PriorSpec
    rule: QuadratureRule | None
    regime: Regime

    @classmethod
    def build(
        cls,
        model: ModelSpec,
        prior: PriorSpec,
        quad_order: int = 8,
        node_cap: int | None = None,
    ) -> "PhiEvaluator":
        if prior.p != model.p:
            raise InputError(f"prior has {prior.p} components, model has p={model.p}")
        regime = _regime_for(model)
        if regime is Regime.SCALE_OF_INTEREST and prior.scale_prior is None:
            raise InputError("scale-of-interest regime needs prior.scale_prior")
        if isinstance(model, NormalLinear):
            rule = None
        else:
            kwargs = {} if node_cap is None else {"node_cap": node_cap}
            rule = quadrature_rule(prior, quad_order, **kwargs)
        return cls(model=model, prior=prior, rule=rule, regime=regime)

    @property
    def k(self) -> int:
        return self.model.k

    def phi(self, d) -> float:
        return float(self.phi_batch(_as_point(d, self.k)[None, :])[0])

    def phi_batch(self, points) -> np.ndarray:
        pts = _as_points(points, self.k)
        if self.regime is Regime.NUISANCE_NORMAL_IG:
            values = _squared_gradient_expectation(self, pts)
        else:
            values = _known_scale_batch(self, pts)
        if not np.all(np.isfinite(values)):
            bad = pts[int(np.argmax(~np.isfinite(values)))]
            raise EvaluationError(f"phi is not finite at d={bad.tolist()}")
        return values


def phi_known_scale(ev: PhiEvaluator, d) -> float:
    """phi under a known (or of-interest) scale; always >= 0."""
    if ev.regime not in (Regime.KNOWN_SCALE, Regime.SCALE_OF_INTEREST):
        raise InputError(f"evaluator regime is {ev.regime.value}, not a known-scale one")
    return ev.phi(d)


def phi_nuisance_normal(ev: PhiEvaluator, d) -> float:
    """phi for normal responses with an IG nuisance scale."""
    if ev.regime is not Regime.NUISANCE_NORMAL_IG:
        raise InputError(f"evaluator regime is {ev.regime.value}, not nuisance-scale")
    return ev.phi(d)


def _known_scale_batch(ev: PhiEvaluator, pts: np.ndarray) -> np.ndarray:
    base = _squared_gradient_over_variance(ev, pts)
    if ev.regime is Regime.SCALE_OF_INTEREST:
        # The scale's own diagonal information entry does not depend on the
        # design and is dropped; what is left is the theta-sum averaged over
        # the scale prior as well, which for the normal families contributes
        # E[1/gamma] = s1/s2 under IG(s1/2, s2/2).
        sp = ev.prior.scale_prior
        if isinstance(ev.model, (NormalLinear, CompartmentalNormal)):
            return base * (sp.s1 / sp.s2)
    return base


def _squared_gradient_over_variance(ev: PhiEvaluator, pts: np.ndarray) -> np.ndarray:
    """sum_j E[(dmu/dtheta_j)^2 / var], vectorised over points."""
    model = ev.model
    if isinstance(model, NormalLinear):
        gamma = model.scale.gamma if isinstance(model.scale, KnownScale) else 1.0
        F = model.regression.features_batch(pts)
        return np.einsum("ij,ij->i", F, F) / gamma
    if isinstance(model, (PoissonGLM, LogisticGLM)):
        # Squared gradient over variance collapses to var(y) * f_j(d)^2 for
        # the canonical links, so only E[var] is integrated numerically.
        F = model.regression.features_batch(pts)
        ssq = np.einsum("ij,ij->i", F, F)
        return _glm_variance_expectation(model, ev.rule, F) * ssq
    if isinstance(model, CompartmentalNormal):
        gamma = model.scale.gamma if isinstance(model.scale, KnownScale) else 1.0
        return _compartmental_sumsq(ev.rule, pts) / gamma
    raise InputError(f"unsupported model {type(model).__name__}")


def _squared_gradient_expectation(ev: PhiEvaluator, pts: np.ndarray) -> np.ndarray:
    """sum_j E[(dmu/dtheta_j)^2], vectorised over points."""
    model = ev.model
    if isinstance(model, NormalLinear):
        F = model.regression.features_batch(pts)
        return np.einsum("ij,ij->i", F, F)
    if isinstance(model, CompartmentalNormal):
        return _compartmental_sumsq(ev.rule, pts)
    raise InputError(f"nuisance-scale phi is undefined for {type(model).__name__}")


def _glm_variance_expectation(model, rule: QuadratureRule, F: np.ndarray) -> np.ndarray:
    """E_theta[var(y | theta, d)] for each row of the feature matrix F."""
    m = F.shape[0]
    out = np.empty(m)
    step = max(1, _CHUNK_ELEMENTS // max(1, rule.size))
    poisson = isinstance(model, PoissonGLM)
    nodes_T = rule.nodes.T
    for lo in range(0, m, step):
        eta = F[lo : lo + step] @ nodes_T
        if poisson:
            w = np.exp(eta)
        else:
            mu = expit(eta)
            w = mu * (1.0 - mu)
        out[lo : lo + step] = w @ rule.weights
    return out


def _compartmental_sumsq(rule: QuadratureRule, pts: np.ndarray) -> np.ndarray:
    """E_theta[ sum_j (dmu/dtheta_j)^2 ] for the compartmental mean."""
    d = pts[:, 0]
    t1 = rule.nodes[:, 0][None, :]
    t2 = rule.nodes[:, 1][None, :]
    t3 = rule.nodes[:, 2][None, :]
    dc = d[:, None]
    e1 = np.exp(-t1 * dc)
    e2 = np.exp(-t2 * dc)
    diff = e1 - e2
    g = (t3 * dc) ** 2 * (e1 * e1 + e2 * e2) + diff * diff
    return g @ rule.weights


def phi_closed_linear(spec: RegressionSpec, d) -> float:
    """Closed-form phi for the normal linear family: sum_j f_j(d)^2."""
    f = spec.features(d)
    return float(f @ f)


def phi_closed_poisson(spec: RegressionSpec, sigma2, d) -> float:
    """Closed-form phi for the Poisson family under independent N(0, sigma_j^2) priors."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.shape != (spec.p,):
        raise InputError(f"sigma2 has shape {sigma2.shape}, expected ({spec.p},)")
    if np.any(sigma2 <= 0):
        raise InputError("prior variances must be positive")
    f = spec.features(d)
    fsq = f * f
    return float(np.exp(0.5 * np.dot(sigma2, fsq)) * fsq.sum())


def expected_fig(ev: PhiEvaluator, design: Design) -> float:
    """Expected Fisher information gain of a whole design.

    Additive over runs; under the IG nuisance scale the sum is multiplied by
    a(a+n) / (b(a+n+2)) with (a, b) the IG spec's (s1, s2).
    """
    if design.k != ev.k:
        raise InputError(f"design has k={design.k}, evaluator expects k={ev.k}")
    total = float(ev.phi_batch(design.points).sum())
    if ev.regime is Regime.NUISANCE_NORMAL_IG:
        a, b = ev.model.scale.s1, ev.model.scale.s2
        n = design.n
        total *= a * (a + n) / (b * (a + n + 2))
    return total


def grid_1d(lo: float, hi: float, step: float) -> np.ndarray:
    """Inclusive 1-D grid with endpoints attained exactly."""
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise InputError(f"grid needs lo < hi, got ({lo}, {hi})")
    if not step > 0:
        raise InputError(f"grid step must be positive, got {step}")
    count = int(round((hi - lo) / step))
    if count < 1:
        raise InputError("grid step larger than the interval")
    return np.linspace(lo, hi, count + 1)


def phi_curve(
    ev: PhiEvaluator,
    lo: float,
    hi: float,
    step: float,
    fixed: dict[int, float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """phi along a 1-D grid; for k > 1 all but one coordinate must be fixed.

    ``fixed`` maps zero-based coordinate indices to pinned values; the single
    unfixed coordinate sweeps the grid.
    """
    fixed = dict(fixed or {})
    k = ev.k
    free = [r for r in range(k) if r not in fixed]
    if len(free) != 1:
        raise InputError(f"need exactly one free coordinate, got {len(free)} of k={k}")
    if any(r < 0 or r >= k for r in fixed):
        raise InputError(f"fixed coordinate index out of range for k={k}")
    d = grid_1d(lo, hi, step)
    pts = np.empty((d.shape[0], k))
    for r, v in fixed.items():
        pts[:, r] = float(v)
    pts[:, free[0]] = d
    return d, ev.phi_batch(pts)


def write_phi_curve(
    ev: PhiEvaluator,
    lo: float,
    hi: float,
    step: float,
    path,
    fixed: dict[int, float] | None = None,
) -> int:
    """Write the phi curve as CSV (`d,phi`, 12 significant digits). Returns row count."""
    d, values = phi_curve(ev, lo, hi, step, fixed=fixed)
    with open(path, "w", newline="\n") as fh:
        fh.write("d,phi\n")
        for x, v in zip(d, values):
            fh.write(f"{x:.12g},{v:.12g}\n")
    return d.shape[0]
