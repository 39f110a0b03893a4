"""Independent parameter priors, sampling, and tensor-product quadrature.

Prior expectations are approximated by Gaussian quadrature matched to each
marginal: Gauss-Legendre on uniform components, Gauss-Hermite on normal
components, and a single node for point masses.  Per-component rules are
combined by tensor product and the weights normalised to a probability
measure, so ``expect`` returns prior expectations directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Callable, Sequence, Union

import numpy as np

from .errors import CapacityError, EvaluationError, InputError
from .models import NuisanceIGScale

__all__ = [
    "NormalPrior",
    "UniformPrior",
    "PointMassPrior",
    "PriorComponent",
    "PriorSpec",
    "QuadratureRule",
    "sample_prior",
    "quadrature_rule",
    "expect",
    "write_rule_csv",
]

DEFAULT_NODE_CAP = 10_000_000


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise InputError(f"normal prior variance must be positive, got {self.var}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, np.sqrt(self.var), size)

    def rule(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        # Physicists' Hermite nodes; t = mean + sqrt(2 var) x integrates the
        # N(mean, var) density exactly for polynomials of degree <= 2*order-1.
        x, w = np.polynomial.hermite.hermgauss(order)
        return self.mean + np.sqrt(2.0 * self.var) * x, w / np.sqrt(np.pi)


@dataclass(frozen=True)
class UniformPrior:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InputError(f"uniform prior needs lo < hi, got ({self.lo}, {self.hi})")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)

    def rule(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(order)
        mid = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        # Raw Legendre weights sum to the interval length 2; halving makes
        # them a probability measure on [lo, hi].
        return mid + half * x, 0.5 * w


@dataclass(frozen=True)
class PointMassPrior:
    value: float

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.value))

    def rule(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        return np.array([float(self.value)]), np.array([1.0])


PriorComponent = Union[NormalPrior, UniformPrior, PointMassPrior]


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Mutually independent marginal priors, one per model parameter."""

    components: tuple[PriorComponent, ...]
    scale_prior: NuisanceIGScale | None = None

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise InputError("prior needs at least one component")
        object.__setattr__(self, "components", comps)

    @property
    def p(self) -> int:
        return len(self.components)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes (N, p) and probability weights (N,) for prior expectations."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2 or weights.ndim != 1 or nodes.shape[0] != weights.shape[0]:
            raise InputError("rule needs nodes (N, p) and weights (N,)")
        if np.any(weights <= 0):
            raise InputError("quadrature weights must be positive")
        weights = weights / weights.sum()
        weights = np.ascontiguousarray(weights)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def p(self) -> int:
        return self.nodes.shape[1]


def sample_prior(prior: PriorSpec, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` independent parameter vectors, deterministic in ``seed``."""
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return np.column_stack([c.sample(rng, count) for c in prior.components])


def quadrature_rule(
    prior: PriorSpec,
    order: int | Sequence[int],
    node_cap: int = DEFAULT_NODE_CAP,
) -> QuadratureRule:
    """Tensor-product rule over the prior with ``order`` nodes per component.

    ``order`` may be a single integer or one integer per component;
    point-mass components always contribute a single node.
    """
    p = prior.p
    if isinstance(order, (int, np.integer)):
        orders = [int(order)] * p
    else:
        orders = [int(o) for o in order]
        if len(orders) != p:
            raise InputError(f"got {len(orders)} orders for {p} components")
    if any(o < 1 for o in orders):
        raise InputError("quadrature order must be >= 1")

    parts = [c.rule(o) for c, o in zip(prior.components, orders)]
    total = prod(len(nodes) for nodes, _ in parts)
    if total > node_cap:
        raise CapacityError(f"tensor rule would need {total} nodes, cap is {node_cap}")

    node_grids = np.meshgrid(*[nodes for nodes, _ in parts], indexing="ij")
    nodes = np.column_stack([g.reshape(-1) for g in node_grids])
    weight_grids = np.meshgrid(*[w for _, w in parts], indexing="ij")
    weights = np.prod(np.stack([g.reshape(-1) for g in weight_grids]), axis=0)
    return QuadratureRule(nodes=nodes, weights=weights)


def expect(rule: QuadratureRule, g: Callable[[np.ndarray], float]) -> float:
    """Weighted sum of ``g`` over the rule's nodes: the prior expectation."""
    total = 0.0
    for node, w in zip(rule.nodes, rule.weights):
        value = float(g(node))
        if not np.isfinite(value):
            raise EvaluationError(f"integrand is not finite at node {node.tolist()}")
        total += w * value
    return total


def write_rule_csv(rule: QuadratureRule, path) -> None:
    """Dump a rule as CSV with one node column per dimension plus the weight."""
    header = ",".join(f"t{j + 1}" for j in range(rule.p)) + ",weight"
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for node, w in zip(rule.nodes, rule.weights):
            cells = [format(x, ".12g") for x in node] + [format(w, ".12g")]
            fh.write(",".join(cells) + "\n")
