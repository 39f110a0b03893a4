"""Multistart box-constrained maximisation of phi and maxima deduplication.

The local scheme is a projected quasi-Newton ascent: gradient-projection
line search with a BFGS inverse-Hessian approximation that is reset
whenever the active bound set changes.  Boundary maxima are the common
case for this objective, so steps project exactly onto the box and active
bounds are honoured without epsilon excursions.

Gradients come from central finite differences with a per-coordinate step
proportional to the bound width; the stencil is evaluated in one batched
objective call.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import CapacityError, EvaluationError, InputError
from .models import DesignSpace

__all__ = [
    "OptimizerConfig",
    "LocalMaximum",
    "LocalSearchResult",
    "MaximaReport",
    "local_maximize",
    "multistart",
    "recluster",
    "grid_maximize",
]

DEFAULT_GRID_CAP = 5_000_000
_CHUNK_POINTS = 262_144


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 1000
    seed: int = 0
    grad_step: float = 1e-6
    convergence_tol: float = 1e-8
    max_iters: int = 500
    dedup_tol: float = 1e-4
    value_tol: float = 1e-6

    def __post_init__(self):
        if self.starts < 1:
            raise InputError(f"starts must be >= 1, got {self.starts}")
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("grad_step", "convergence_tol", "dedup_tol", "value_tol"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class LocalSearchResult:
    point: np.ndarray
    value: float
    projected_grad_norm: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class LocalMaximum:
    point: np.ndarray
    value: float
    hits: int
    global_tie: bool


@dataclass(frozen=True, eq=False)
class MaximaReport:
    """Distinct local maxima of phi over the design space, best first."""

    maxima: tuple[LocalMaximum, ...]
    q: int
    starts_converged: int
    starts_discarded: int
    best_value: float
    endpoints: np.ndarray  # (m, k) accepted search endpoints, for reclustering
    endpoint_values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "q": int(self.q),
            "best_value": float(self.best_value),
            "starts_converged": int(self.starts_converged),
            "starts_discarded": int(self.starts_discarded),
            "maxima": [
                {
                    "point": [float(x) for x in m.point],
                    "value": float(m.value),
                    "hits": int(m.hits),
                    "global_tie": bool(m.global_tie),
                }
                for m in self.maxima
            ],
        }


def _as_batched_objective(phi):
    """Accept a PhiEvaluator or any callable mapping (m, k) points to (m,) values."""
    if hasattr(phi, "phi_batch"):
        return phi.phi_batch
    if callable(phi):
        return phi
    raise InputError(f"objective {phi!r} is neither an evaluator nor callable")


def _fd_gradient(f, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Central-difference gradient; the 2k stencil runs as one batched call.

    Stencil points may fall marginally outside the box: every supported
    objective is defined on a neighbourhood of it, and an unclipped stencil
    keeps the estimate unbiased on the boundary.
    """
    k = x.shape[0]
    pts = np.repeat(x[None, :], 2 * k, axis=0)
    idx = np.arange(k)
    pts[2 * idx, idx] += h
    pts[2 * idx + 1, idx] -= h
    vals = f(pts)
    return (vals[0::2] - vals[1::2]) / (2.0 * h)


def _projected_gradient(g: np.ndarray, x, lower, upper) -> np.ndarray:
    """Ascent gradient with components blocked by an active bound zeroed."""
    pg = g.copy()
    pg[(x <= lower) & (g < 0)] = 0.0
    pg[(x >= upper) & (g > 0)] = 0.0
    return pg


def local_maximize(phi, space: DesignSpace, start, cfg: OptimizerConfig) -> LocalSearchResult:
    """Projected BFGS ascent from ``start``; monotone in the objective value.

    Stops when the projected-gradient norm drops below ``cfg.convergence_tol``
    or after ``cfg.max_iters`` iterations.  The returned point satisfies the
    box bounds exactly.
    """
    f = _as_batched_objective(phi)
    lower, upper = space.lower, space.upper
    h = cfg.grad_step * space.widths
    k = space.k

    x = np.clip(np.asarray(start, dtype=float), lower, upper)
    if x.shape != (k,):
        raise InputError(f"start has shape {x.shape}, expected ({k},)")
    fx = float(f(x[None, :])[0])
    if not np.isfinite(fx):
        raise EvaluationError(f"objective is not finite at start {x.tolist()}")
    g = _fd_gradient(f, x, h)

    hinv = np.eye(k)
    prev_active = None
    iterations = 0
    converged = False
    pg = _projected_gradient(g, x, lower, upper)

    for iterations in range(1, cfg.max_iters + 1):
        pg = _projected_gradient(g, x, lower, upper)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm <= cfg.convergence_tol:
            converged = True
            break

        active = ((x <= lower) & (g < 0)) | ((x >= upper) & (g > 0))
        if prev_active is None or not np.array_equal(active, prev_active):
            hinv = np.eye(k)
        prev_active = active

        direction = np.zeros(k)
        free = ~active
        direction[free] = hinv[np.ix_(free, free)] @ g[free]
        if float(direction @ pg) <= 0.0:
            hinv = np.eye(k)
            direction = pg

        # Projected-arc backtracking with an Armijo ascent condition.
        t = 1.0
        accepted = False
        xn = x
        fn = fx
        for _ in range(60):
            cand = np.clip(x + t * direction, lower, upper)
            stride = cand - x
            if not np.any(stride != 0.0):
                break
            fc = float(f(cand[None, :])[0])
            # The Armijo bound alone can admit a decrease once the stride is
            # truncated by the box, so monotonicity is enforced explicitly.
            if np.isfinite(fc) and fc >= fx and fc >= fx + 1e-4 * float(g @ stride):
                xn, fn, accepted = cand, fc, True
                break
            t *= 0.5
        if not accepted:
            break

        gn = _fd_gradient(f, xn, h)
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        # Ascent curvature: for a locally concave objective s'y < 0, which is
        # the descent condition on -phi; update the inverse approximation of
        # the negated Hessian.
        sy = -sy
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            yk = -y
            rho = 1.0 / sy
            v = np.eye(k) - rho * np.outer(s, yk)
            hinv = v @ hinv @ v.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
    else:
        iterations = cfg.max_iters

    pg = _projected_gradient(g, x, lower, upper)
    pg_norm = float(np.linalg.norm(pg))
    if pg_norm <= cfg.convergence_tol:
        converged = True
    return LocalSearchResult(
        point=x, value=fx, projected_grad_norm=pg_norm, iterations=iterations, converged=converged
    )


def _worker_count() -> int:
    raw = os.environ.get("FIGOPT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def multistart(phi, space: DesignSpace, cfg: OptimizerConfig) -> MaximaReport:
    """Run ``cfg.starts`` local searches from uniform starts and deduplicate.

    Endpoints that neither converged nor ended with a projected-gradient
    norm within 10x the tolerance are discarded (and counted).  Results are
    deterministic in ``cfg.seed`` and independent of worker scheduling.
    """
    rng = np.random.default_rng(cfg.seed)
    lower, upper = space.lower, space.upper
    starts = lower + rng.uniform(size=(cfg.starts, space.k)) * (upper - lower)

    def run(i: int) -> LocalSearchResult:
        return local_maximize(phi, space, starts[i], cfg)

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(cfg.starts)))
    else:
        results = [run(i) for i in range(cfg.starts)]

    kept_points, kept_values = [], []
    converged = 0
    discarded = 0
    for res in results:
        if res.converged:
            converged += 1
        if res.converged or res.projected_grad_norm <= 10.0 * cfg.convergence_tol:
            kept_points.append(res.point)
            kept_values.append(res.value)
        else:
            discarded += 1
    if not kept_points:
        raise EvaluationError("no start produced a usable endpoint")

    endpoints = np.vstack(kept_points)
    values = np.asarray(kept_values)
    maxima = _cluster(endpoints, values, space, cfg.dedup_tol, cfg.value_tol)
    return MaximaReport(
        maxima=maxima,
        q=len(maxima),
        starts_converged=converged,
        starts_discarded=discarded,
        best_value=maxima[0].value,
        endpoints=endpoints,
        endpoint_values=values,
    )


def recluster(
    report: MaximaReport,
    space: DesignSpace,
    dedup_tol: float,
    value_tol: float = 1e-6,
) -> MaximaReport:
    """Re-deduplicate a report's stored endpoints under a different tolerance."""
    maxima = _cluster(report.endpoints, report.endpoint_values, space, dedup_tol, value_tol)
    return replace(
        report,
        maxima=maxima,
        q=len(maxima),
        best_value=maxima[0].value,
    )


def _cluster(
    points: np.ndarray,
    values: np.ndarray,
    space: DesignSpace,
    dedup_tol: float,
    value_tol: float,
) -> tuple[LocalMaximum, ...]:
    """Greedy clustering by scaled Euclidean distance, best value first.

    Ordering is value-descending with a lexicographic point tie-break, so the
    result is deterministic under exact value ties.
    """
    scaled = (points - space.lower) / space.widths
    keys = tuple(points[:, c] for c in reversed(range(points.shape[1]))) + (-values,)
    order = np.lexsort(keys)

    rep_idx: list[int] = []
    hits: list[int] = []
    rep_scaled: list[np.ndarray] = []
    for i in order:
        assigned = False
        for c, rs in enumerate(rep_scaled):
            if float(np.linalg.norm(scaled[i] - rs)) <= dedup_tol:
                hits[c] += 1
                assigned = True
                break
        if not assigned:
            rep_idx.append(int(i))
            rep_scaled.append(scaled[i])
            hits.append(1)

    best = values[rep_idx[0]]
    out = []
    for c, i in enumerate(rep_idx):
        out.append(
            LocalMaximum(
                point=points[i].copy(),
                value=float(values[i]),
                hits=hits[c],
                global_tie=bool(values[i] >= best * (1.0 - value_tol)),
            )
        )
    return tuple(out)


def grid_maximize(
    phi,
    space: DesignSpace,
    resolution: float,
    grid_cap: int = DEFAULT_GRID_CAP,
) -> MaximaReport:
    """Exhaustive lattice scan; the independent oracle for the maxima count.

    A lattice point qualifies when no Moore neighbour beats it; adjacent
    qualifying points (plateaus) merge into a single maximum represented by
    their best-valued cell.
    """
    if not resolution > 0:
        raise InputError(f"resolution must be positive, got {resolution}")
    f = _as_batched_objective(phi)
    axes = []
    for a, b in space.bounds:
        steps = max(1, int(round((b - a) / resolution)))
        axes.append(np.linspace(a, b, steps + 1))
    shape = tuple(len(ax) for ax in axes)
    total = int(np.prod(shape))
    if total > grid_cap:
        raise CapacityError(f"grid would need {total} points, cap is {grid_cap}")

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.reshape(-1) for m in mesh])
    values = np.empty(total)
    step = max(1, _grid_chunk(space.k))
    for lo in range(0, total, step):
        values[lo : lo + step] = f(pts[lo : lo + step])
    if not np.all(np.isfinite(values)):
        bad = pts[int(np.argmax(~np.isfinite(values)))]
        raise EvaluationError(f"objective is not finite at grid point {bad.tolist()}")

    grid = values.reshape(shape)
    neighbourhood = np.ones((3,) * space.k, dtype=bool)
    local_best = ndimage.maximum_filter(grid, footprint=neighbourhood, mode="constant", cval=-np.inf)
    qualifies = grid >= local_best
    labels, n_components = ndimage.label(qualifies, structure=neighbourhood)

    reps, vals, sizes = [], [], []
    flat_labels = labels.reshape(-1)
    for comp in range(1, n_components + 1):
        members = np.flatnonzero(flat_labels == comp)
        best = members[np.argmax(values[members])]
        reps.append(pts[best])
        vals.append(values[best])
        sizes.append(members.size)

    reps_arr = np.vstack(reps)
    vals_arr = np.asarray(vals)
    keys = tuple(reps_arr[:, c] for c in reversed(range(space.k))) + (-vals_arr,)
    order = np.lexsort(keys)
    best_value = vals_arr[order[0]]
    maxima = tuple(
        LocalMaximum(
            point=reps_arr[i].copy(),
            value=float(vals_arr[i]),
            hits=int(sizes[i]),
            global_tie=bool(vals_arr[i] >= best_value * (1.0 - 1e-6)),
        )
        for i in order
    )
    return MaximaReport(
        maxima=maxima,
        q=len(maxima),
        starts_converged=total,
        starts_discarded=0,
        best_value=float(best_value),
        endpoints=reps_arr,
        endpoint_values=vals_arr,
    )


def _grid_chunk(k: int) -> int:
    return max(1024, _CHUNK_POINTS // max(1, k))
