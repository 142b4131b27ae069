"""Executable faithfulness checks against a synthetic world.

An embedded generator g* is injective; a counterfactual model is faithful on a
set of samples when editing only the class attribute commutes with g*:
``cf(g*(z, y), y') == g*(z, y')``. Manifold distance measures how far any
generated feature lies from the world's data manifold.
"""

import math
from typing import Callable, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel

from src.core.errors import ContractViolationError, EmptyInputError
from src.core.logger import get_logger, log_timing
from src.core.seeding import derive_seed, numpy_rng

from .counterfactual import CounterfactualGenerator
from .data import DatasetBundle, OracleWorld
from .model import GenerativeCausalModel

logger = get_logger(__name__)

RATIO_FLOOR = 1e-9
MAX_SWEEPS = 200
GOLDEN_STEPS = 40
STEP_FLOOR = 1e-10
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


# -- injectivity --------------------------------------------------------------


class InjectivityResult(BaseModel):
    passed: bool
    worst_ratio: float
    pairs_checked: int


def verify_injectivity(
    world: OracleWorld, num_pairs: int = 1000, margin: float = 0.1, seed: int = 0
) -> InjectivityResult:
    """Check ||g(v1) - g(v2)|| > 0 over seeded factor pairs at least `margin` apart.

    A third of the pairs share z (only y differs), a third share y, the rest
    are unrestricted.
    """
    if num_pairs <= 0:
        logger.warning("verify_injectivity called with num_pairs=0; passing vacuously")
        return InjectivityResult(passed=True, worst_ratio=math.inf, pairs_checked=0)
    rng = numpy_rng(seed, "oracle")
    c = world.attributes.shape[0]
    z1 = rng.standard_normal((num_pairs, world.z_dim))
    z2 = rng.standard_normal((num_pairs, world.z_dim))
    c1 = rng.integers(0, c, num_pairs)
    c2 = rng.integers(0, c, num_pairs)
    kind = np.arange(num_pairs) % 3
    shared_z = kind == 0
    shared_y = kind == 1
    z2[shared_z] = z1[shared_z]
    if c > 1:
        # shared-z pairs must differ in class
        c2[shared_z] = (c1[shared_z] + 1 + rng.integers(0, c - 1, int(shared_z.sum()))) % c
    c2[shared_y] = c1[shared_y]
    y1, y2 = world.attributes[c1], world.attributes[c2]

    v_dist = np.sqrt(((z1 - z2) ** 2).sum(1) + ((y1 - y2) ** 2).sum(1))
    keep = v_dist >= margin
    if not keep.any():
        logger.warning(f"No factor pair is at least {margin} apart; passing vacuously")
        return InjectivityResult(passed=True, worst_ratio=math.inf, pairs_checked=0)
    x_dist = np.linalg.norm(world.g(z1[keep], y1[keep]) - world.g(z2[keep], y2[keep]), axis=1)
    ratios = x_dist / v_dist[keep]
    worst = float(ratios.min())
    return InjectivityResult(passed=worst > RATIO_FLOOR, worst_ratio=worst, pairs_checked=int(keep.sum()))


# -- interventions and model adapters -----------------------------------------


class InterventionTransform:
    """T' acting on factor space; may only touch the class attribute."""

    def __call__(self, z: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class IdentityTransform(InterventionTransform):
    def __call__(self, z, y):
        return z, y


class AssignAttributes(InterventionTransform):
    """Set each sample's class attribute to a target row."""

    def __init__(self, targets: np.ndarray):
        self.targets = np.asarray(targets, dtype=np.float64)

    def __call__(self, z, y):
        targets = self.targets
        if targets.ndim == 1:
            targets = np.broadcast_to(targets, y.shape)
        return z, targets.copy()


class FunctionTransform(InterventionTransform):
    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]):
        self.fn = fn

    def __call__(self, z, y):
        return self.fn(z, y)


def apply_intervention(
    transform: InterventionTransform, z: np.ndarray, y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    z_new, y_new = transform(np.array(z, copy=True), np.array(y, copy=True))
    z_new, y_new = np.asarray(z_new), np.asarray(y_new)
    if z_new.shape != z.shape or not np.array_equal(z_new, z):
        raise ContractViolationError("intervention modified sample attributes Z; only Y may change")
    if y_new.shape != y.shape:
        raise ContractViolationError(f"intervention changed Y shape {y.shape} -> {y_new.shape}")
    return z_new, y_new


class CounterfactualModel(Protocol):
    def counterfactual(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...


class GCMCounterfactualModel:
    def __init__(self, model: GenerativeCausalModel):
        self.generator = CounterfactualGenerator(model)
        self.dtype = next(model.parameters()).dtype

    def counterfactual(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        xt = torch.as_tensor(np.asarray(x), dtype=self.dtype)
        yt = torch.as_tensor(np.asarray(y), dtype=self.dtype)
        return self.generator.generate(xt, yt).numpy().astype(np.float64)

    def prior(self, x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
        xt = torch.as_tensor(np.asarray(x), dtype=self.dtype)
        yt = torch.as_tensor(np.asarray(y), dtype=self.dtype)
        return self.generator.prior_generation(xt, yt, seed).numpy().astype(np.float64)


class OracleCounterfactualModel:
    """Exact inverse followed by the true generator"""

    def __init__(self, world: OracleWorld):
        self.world = world

    def counterfactual(self, x, y):
        z, _ = self.world.invert(x)
        return self.world.g(z, y)


class LinearCounterfactualModel:
    """Least-squares affine fit x ~ c + W [z; y] on recorded factors"""

    def __init__(self, intercept: np.ndarray, A: np.ndarray, B: np.ndarray):
        self.intercept = intercept
        self.A = A
        self.B = B
        self._pinv = np.linalg.pinv(np.hstack([A, B]))

    @classmethod
    def fit(cls, features: np.ndarray, z: np.ndarray, y: np.ndarray) -> "LinearCounterfactualModel":
        features = np.asarray(features, dtype=np.float64)
        design = np.hstack([np.ones((features.shape[0], 1)), z, y])
        coef, *_ = np.linalg.lstsq(design, features, rcond=None)
        z_dim = np.asarray(z).shape[1]
        return cls(coef[0], coef[1 : 1 + z_dim].T, coef[1 + z_dim :].T)

    def counterfactual(self, x, y):
        factors = (np.asarray(x, dtype=np.float64) - self.intercept) @ self._pinv.T
        z = factors[:, : self.A.shape[1]]
        return self.intercept + z @ self.A.T + np.asarray(y, dtype=np.float64) @ self.B.T


def disentanglement_residual(
    model: CounterfactualModel,
    world: OracleWorld,
    transform: InterventionTransform,
    samples: Optional[Sequence[int]] = None,
) -> float:
    """Mean relative error ||cf(g(v), T'(v)_y) - g(T'(v))|| / ||g(T'(v))||."""
    idx = np.arange(world.labels.size) if samples is None else np.asarray(samples, dtype=np.int64)
    if idx.size == 0:
        raise EmptyInputError("disentanglement_residual needs at least one sample")
    z, y = world.z_factors[idx], world.y_factors[idx]
    z_new, y_new = apply_intervention(transform, z, y)
    target = world.g(z_new, y_new)
    produced = model.counterfactual(world.g(z, y), y_new)
    errors = np.linalg.norm(produced - target, axis=1) / np.linalg.norm(target, axis=1)
    return float(errors.mean())


# -- manifold distance --------------------------------------------------------


def _grid(world: OracleWorld, grid_size: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = numpy_rng(seed, "oracle")
    z = rng.standard_normal((grid_size, world.z_dim))
    classes = np.arange(grid_size) % world.attributes.shape[0]
    return z, classes


def _squared_residual(world: OracleWorld, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x - world.g(z, y)) ** 2).sum(axis=1)


def _refine_coordinate_descent(
    world: OracleWorld, x: np.ndarray, z: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Golden-section coordinate descent over z, vectorised across rows."""
    z = z.copy()
    best = _squared_residual(world, x, z, y)
    step = np.ones(z.shape[0])
    for _ in range(MAX_SWEEPS):
        before = best.copy()
        for j in range(z.shape[1]):
            lo = z[:, j] - step
            hi = z[:, j] + step
            for _ in range(GOLDEN_STEPS):
                c = hi - _INV_PHI * (hi - lo)
                d = lo + _INV_PHI * (hi - lo)
                zc, zd = z.copy(), z.copy()
                zc[:, j], zd[:, j] = c, d
                left = _squared_residual(world, x, zc, y) < _squared_residual(world, x, zd, y)
                hi = np.where(left, d, hi)
                lo = np.where(left, lo, c)
            trial = z.copy()
            trial[:, j] = 0.5 * (lo + hi)
            value = _squared_residual(world, x, trial, y)
            better = value < best
            z[better] = trial[better]
            best = np.where(better, value, best)
        stalled = before - best <= 1e-15 * np.maximum(before, 1e-30)
        step = np.where(stalled, 0.5 * step, step)
        if step.max() < STEP_FLOOR:
            break
    return np.sqrt(best)


def _refine_linear(world: OracleWorld, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact distance to the affine plane {offset + A z + B y : z}."""
    r = x - world.offset - y @ world.B.T
    z = r @ np.linalg.pinv(world.A).T
    return np.linalg.norm(r - z @ world.A.T, axis=1)


@log_timing()
def manifold_distance(
    x_tilde: np.ndarray,
    world: OracleWorld,
    grid_size: int = 1000,
    seed: int = 0,
    refine_starts: Optional[int] = None,
) -> np.ndarray:
    """Distance from each x~ to the data manifold of the world.

    Nearest point over a seeded factor grid, then local minimisation over z
    from the best grid point of the `refine_starts` closest classes (all
    covered classes by default).
    """
    if grid_size < 1:
        raise ValueError(f"grid_size must be at least 1, got {grid_size}")
    x = np.atleast_2d(np.asarray(x_tilde, dtype=np.float64))
    single = np.asarray(x_tilde).ndim == 1
    z_grid, class_grid = _grid(world, grid_size, seed)
    points = world.g(z_grid, world.attributes[class_grid])

    d2 = (x**2).sum(1)[:, None] - 2.0 * x @ points.T + (points**2).sum(1)[None, :]
    d2 = np.maximum(d2, 0.0)
    covered = np.unique(class_grid)
    per_class = np.full((x.shape[0], covered.size), np.inf)
    argbest = np.zeros((x.shape[0], covered.size), dtype=np.int64)
    for k, c in enumerate(covered):
        cols = np.flatnonzero(class_grid == c)
        local = d2[:, cols]
        pick = local.argmin(axis=1)
        per_class[:, k] = local[np.arange(x.shape[0]), pick]
        argbest[:, k] = cols[pick]
    grid_best = np.sqrt(per_class.min(axis=1))

    starts = covered.size if refine_starts is None else min(refine_starts, covered.size)
    order = np.argsort(per_class, axis=1, kind="stable")[:, :starts]
    rows = np.repeat(np.arange(x.shape[0]), starts)
    cols = argbest[rows, order.reshape(-1)]
    y_start = world.attributes[class_grid[cols]]
    if world.nonlinearity == "linear":
        refined = _refine_linear(world, x[rows], y_start)
    else:
        refined = _refine_coordinate_descent(world, x[rows], z_grid[cols], y_start)
    refined = refined.reshape(x.shape[0], starts).min(axis=1)
    result = np.minimum(grid_best, refined)
    return result[0] if single else result


# -- report ---------------------------------------------------------------------


class FaithfulnessReport(BaseModel):
    residual: float
    mean_manifold_distance_cf: float
    mean_manifold_distance_prior: float
    num_samples: int
    grid_size: int


def cyclic_targets(num_samples: int, unseen_ids: Sequence[int], attributes: np.ndarray) -> np.ndarray:
    if not unseen_ids:
        raise EmptyInputError("faithfulness needs unseen classes to intervene towards")
    ids = np.asarray(unseen_ids)[np.arange(num_samples) % len(unseen_ids)]
    return np.asarray(attributes, dtype=np.float64)[ids]


@log_timing()
def faithfulness_report(
    model: GenerativeCausalModel,
    world: OracleWorld,
    bundle: DatasetBundle,
    grid_size: int = 1000,
    seed: int = 0,
    samples: Optional[Sequence[int]] = None,
) -> FaithfulnessReport:
    """Compare unseen-class counterfactuals with Gaussian-prior generations."""
    idx = np.asarray(bundle.split.test_idx if samples is None else samples, dtype=np.int64)
    if idx.size == 0:
        raise EmptyInputError("no samples to measure faithfulness on")
    targets = cyclic_targets(idx.size, bundle.unseen_ids, world.attributes)
    adapter = GCMCounterfactualModel(model)
    residual = disentanglement_residual(adapter, world, AssignAttributes(targets), idx)

    x = world.g(world.z_factors[idx], world.y_factors[idx])
    cf = adapter.counterfactual(x, targets)
    prior = adapter.prior(x, targets, derive_seed(seed, "sampling"))
    d_cf = manifold_distance(cf, world, grid_size, seed)
    d_prior = manifold_distance(prior, world, grid_size, seed)
    report = FaithfulnessReport(
        residual=residual,
        mean_manifold_distance_cf=float(np.mean(d_cf)),
        mean_manifold_distance_prior=float(np.mean(d_prior)),
        num_samples=int(idx.size),
        grid_size=grid_size,
    )
    logger.info(
        f"Faithfulness: residual={report.residual:.4f} "
        f"cf={report.mean_manifold_distance_cf:.4f} prior={report.mean_manifold_distance_prior:.4f}"
    )
    return report
