"""Abduction, action and prediction over a frozen model.

``x~ = X_y[z(x)]``: infer z from x, discard the inferred class attribute,
decode with the intervened y. Feedback always comes from the factual x.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, List, Literal, NamedTuple, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, PositiveInt

from src.core.errors import EmptyInputError, ShapeError
from src.core.logger import get_logger

from .model import GenerativeCausalModel

logger = get_logger(__name__)


class ZMode(BaseModel):
    """How z(x) is abducted: the posterior mean, or n seeded posterior draws"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["posterior_mean", "sample"] = "posterior_mean"
    n: PositiveInt = 1
    seed: int = 0

    @classmethod
    def posterior_mean(cls) -> "ZMode":
        return cls()

    @classmethod
    def sample(cls, n: int, seed: int = 0) -> "ZMode":
        return cls(kind="sample", n=n, seed=seed)

    @property
    def num_draws(self) -> int:
        return 1 if self.kind == "posterior_mean" else self.n


def euclidean_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """L2 distance along the last axis; a scalar for two vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot measure distance between shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return torch.linalg.vector_norm(a - b, dim=-1)


@dataclass
class CounterfactualRequest:
    x: torch.Tensor
    targets: torch.Tensor
    z_mode: ZMode = field(default_factory=ZMode)
    target_ids: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.targets.dim() == 1:
            self.targets = self.targets.unsqueeze(0)
        if self.targets.shape[0] == 0:
            raise EmptyInputError("counterfactual request has no targets")
        if self.target_ids is not None and len(self.target_ids) != self.targets.shape[0]:
            raise ShapeError("target_ids must name every target row")


class CounterfactualEntry(NamedTuple):
    target: int
    draw: int
    x_tilde: torch.Tensor
    distance: float


@dataclass
class CounterfactualSet:
    entries: List[CounterfactualEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def min_distance(self) -> float:
        if not self.entries:
            raise EmptyInputError("counterfactual set is empty")
        return min(e.distance for e in self.entries)

    def distance_by_target(self) -> dict:
        """Minimum distance over z draws for every target."""
        best: dict = {}
        for e in self.entries:
            best[e.target] = min(e.distance, best.get(e.target, float("inf")))
        return best


class CounterfactualGenerator:
    """Read-only counterfactual queries against a trained GCM"""

    def __init__(self, model: GenerativeCausalModel):
        self.model = model

    @contextmanager
    def frozen(self) -> Iterator[None]:
        was_training = self.model.training
        self.model.eval()
        try:
            with torch.no_grad():
                yield
        finally:
            self.model.train(was_training)

    def _check_x(self, x: torch.Tensor) -> None:
        if x.dim() not in (1, 2) or x.shape[-1] != self.model.config.feature_dim:
            raise ShapeError(
                f"x must end in feature_dim {self.model.config.feature_dim}, got {tuple(x.shape)}"
            )

    def _abduct(self, x: torch.Tensor, z_mode: ZMode) -> torch.Tensor:
        post = self.model.encode(x)
        if z_mode.kind == "posterior_mean":
            return post.mean.unsqueeze(0)
        generator = torch.Generator().manual_seed(int(z_mode.seed))
        noise = torch.randn(
            (z_mode.n, *post.mean.shape), generator=generator, dtype=post.mean.dtype
        )
        return self.model.reparameterize(post, noise)

    def abduct(self, x: torch.Tensor, z_mode: Optional[ZMode] = None) -> torch.Tensor:
        """Sample attributes for x with a leading draw axis: (draws, [N,] z_dim)."""
        self._check_x(x)
        with self.frozen():
            return self._abduct(x, z_mode or ZMode())

    def generate(
        self, x: torch.Tensor, y: torch.Tensor, z_mode: Optional[ZMode] = None
    ) -> torch.Tensor:
        """x~ = decode(z(x), y); a draw axis is prepended only when sampling."""
        z_mode = z_mode or ZMode()
        self._check_x(x)
        with self.frozen():
            zs = self._abduct(x, z_mode)
            outs = torch.stack([self.model.decode(z, y, feedback_source=x) for z in zs])
        return outs[0] if z_mode.kind == "posterior_mean" else outs

    def counterfactual_set(self, req: CounterfactualRequest) -> CounterfactualSet:
        x = req.x
        if x.dim() != 1:
            raise ShapeError("counterfactual_set takes a single factual sample")
        self._check_x(x)
        ids = list(req.target_ids) if req.target_ids is not None else list(range(req.targets.shape[0]))
        entries: List[CounterfactualEntry] = []
        with self.frozen():
            zs = self._abduct(x, req.z_mode)
            for t, y in zip(ids, req.targets):
                for k, z in enumerate(zs):
                    x_tilde = self.model.decode(z, y, feedback_source=x)
                    entries.append(
                        CounterfactualEntry(t, k, x_tilde, float(euclidean_distance(x, x_tilde)))
                    )
        return CounterfactualSet(entries)

    def counterfactual_features(
        self, x: torch.Tensor, targets: torch.Tensor, z_mode: Optional[ZMode] = None
    ) -> torch.Tensor:
        """Every x~ for a batch against every target: (draws, N, T, d)."""
        z_mode = z_mode or ZMode()
        if x.dim() == 1:
            x = x.unsqueeze(0)
        self._check_x(x)
        if targets.dim() == 1:
            targets = targets.unsqueeze(0)
        if targets.shape[0] == 0:
            raise EmptyInputError("no counterfactual targets")
        n, t = x.shape[0], targets.shape[0]
        logger.debug(f"Generating {z_mode.num_draws}x{n}x{t} counterfactuals")
        with self.frozen():
            zs = self._abduct(x, z_mode)
            outs = []
            for z in zs:
                decoded = self.model.decode(
                    z.repeat_interleave(t, dim=0),
                    targets.repeat(n, 1),
                    feedback_source=x.repeat_interleave(t, dim=0),
                )
                outs.append(decoded.reshape(n, t, -1))
        return torch.stack(outs)

    def counterfactual_distances(
        self, x: torch.Tensor, targets: torch.Tensor, z_mode: Optional[ZMode] = None
    ) -> torch.Tensor:
        """(N, T) distances from each x to its counterfactual per target, min over draws."""
        if x.dim() == 1:
            x = x.unsqueeze(0)
        feats = self.counterfactual_features(x, targets, z_mode)
        dists = torch.linalg.vector_norm(feats - x[None, :, None, :], dim=-1)
        return dists.min(dim=0).values

    def consistency_rate(
        self,
        x: torch.Tensor,
        labels: Sequence[int],
        seen_ids: Sequence[int],
        attributes: torch.Tensor,
    ) -> float:
        """Fraction of samples whose nearest seen counterfactual is their own class."""
        labels_arr = np.asarray(labels, dtype=np.int64)
        if labels_arr.size == 0:
            raise EmptyInputError("consistency_rate needs at least one sample")
        seen = list(seen_ids)
        targets = attributes[torch.as_tensor(seen, dtype=torch.long)]
        dists = self.counterfactual_distances(x, targets)
        nearest = np.asarray(seen)[dists.argmin(dim=1).cpu().numpy()]
        return float(np.mean(nearest == labels_arr))

    def prior_generation(
        self, x: torch.Tensor, targets: torch.Tensor, seed: int
    ) -> torch.Tensor:
        """decode(z ~ N(0, I), y) with feedback from x, one target row per sample."""
        if x.dim() == 1:
            x = x.unsqueeze(0)
        self._check_x(x)
        if targets.dim() == 1:
            targets = targets.expand(x.shape[0], -1)
        if targets.shape[0] != x.shape[0]:
            raise ShapeError("prior_generation pairs one target with each sample")
        generator = torch.Generator().manual_seed(int(seed))
        z = torch.randn(
            (x.shape[0], self.model.config.latent_dim), generator=generator, dtype=x.dtype
        )
        with self.frozen():
            return self.model.decode(z, targets, feedback_source=x)
