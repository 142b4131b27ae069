"""Generative Causal Model networks.

Z -> X <- Y with generation P_theta(X|Z,Y) and inference Q_phi(Z|X),
Q_psi(Y|X), plus the conditional critic D(X,Y) and the feedback module that
routes the regressor's hidden layer into the decoder. Every public method
accepts a batch ``(N, dim)`` or a single vector ``(dim,)``; single vectors
come back without the batch axis.
"""

from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from src.core.errors import ShapeError

# Floor on the softplus output; keeps ln(sigma) finite far in the left tail.
MIN_STDDEV = 1e-6


class ModelConfig(BaseModel):
    """Architecture of the generative causal model"""

    model_config = ConfigDict(extra="forbid")

    feature_dim: PositiveInt
    attr_dim: PositiveInt
    z_dim: Optional[PositiveInt] = None
    hidden_dim: PositiveInt = 64
    leaky_slope: float = Field(0.2, gt=0.0, lt=1.0)
    backbone: Literal["mlp", "ladder"] = "mlp"
    ladder_layers: List[Tuple[PositiveInt, PositiveInt, PositiveInt]] = []
    image_shape: Optional[Tuple[PositiveInt, PositiveInt, PositiveInt]] = None
    use_feedback: bool = True
    output_activation: Literal["sigmoid", "identity"] = "sigmoid"
    decoder_noise: Literal["variance", "stddev"] = "variance"

    @model_validator(mode="after")
    def _check_backbone(self) -> "ModelConfig":
        if self.z_dim is None:
            self.z_dim = self.attr_dim
        if self.backbone == "ladder":
            if not self.ladder_layers:
                raise ValueError("ladder_layers must be non-empty for the ladder backbone")
            if self.image_shape is None:
                raise ValueError("image_shape is required for the ladder backbone")
            c, h, w = self.image_shape
            if c * h * w != self.feature_dim:
                raise ValueError(
                    f"image_shape {self.image_shape} does not flatten to feature_dim {self.feature_dim}"
                )
        return self

    @property
    def latent_dim(self) -> int:
        return int(self.z_dim if self.z_dim is not None else self.attr_dim)


@dataclass(frozen=True)
class GaussianPosterior:
    """Diagonal Gaussian over the sample attribute Z"""

    mean: torch.Tensor
    stddev: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.stddev.shape:
            raise ShapeError(
                f"posterior mean {tuple(self.mean.shape)} and stddev "
                f"{tuple(self.stddev.shape)} differ in shape"
            )

    @property
    def variance(self) -> torch.Tensor:
        return self.stddev.pow(2)

    def detach(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.detach(), self.stddev.detach())


def _mlp(sizes: Sequence[int], slope: float) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(fan_in, fan_out))
        if i < len(sizes) - 2:
            layers.append(nn.LeakyReLU(slope))
    return nn.Sequential(*layers)


class MLPEncoder(nn.Module):
    """Two parallel 3-layer MLPs for the posterior mean and stddev"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        z = cfg.latent_dim
        sizes = [cfg.feature_dim, cfg.hidden_dim, 2 * z, z]
        self.mean_net = _mlp(sizes, cfg.leaky_slope)
        self.stddev_net = _mlp(sizes, cfg.leaky_slope)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        stddev = F.softplus(self.stddev_net(x)).clamp_min(MIN_STDDEV)
        return self.mean_net(x), stddev


class MLPDecoder(nn.Module):
    """Mean network of the fixed-variance Gaussian P(X|Z,Y)"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.latent_dim + cfg.attr_dim, cfg.hidden_dim)
        self.act = nn.LeakyReLU(cfg.leaky_slope)
        self.fc2 = nn.Linear(cfg.hidden_dim, cfg.feature_dim)
        self.output_activation = cfg.output_activation

    def forward(
        self,
        z: torch.Tensor,
        y: torch.Tensor,
        feedback: Optional[torch.Tensor] = None,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        hidden = self.act(self.fc1(torch.cat([z, y], dim=-1)))
        if feedback is not None:
            hidden = hidden + feedback
        out = self.fc2(hidden)
        return torch.sigmoid(out) if self.output_activation == "sigmoid" else out


class MLPRegressor(nn.Module):
    """Q_psi(Y|X); exposes its hidden layer for the feedback module"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.feature_dim, cfg.hidden_dim)
        self.act = nn.LeakyReLU(cfg.leaky_slope)
        self.fc2 = nn.Linear(cfg.hidden_dim, cfg.attr_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = self.act(self.fc1(x))
        return self.fc2(hidden), hidden


class FeedbackModule(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = _mlp([cfg.hidden_dim, cfg.hidden_dim, cfg.hidden_dim], cfg.leaky_slope)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.net(hidden)


class Discriminator(nn.Module):
    """Conditional critic D(X,Y) on flat features"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = _mlp([cfg.feature_dim + cfg.attr_dim, cfg.hidden_dim, 1], cfg.leaky_slope)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([x, y], dim=-1)).squeeze(-1)


class GenerativeCausalModel(nn.Module):
    """Encoder, decoder, regressor, discriminator and feedback of the GCM"""

    GROUPS = ("encoder", "decoder", "regressor", "discriminator", "feedback")

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.backbone == "ladder":
            from .ladder import LadderDecoder, LadderEncoder, LadderRegressor

            self.encoder: nn.Module = LadderEncoder(config)
            self.decoder: nn.Module = LadderDecoder(config)
            self.regressor: nn.Module = LadderRegressor(config)
        else:
            self.encoder = MLPEncoder(config)
            self.decoder = MLPDecoder(config)
            self.regressor = MLPRegressor(config)
        self.discriminator = Discriminator(config)
        self.feedback: Optional[FeedbackModule] = (
            FeedbackModule(config) if config.use_feedback else None
        )

    # -- shape helpers -------------------------------------------------

    @staticmethod
    def _as_batch(t: torch.Tensor, dim: int, name: str) -> Tuple[torch.Tensor, bool]:
        if t.dim() == 1:
            t = t.unsqueeze(0)
            single = True
        elif t.dim() == 2:
            single = False
        else:
            raise ShapeError(f"{name} must be 1-D or 2-D, got shape {tuple(t.shape)}")
        if t.shape[-1] != dim:
            raise ShapeError(f"{name} has dimension {t.shape[-1]}, expected {dim}")
        return t, single

    def _pair(
        self, a: torch.Tensor, b: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        if a.shape[0] == b.shape[0]:
            return a, b
        if b.shape[0] == 1:
            return a, b.expand(a.shape[0], -1)
        if a.shape[0] == 1:
            return a.expand(b.shape[0], -1), b
        raise ShapeError(f"batch sizes {a.shape[0]} and {b.shape[0]} do not match")

    # -- operations ----------------------------------------------------

    def encode(self, x: torch.Tensor) -> GaussianPosterior:
        xb, single = self._as_batch(x, self.config.feature_dim, "x")
        mean, stddev = self.encoder(xb)
        if single:
            mean, stddev = mean.squeeze(0), stddev.squeeze(0)
        return GaussianPosterior(mean, stddev)

    def reparameterize(self, post: GaussianPosterior, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape[-1] != post.mean.shape[-1]:
            raise ShapeError(
                f"noise has dimension {noise.shape[-1]}, expected {post.mean.shape[-1]}"
            )
        try:
            return post.mean + post.stddev * noise
        except RuntimeError as exc:
            raise ShapeError(f"noise shape {tuple(noise.shape)} does not broadcast: {exc}")

    def decode(
        self,
        z: torch.Tensor,
        y: torch.Tensor,
        feedback_source: Optional[torch.Tensor] = None,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        zb, z_single = self._as_batch(z, self.config.latent_dim, "z")
        yb, y_single = self._as_batch(y, self.config.attr_dim, "y")
        zb, yb = self._pair(zb, yb)
        feedback = None
        if self.feedback is not None and feedback_source is not None:
            source, _ = self._as_batch(feedback_source, self.config.feature_dim, "x")
            _, source = self._pair(zb, source)
            _, hidden = self.regressor(source)
            feedback = self.feedback(hidden)
        out = self.decoder(zb, yb, feedback, generator)
        if z_single and y_single:
            out = out.squeeze(0)
        return out

    def regress(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        xb, single = self._as_batch(x, self.config.feature_dim, "x")
        y_hat, hidden = self.regressor(xb)
        if single:
            return y_hat.squeeze(0), hidden.squeeze(0)
        return y_hat, hidden

    def discriminate(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        xb, x_single = self._as_batch(x, self.config.feature_dim, "x")
        yb, y_single = self._as_batch(y, self.config.attr_dim, "y")
        xb, yb = self._pair(xb, yb)
        out = self.discriminator(xb, yb)
        if x_single and y_single:
            return out.squeeze(0)
        return out

    def known_class_probabilities(
        self, x: torch.Tensor, seen_columns: Sequence[int]
    ) -> torch.Tensor:
        """Softmax over the regressor's seen one-hot columns"""
        y_hat, _ = self.regress(x)
        columns = torch.as_tensor(list(seen_columns), dtype=torch.long)
        return torch.softmax(y_hat.index_select(-1, columns), dim=-1)

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        return {
            "encoder": list(self.encoder.parameters()),
            "decoder": list(self.decoder.parameters()),
            "regressor": list(self.regressor.parameters()),
            "discriminator": list(self.discriminator.parameters()),
            "feedback": list(self.feedback.parameters()) if self.feedback is not None else [],
        }


def build_model(config: ModelConfig, seed: Optional[int] = None) -> GenerativeCausalModel:
    """Instantiate the model, optionally under a fixed initialisation seed."""
    if seed is None:
        return GenerativeCausalModel(config)
    from src.core.seeding import seeded_torch

    with seeded_torch(seed):
        return GenerativeCausalModel(config)
