"""Counterfactual-faithful training.

    min_{theta,phi} L_Z + nu * L_Y + max_{omega_D} rho * L_F

L_Z is the beta-VAE objective with a fixed-variance Gaussian likelihood, L_Y
a contrastive loss over counterfactuals, and L_F a conditional WGAN-GP value.
"""

import math
from typing import Callable, Dict, List, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt
from torch.utils.data import DataLoader

from src.core.errors import EmptyInputError, NonFiniteLossError, ShapeError
from src.core.logger import get_logger, log_timing
from src.core.seeding import torch_generator

from .data import DatasetBundle, FeatureDataset
from .model import GaussianPosterior, GenerativeCausalModel

logger = get_logger(__name__)

MAX_NEGATIVES = 64
DIST_EPS = 1e-12

LOG_COLUMNS = ("epoch", "loss_z", "loss_recon", "loss_kl", "loss_y", "loss_f", "gp", "beta_effective")

ParameterGroup = Literal["encoder", "decoder", "regressor", "discriminator", "feedback"]
GENERATOR_GROUPS = ("encoder", "decoder", "regressor", "feedback")


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = Field(6.0, ge=0.0)
    nu: float = Field(1.0, ge=0.0)
    rho: float = Field(1.0, ge=0.0)
    lambda_gp: float = Field(10.0, ge=0.0)
    learning_rate: PositiveFloat = 1e-3
    group_learning_rates: Dict[ParameterGroup, PositiveFloat] = {}
    adam_beta1: float = Field(0.5, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epochs: PositiveInt = 50
    batch_size: PositiveInt = 64
    anneal_epochs: int = Field(40, ge=0)
    negatives_per_anchor: Union[PositiveInt, Literal["all"]] = "all"
    critic_steps: PositiveInt = 1
    recon_variance: PositiveFloat = 1e-3
    ly_grad_to_encoder: bool = True
    seed: int = 0

    def beta_effective(self, epoch: int) -> float:
        """Linear ramp 0 -> beta over anneal_epochs, constant afterwards."""
        if self.anneal_epochs == 0:
            return self.beta
        return self.beta * min(1.0, epoch / self.anneal_epochs)

    def group_lr(self, group: str) -> float:
        return self.group_learning_rates.get(group, self.learning_rate)


class LossBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    loss_z: float
    loss_recon: float
    loss_kl: float
    loss_y: float = 0.0
    loss_f: float = 0.0
    gp_term: float = 0.0
    total: float
    beta_effective: float

    def log_row(self, epoch: int) -> list:
        return [
            epoch,
            self.loss_z,
            self.loss_recon,
            self.loss_kl,
            self.loss_y,
            self.loss_f,
            self.gp_term,
            self.beta_effective,
        ]


class LossZ(NamedTuple):
    loss: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor


# -- loss terms ---------------------------------------------------------------


def kl_divergence(post: GaussianPosterior) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    var = post.variance
    return 0.5 * (post.mean.pow(2) + var - 1.0 - torch.log(var)).sum(dim=-1)


def reconstruction_nll(x: torch.Tensor, x_hat: torch.Tensor, recon_variance: float) -> torch.Tensor:
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction shape {tuple(x_hat.shape)} differs from x {tuple(x.shape)}")
    return (x - x_hat).pow(2).sum(dim=-1) / (2.0 * recon_variance)


def safe_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).pow(2).sum(dim=-1).clamp_min(DIST_EPS).sqrt()


def loss_z(
    model: GenerativeCausalModel,
    x: torch.Tensor,
    y_true: torch.Tensor,
    beta_effective: float,
    noise: torch.Tensor,
    recon_variance: float = 1.0,
    generator: Optional[torch.Generator] = None,
) -> LossZ:
    """Batch mean of recon NLL + beta_effective * KL, returned with both parts."""
    if beta_effective < 0:
        raise ValueError(f"beta_effective must be non-negative, got {beta_effective}")
    post = model.encode(x)
    z = model.reparameterize(post, noise)
    x_hat = model.decode(z, y_true, feedback_source=x, generator=generator)
    recon = reconstruction_nll(x, x_hat, recon_variance).mean()
    kl = kl_divergence(post).mean()
    return LossZ(recon + beta_effective * kl, recon, kl)


def contrastive_loss(d_pos: torch.Tensor, d_neg: torch.Tensor) -> torch.Tensor:
    """-log softmax(-d)[positive] with the positive in column 0."""
    if d_neg.shape[-1] == 0:
        raise EmptyInputError("contrastive loss needs at least one negative")
    logits = torch.cat([-d_pos.unsqueeze(-1), -d_neg], dim=-1)
    return -F.log_softmax(logits, dim=-1)[..., 0]


def loss_y(
    model: GenerativeCausalModel,
    x: torch.Tensor,
    y_true: torch.Tensor,
    negatives: torch.Tensor,
    z: torch.Tensor,
) -> torch.Tensor:
    """Contrastive loss of X_{y_true}[z] against counterfactuals for the negatives.

    ``negatives`` is ``(K, a)`` shared by the batch or ``(N, K, a)`` per anchor.
    """
    single = x.dim() == 1
    if single:
        x, y_true, z = x.unsqueeze(0), y_true.unsqueeze(0), z.unsqueeze(0)
        if negatives.dim() == 2:
            negatives = negatives.unsqueeze(0)
    n = x.shape[0]
    if negatives.dim() == 2:
        negatives = negatives.unsqueeze(0).expand(n, -1, -1)
    if negatives.dim() != 3 or negatives.shape[0] != n:
        raise ShapeError(f"negatives must be (K, a) or (N, K, a), got {tuple(negatives.shape)}")
    k = negatives.shape[1]
    if k == 0:
        raise EmptyInputError("loss_y needs at least one negative")
    if torch.any(torch.all(negatives == y_true.unsqueeze(1), dim=-1)):
        raise ValueError("the true class attribute appears among the negatives")

    x_pos = model.decode(z, y_true, feedback_source=x)
    x_neg = model.decode(
        z.repeat_interleave(k, dim=0),
        negatives.reshape(n * k, -1),
        feedback_source=x.repeat_interleave(k, dim=0),
    ).reshape(n, k, -1)
    d_pos = safe_distance(x, x_pos)
    d_neg = safe_distance(x.unsqueeze(1), x_neg)
    loss = contrastive_loss(d_pos, d_neg).mean()
    return loss


def gradient_penalty(
    discriminator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    x_hat: torch.Tensor,
    y: torch.Tensor,
) -> torch.Tensor:
    """E[(||grad_x D(x_hat, y)||_2 - 1)^2], differentiable w.r.t. the critic."""
    if not x_hat.requires_grad:
        x_hat = x_hat.requires_grad_(True)
    scores = discriminator(x_hat, y)
    gradients, *_ = torch.autograd.grad(
        outputs=scores,
        inputs=x_hat,
        grad_outputs=torch.ones_like(scores),
        create_graph=True,
    )
    gradients = gradients.reshape(gradients.shape[0], -1)
    norm = (gradients.pow(2).sum(dim=1) + DIST_EPS).sqrt()
    return (norm - 1.0).pow(2).mean()


def loss_f(
    discriminator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    y: torch.Tensor,
    x_prime: torch.Tensor,
    alpha: Union[float, torch.Tensor],
    lambda_gp: float = 10.0,
):
    """Return (E[D(x,y)] - E[D(x',y)] - lambda * GP, GP)."""
    alpha_t = torch.as_tensor(alpha, dtype=x.dtype)
    if torch.any(alpha_t < 0) or torch.any(alpha_t > 1):
        raise ValueError("alpha must lie in [0, 1]")
    if alpha_t.dim() == 1:
        alpha_t = alpha_t.unsqueeze(-1)
    if x.shape != x_prime.shape:
        raise ShapeError(f"x {tuple(x.shape)} and x' {tuple(x_prime.shape)} differ")
    x_hat = alpha_t * x + (1.0 - alpha_t) * x_prime
    gp = gradient_penalty(discriminator, x_hat, y)
    value = discriminator(x, y).mean() - discriminator(x_prime, y).mean() - lambda_gp * gp
    return value, gp


# -- optimisation ---------------------------------------------------------------


def _check_finite(terms: Dict[str, torch.Tensor], epoch: Optional[int], step: Optional[int]) -> None:
    for name, value in terms.items():
        v = float(value.detach())
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v, epoch=epoch, step=step)


class GCMTrainer:
    """Alternating critic / generator updates over one model"""

    def __init__(
        self,
        model: GenerativeCausalModel,
        cfg: TrainingConfig,
        attributes: torch.Tensor,
        seen_ids: Sequence[int],
        attribute_kind: str = "dense",
    ):
        self.model = model
        self.cfg = cfg
        self.attribute_kind = attribute_kind
        self.attributes = torch.as_tensor(attributes)
        self.seen_ids = torch.as_tensor(list(seen_ids), dtype=torch.long)
        if self.seen_ids.numel() < 2 and cfg.nu > 0:
            raise EmptyInputError("L_Y needs at least two seen classes for negatives")
        self.seen_position = {int(c): i for i, c in enumerate(self.seen_ids.tolist())}
        self.generator = torch_generator(cfg.seed, "training")

        groups = model.parameter_groups()
        self.critic_params = groups["discriminator"]
        self.generator_params = [p for name in GENERATOR_GROUPS for p in groups[name]]
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.generator_opt = torch.optim.Adam(
            [{"params": groups[name], "lr": cfg.group_lr(name)} for name in GENERATOR_GROUPS if groups[name]],
            lr=cfg.learning_rate,
            betas=betas,
        )
        self.critic_opt = torch.optim.Adam(
            self.critic_params, lr=cfg.group_lr("discriminator"), betas=betas
        )

    def _seen_positions(self, labels: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor([self.seen_position[int(c)] for c in labels.tolist()], dtype=torch.long)

    def negatives(self, labels: torch.Tensor) -> torch.Tensor:
        """(N, K, a) negative attributes per anchor, drawn from the other seen classes."""
        positions = self._seen_positions(labels)
        s = self.seen_ids.numel()
        n = positions.numel()
        grid = torch.arange(s).expand(n, s)
        others = grid[grid != positions.unsqueeze(1)].reshape(n, s - 1)
        cap = self.cfg.negatives_per_anchor
        limit = MAX_NEGATIVES if cap == "all" else int(cap)
        if cap == "all" and s - 1 <= MAX_NEGATIVES:
            limit = s - 1
        if limit < s - 1:
            order = torch.rand((n, s - 1), generator=self.generator).argsort(dim=1)[:, :limit]
            others = others.gather(1, order)
        return self.attributes[self.seen_ids[others]]

    def _regressor_loss(self, x: torch.Tensor, labels: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        y_hat, _ = self.model.regress(x)
        if self.attribute_kind == "onehot":
            logits = y_hat.index_select(-1, self.seen_ids)
            return F.cross_entropy(logits, self._seen_positions(labels))
        return F.mse_loss(y_hat, y)

    def _noise(self, like: torch.Tensor) -> torch.Tensor:
        return torch.randn(like.shape, generator=self.generator, dtype=like.dtype)

    def _set_critic_trainable(self, flag: bool) -> None:
        for p in self.critic_params:
            p.requires_grad_(flag)

    def critic_step(self, x: torch.Tensor, y: torch.Tensor):
        with torch.no_grad():
            post = self.model.encode(x)
            z = self.model.reparameterize(post, self._noise(post.mean))
            x_prime = self.model.decode(z, y, feedback_source=x, generator=self.generator)
        alpha = torch.rand((x.shape[0],), generator=self.generator, dtype=x.dtype)
        value, gp = loss_f(self.model.discriminate, x, y, x_prime, alpha, self.cfg.lambda_gp)
        self.critic_opt.zero_grad()
        (-self.cfg.rho * value).backward()
        self.critic_opt.step()
        return value.detach(), gp.detach()

    def train_step(
        self,
        x: torch.Tensor,
        labels: torch.Tensor,
        beta_effective: float,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
    ) -> LossBreakdown:
        cfg = self.cfg
        self.model.train()
        y = self.attributes[labels]
        zero = x.new_zeros(())
        lf_value, gp = zero, zero

        if cfg.rho > 0:
            for _ in range(cfg.critic_steps):
                lf_value, gp = self.critic_step(x, y)
            _check_finite({"loss_f": lf_value, "gp": gp}, epoch, step)

        self._set_critic_trainable(False)
        try:
            post = self.model.encode(x)
            z = self.model.reparameterize(post, self._noise(post.mean))
            x_hat = self.model.decode(z, y, feedback_source=x, generator=self.generator)
            recon = reconstruction_nll(x, x_hat, cfg.recon_variance).mean()
            kl = kl_divergence(post).mean()
            lz = recon + beta_effective * kl
            total = lz

            ly = zero
            if cfg.nu > 0:
                z_y = z if cfg.ly_grad_to_encoder else z.detach()
                ly = loss_y(self.model, x, y, self.negatives(labels), z_y)
                total = total + cfg.nu * ly
            if cfg.rho > 0:
                total = total + cfg.rho * (-self.model.discriminate(x_hat, y).mean())
            reg = self._regressor_loss(x, labels, y)
            total = total + reg

            _check_finite(
                {"loss_recon": recon, "loss_kl": kl, "loss_y": ly, "regressor": reg, "total": total},
                epoch,
                step,
            )
            self.generator_opt.zero_grad()
            total.backward()
            self.generator_opt.step()
        finally:
            self._set_critic_trainable(True)

        return LossBreakdown(
            loss_z=float(lz.detach()),
            loss_recon=float(recon.detach()),
            loss_kl=float(kl.detach()),
            loss_y=float(ly.detach()),
            loss_f=float(lf_value),
            gp_term=float(gp),
            total=float(total.detach()),
            beta_effective=float(beta_effective),
        )


def _weighted_mean(parts: List[LossBreakdown], weights: List[int]) -> LossBreakdown:
    w = np.asarray(weights, dtype=np.float64) / float(sum(weights))
    fields = ("loss_z", "loss_recon", "loss_kl", "loss_y", "loss_f", "gp_term", "total")
    values = {f: float(np.dot(w, [getattr(p, f) for p in parts])) for f in fields}
    return LossBreakdown(beta_effective=parts[0].beta_effective, **values)


@log_timing()
def fit(
    model: GenerativeCausalModel,
    bundle: DatasetBundle,
    cfg: TrainingConfig,
    on_epoch: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> List[LossBreakdown]:
    """Train on the bundle's seen-class train split; returns one breakdown per epoch."""
    features, labels = bundle.train_arrays()
    if labels.size == 0:
        raise EmptyInputError("training split is empty")
    dataset = FeatureDataset(features, labels)
    # A trailing batch of one breaks BatchNorm in the ladder backbone.
    drop_last = len(dataset) > cfg.batch_size and len(dataset) % cfg.batch_size == 1
    loader = DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        shuffle=True,
        drop_last=drop_last,
        generator=torch_generator(cfg.seed, "batches"),
    )
    attributes = torch.as_tensor(bundle.attributes)
    trainer = GCMTrainer(model, cfg, attributes, bundle.seen_ids, bundle.attribute_kind)

    history: List[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        beta_eff = cfg.beta_effective(epoch)
        parts, sizes = [], []
        for step, (xb, lb) in enumerate(loader):
            parts.append(trainer.train_step(xb, lb, beta_eff, epoch=epoch, step=step))
            sizes.append(int(lb.shape[0]))
        breakdown = _weighted_mean(parts, sizes)
        history.append(breakdown)
        logger.info(
            f"epoch {epoch + 1}/{cfg.epochs} loss_z={breakdown.loss_z:.4f} "
            f"recon={breakdown.loss_recon:.4f} kl={breakdown.loss_kl:.4f} "
            f"loss_y={breakdown.loss_y:.4f} loss_f={breakdown.loss_f:.4f} beta={beta_eff:.3f}"
        )
        if on_epoch is not None:
            on_epoch(epoch, breakdown)
    model.eval()
    return history
