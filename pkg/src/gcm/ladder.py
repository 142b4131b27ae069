"""Probabilistic ladder backbone for small image features.

Features stay flat ``(N, C*H*W)`` everywhere outside this module; the
networks reshape to ``image_shape`` internally.
"""

from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .model import MIN_STDDEV, ModelConfig

Shape = Tuple[int, int, int]


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    padding = kernel // 2
    return (size + 2 * padding - kernel) // stride + 1


def ladder_shapes(image_shape: Sequence[int], layers: Sequence[Sequence[int]]) -> List[Shape]:
    """Activation shapes from the input image through every conv layer."""
    c, h, w = (int(v) for v in image_shape)
    shapes: List[Shape] = [(c, h, w)]
    for channels, kernel, stride in layers:
        h = conv_output_size(h, kernel, stride)
        w = conv_output_size(w, kernel, stride)
        if h < 1 or w < 1:
            raise ValueError(f"ladder layer ({channels},{kernel},{stride}) collapses the image")
        c = int(channels)
        shapes.append((c, h, w))
    return shapes


def _numel(shape: Shape) -> int:
    return shape[0] * shape[1] * shape[2]


class ConvTrunk(nn.Module):
    """Conv -> BatchNorm -> PReLU per ladder layer"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.image_shape = tuple(cfg.image_shape)
        self.shapes = ladder_shapes(cfg.image_shape, cfg.ladder_layers)
        blocks = []
        for (channels, kernel, stride), in_shape in zip(cfg.ladder_layers, self.shapes[:-1]):
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_shape[0], channels, kernel, stride=stride, padding=kernel // 2),
                    nn.BatchNorm2d(channels),
                    nn.PReLU(channels),
                )
            )
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = x.reshape(-1, *self.image_shape)
        for block in self.blocks:
            out = block(out)
        return out


class LadderEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.trunk = ConvTrunk(cfg)
        top = _numel(self.trunk.shapes[-1])
        self.flatten = nn.Sequential(
            nn.Flatten(), nn.Linear(top, cfg.hidden_dim), nn.LeakyReLU(cfg.leaky_slope)
        )
        self.mean_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
        self.stddev_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = self.flatten(self.trunk(x))
        stddev = F.softplus(self.stddev_head(hidden)).clamp_min(MIN_STDDEV)
        return self.mean_head(hidden), stddev


class LadderRegressor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.trunk = ConvTrunk(cfg)
        top = _numel(self.trunk.shapes[-1])
        self.flatten = nn.Sequential(
            nn.Flatten(), nn.Linear(top, cfg.hidden_dim), nn.LeakyReLU(cfg.leaky_slope)
        )
        self.head = nn.Linear(cfg.hidden_dim, cfg.attr_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = self.flatten(self.trunk(x))
        return self.head(hidden), hidden


class _DecoderLevel(nn.Module):
    """Unflatten -> ConvT, then a stochastic Flatten/Linear head unless it is the output level"""

    def __init__(
        self,
        in_dim: int,
        upper: Shape,
        lower: Shape,
        kernel: int,
        stride: int,
        cfg: ModelConfig,
        is_output: bool,
    ):
        super().__init__()
        padding = kernel // 2
        # ConvTranspose2d alone cannot recover sizes lost to floor division.
        output_padding = tuple(
            lower[i] - ((upper[i] - 1) * stride - 2 * padding + kernel) for i in (1, 2)
        )
        self.upper = upper
        self.unflatten = nn.Linear(in_dim, _numel(upper))
        self.deconv = nn.ConvTranspose2d(
            upper[0],
            lower[0],
            kernel,
            stride=stride,
            padding=padding,
            output_padding=output_padding,
        )
        self.is_output = is_output
        if not is_output:
            self.norm = nn.Sequential(nn.BatchNorm2d(lower[0]), nn.PReLU(lower[0]))
            self.flatten = nn.Sequential(
                nn.Flatten(), nn.Linear(_numel(lower), cfg.hidden_dim), nn.LeakyReLU(cfg.leaky_slope)
            )
            self.mean_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
            self.scale_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)

    def forward(self, t: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        c = self.unflatten(t).reshape(-1, *self.upper)
        x = self.deconv(c)
        if self.is_output:
            return x, None
        hidden = self.flatten(self.norm(x))
        return self.mean_head(hidden), F.softplus(self.scale_head(hidden))


class LadderDecoder(nn.Module):
    """Top-down ladder: cat(z, y) -> hidden -> stochastic levels -> image"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        shapes = ladder_shapes(cfg.image_shape, cfg.ladder_layers)
        self.top = nn.Linear(cfg.latent_dim + cfg.attr_dim, cfg.hidden_dim)
        self.act = nn.LeakyReLU(cfg.leaky_slope)
        levels = []
        depth = len(cfg.ladder_layers)
        for level in range(depth, 0, -1):
            _, kernel, stride = cfg.ladder_layers[level - 1]
            in_dim = cfg.hidden_dim if level == depth else cfg.latent_dim
            levels.append(
                _DecoderLevel(
                    in_dim,
                    shapes[level],
                    shapes[level - 1],
                    kernel,
                    stride,
                    cfg,
                    is_output=(level == 1),
                )
            )
        self.levels = nn.ModuleList(levels)
        self.noise_mode = cfg.decoder_noise
        self.output_activation = cfg.output_activation

    def forward(
        self,
        z: torch.Tensor,
        y: torch.Tensor,
        feedback: Optional[torch.Tensor] = None,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        t = self.act(self.top(torch.cat([z, y], dim=-1)))
        if feedback is not None:
            t = t + feedback
        stochastic = generator is not None and self.training
        out = t
        for level in self.levels:
            mean, scale = level(t)
            if scale is None:
                out = mean
                break
            if stochastic:
                if self.noise_mode == "stddev":
                    scale = scale.clamp_min(0.0).sqrt()
                eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
                t = mean + scale * eps
            else:
                t = mean
        out = out.flatten(start_dim=1)
        return torch.sigmoid(out) if self.output_activation == "sigmoid" else out
