"""Run configuration: flat ``key = value`` text plus CLI overrides.

Every knob of a run lives in one flat namespace; the model, training, synth
and inference settings are projected out of it. Example::

    # desk world
    mode = zsl
    beta = 6.0
    ladder_layers = 16:3:2, 32:3:2
    group_learning_rates = encoder:1e-4, discriminator:1e-3
    image_shape = 1,8,8
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .errors import ConfigValidationError, ShapeError
from .seeding import derive_seed

PATH_KEYS = ("bundle", "checkpoint", "oracle", "out", "output_dir")
_NONE_WORDS = {"", "none", "null"}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["zsl", "osr"] = "zsl"
    seed: int = 0

    # model
    feature_dim: Optional[PositiveInt] = None
    attr_dim: Optional[PositiveInt] = None
    z_dim: Optional[PositiveInt] = None
    hidden_dim: PositiveInt = 64
    leaky_slope: float = Field(0.2, gt=0.0, lt=1.0)
    backbone: Literal["mlp", "ladder"] = "mlp"
    ladder_layers: List[Tuple[PositiveInt, PositiveInt, PositiveInt]] = []
    image_shape: Optional[Tuple[PositiveInt, PositiveInt, PositiveInt]] = None
    use_feedback: bool = True
    output_activation: Literal["sigmoid", "identity"] = "sigmoid"
    decoder_noise: Literal["variance", "stddev"] = "variance"

    # training
    beta: float = Field(6.0, ge=0.0)
    nu: float = Field(1.0, ge=0.0)
    rho: Optional[float] = Field(None, ge=0.0)
    lambda_gp: float = Field(10.0, ge=0.0)
    learning_rate: PositiveFloat = 1e-3
    group_learning_rates: Dict[
        Literal["encoder", "decoder", "regressor", "discriminator", "feedback"], PositiveFloat
    ] = {}
    adam_beta1: float = Field(0.5, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epochs: PositiveInt = 50
    batch_size: PositiveInt = 64
    anneal_epochs: int = Field(40, ge=0)
    negatives_per_anchor: Union[PositiveInt, Literal["all"]] = "all"
    critic_steps: PositiveInt = 1
    recon_variance: PositiveFloat = 1e-3
    ly_grad_to_encoder: bool = True

    # synthetic world
    num_seen: PositiveInt = 6
    num_unseen: int = Field(4, ge=0)
    samples_per_class: PositiveInt = 200
    nonlinearity: Literal["linear", "tanh"] = "linear"
    attribute_kind: Optional[Literal["dense", "onehot"]] = None
    attribute_margin: float = Field(1.0, ge=0.0)
    feature_scale: PositiveFloat = 0.15
    offset: float = 0.5
    train_fraction: float = Field(0.8, ge=0.0, le=1.0)

    # inference
    K: PositiveInt = 10
    tau: float = Field(0.9, ge=0.0)
    tune_tau: bool = False
    omega_cal: float = 0.0
    omega_grid: List[float] = []
    z_mode: Literal["posterior_mean", "sample"] = "posterior_mean"
    z_samples: PositiveInt = 1
    classifier_epochs: PositiveInt = 100
    classifier_lr: PositiveFloat = 1e-2
    classifier_batch_size: PositiveInt = 128

    # oracle
    grid_size: PositiveInt = 1000
    num_pairs: int = Field(1000, ge=0)
    injectivity_margin: float = Field(0.1, ge=0.0)

    # ablation
    ablation_seeds: List[int] = [0, 1, 2]

    # paths
    bundle: Optional[str] = None
    checkpoint: Optional[str] = None
    oracle: Optional[str] = None
    out: Optional[str] = None
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_mode(self) -> "RunConfig":
        if self.mode == "osr" and self.attribute_kind == "dense":
            raise ValueError("attribute_kind: mode=osr requires one-hot class attributes")
        if self.backbone == "ladder":
            if not self.ladder_layers:
                raise ValueError("ladder_layers: required when backbone = ladder")
            if self.image_shape is None:
                raise ValueError("image_shape: required when backbone = ladder")
        return self

    # -- projections ----------------------------------------------------

    @property
    def effective_rho(self) -> float:
        if self.rho is not None:
            return self.rho
        return 1.0 if self.mode == "zsl" else 0.0

    @property
    def effective_attribute_kind(self) -> str:
        if self.attribute_kind is not None:
            return self.attribute_kind
        return "onehot" if self.mode == "osr" else "dense"

    def model_settings(self, feature_dim: int, attr_dim: int):
        """ModelConfig for a bundle with the given dimensions."""
        from src.gcm.model import ModelConfig

        for key, configured, actual in (
            ("feature_dim", self.feature_dim, feature_dim),
            ("attr_dim", self.attr_dim, attr_dim),
        ):
            if configured is not None and configured != actual:
                raise ShapeError(f"{key}: configured {configured} but the bundle has {actual}")
        return ModelConfig(
            feature_dim=feature_dim,
            attr_dim=attr_dim,
            z_dim=self.z_dim,
            hidden_dim=self.hidden_dim,
            leaky_slope=self.leaky_slope,
            backbone=self.backbone,
            ladder_layers=self.ladder_layers,
            image_shape=self.image_shape,
            use_feedback=self.use_feedback,
            output_activation=self.output_activation,
            decoder_noise=self.decoder_noise,
        )

    def training_settings(self, **changes):
        from src.gcm.training import TrainingConfig

        values = dict(
            beta=self.beta,
            nu=self.nu,
            rho=self.effective_rho,
            lambda_gp=self.lambda_gp,
            learning_rate=self.learning_rate,
            group_learning_rates=dict(self.group_learning_rates),
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            epochs=self.epochs,
            batch_size=self.batch_size,
            anneal_epochs=self.anneal_epochs,
            negatives_per_anchor=self.negatives_per_anchor,
            critic_steps=self.critic_steps,
            recon_variance=self.recon_variance,
            ly_grad_to_encoder=self.ly_grad_to_encoder,
            seed=self.seed,
        )
        values.update(changes)
        return TrainingConfig(**values)

    def synth_settings(self):
        from src.gcm.data import SynthWorldConfig

        attr_dim = self.attr_dim or 4
        return SynthWorldConfig(
            num_seen=self.num_seen,
            num_unseen=self.num_unseen,
            attr_dim=attr_dim,
            z_dim=self.z_dim or attr_dim,
            feature_dim=self.feature_dim or 16,
            samples_per_class=self.samples_per_class,
            nonlinearity=self.nonlinearity,
            attribute_kind=self.effective_attribute_kind,
            attribute_margin=self.attribute_margin,
            feature_scale=self.feature_scale,
            offset=self.offset,
            train_fraction=self.train_fraction,
            seed=self.seed,
        )

    def z_mode_settings(self):
        from src.gcm.counterfactual import ZMode

        if self.z_mode == "sample":
            return ZMode.sample(self.z_samples, derive_seed(self.seed, "sampling"))
        return ZMode.posterior_mean()

    def config_hash(self) -> str:
        """First 16 hex digits of sha256 over the canonical JSON, paths excluded."""
        payload = self.model_dump(mode="json", exclude=set(PATH_KEYS))
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# -- flat text format ---------------------------------------------------------


def _normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def _ladder_item(item: str) -> Tuple[int, int, int]:
    parts = item.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"expected channels:kernel:stride, got '{item.strip()}'")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _split_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _rate_item(item: str) -> Tuple[str, float]:
    group, sep, rate = item.partition(":")
    if not sep:
        raise ValueError(f"expected group:rate, got '{item}'")
    return group.strip(), float(rate)


_LIST_PARSERS = {
    "ladder_layers": lambda v: [_ladder_item(i) for i in _split_list(v)],
    "image_shape": lambda v: tuple(int(i) for i in _split_list(v)),
    "omega_grid": lambda v: [float(i) for i in _split_list(v)],
    "ablation_seeds": lambda v: [int(i) for i in _split_list(v)],
    "group_learning_rates": lambda v: dict(_rate_item(i) for i in _split_list(v)),
}


def _coerce(key: str, value: str):
    if value.strip().lower() in _NONE_WORDS and key in RunConfig.model_fields:
        default = RunConfig.model_fields[key].default
        if isinstance(default, (list, dict)):
            return type(default)()
        return None
    parser = _LIST_PARSERS.get(key)
    return parser(value) if parser else value.strip()


def parse_config_text(text: str) -> Tuple[Dict[str, str], List[str]]:
    """Split config text into raw values; errors name the key or line."""
    values: Dict[str, str] = {}
    errors: List[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got '{line}'")
            continue
        key, value = line.split("=", 1)
        key = _normalize_key(key)
        if not key:
            errors.append(f"line {lineno}: missing key")
            continue
        if key in values:
            errors.append(f"{key}: set more than once (line {lineno})")
            continue
        values[key] = value.strip()
    return values, errors


def _format_error(err: dict) -> str:
    loc = ".".join(str(p) for p in err.get("loc", ()) if p is not None)
    msg = str(err.get("msg", "invalid value"))
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, ") :]
    if loc:
        return f"{loc}: {msg}"
    return msg


def validate_config(
    text: str = "", overrides: Optional[Mapping[str, str]] = None
) -> Tuple[Optional[RunConfig], List[str]]:
    """Parse and validate; returns (config, []) or (None, errors)."""
    raw, errors = parse_config_text(text or "")
    for key, value in (overrides or {}).items():
        raw[_normalize_key(key)] = value

    values = {}
    for key, value in raw.items():
        try:
            values[key] = _coerce(key, value) if isinstance(value, str) else value
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        return None, errors
    try:
        return RunConfig(**values), []
    except ValidationError as exc:
        return None, [_format_error(e) for e in exc.errors()]


def load_run_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, str]] = None
) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    config, errors = validate_config(text, overrides)
    if config is None:
        raise ConfigValidationError(errors)
    return config
