"""Dataset bundles, seen/unseen splits and the synthetic GCM world.

Bundle layout (GCMCFDS1)::

    b"GCMCFDS1" | uint32 version | uint32 header_len | header JSON
    features    N x d float32 LE, row-major
    labels      N float32 LE (integral class ids)
    attributes  C x a float32 LE; the row count is whatever the remaining bytes hold

The header records num_samples, feature_dim, attr_dim, num_classes and the
split. The attribute row count is checked against num_classes after decoding.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator
from torch.utils.data import Dataset

from src.core.artifacts import atomic_write_bytes
from src.core.errors import (
    BundleFormatError,
    BundleValidationError,
    EmptyInputError,
    GCMError,
    RankDeficiencyError,
)
from src.core.logger import get_logger
from src.core.seeding import numpy_rng

from .checkpoint import load_tensors, save_tensors

logger = get_logger(__name__)

BUNDLE_MAGIC = b"GCMCFDS1"
BUNDLE_VERSION = 1
RANK_ATTEMPTS = 100
ATTRIBUTE_ATTEMPTS = 100


class SplitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seen_class_ids: List[int]
    unseen_class_ids: List[int] = []
    train_idx: List[int] = []
    test_idx: List[int] = []
    seed: int = 0

    @model_validator(mode="after")
    def _disjoint(self) -> "SplitSpec":
        overlap = set(self.seen_class_ids) & set(self.unseen_class_ids)
        if overlap:
            raise ValueError(f"seen and unseen class ids overlap: {sorted(overlap)}")
        return self


@dataclass
class DatasetBundle:
    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    split: SplitSpec
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attributes = np.asarray(self.attributes, dtype=np.float32)

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def attr_dim(self) -> int:
        return int(self.attributes.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.attributes.shape[0])

    @property
    def seen_ids(self) -> List[int]:
        return list(self.split.seen_class_ids)

    @property
    def unseen_ids(self) -> List[int]:
        return list(self.split.unseen_class_ids)

    @property
    def attribute_kind(self) -> str:
        return str(self.meta.get("attribute_kind", "dense"))

    def subset(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]

    def train_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.subset(self.split.train_idx)

    def test_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.subset(self.split.test_idx)

    def validate(self) -> "DatasetBundle":
        """Raise BundleValidationError on the first violated invariant."""
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise BundleValidationError("features must be N x d and labels length N")
        if self.features.shape[0] != self.labels.shape[0]:
            raise BundleValidationError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.attributes.ndim != 2:
            raise BundleValidationError("attributes must be a C x a matrix")
        if not np.all(np.isfinite(self.features)):
            raise BundleValidationError("features contain NaN or Inf")
        if not np.all(np.isfinite(self.attributes)):
            raise BundleValidationError("attributes contain NaN or Inf")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise BundleValidationError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        seen, unseen = set(self.split.seen_class_ids), set(self.split.unseen_class_ids)
        if seen & unseen:
            raise BundleValidationError(f"seen and unseen classes overlap: {sorted(seen & unseen)}")
        for cid in seen | unseen:
            if not 0 <= cid < self.num_classes:
                raise BundleValidationError(f"split class {cid} has no attribute row")
        for name, idx in (("train_idx", self.split.train_idx), ("test_idx", self.split.test_idx)):
            if idx and (min(idx) < 0 or max(idx) >= self.num_samples):
                raise BundleValidationError(f"{name} holds indices outside [0, {self.num_samples})")
        if self.split.train_idx:
            train_labels = set(self.labels[np.asarray(self.split.train_idx)].tolist())
            leaked = sorted(train_labels - seen)
            if leaked:
                raise BundleValidationError(
                    f"train_idx contains samples of non-seen classes {leaked}"
                )
        return self


class FeatureDataset(Dataset):
    """(feature, label) pairs over a subset of a bundle"""

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        self.data = torch.as_tensor(np.asarray(features, dtype=np.float32))
        self.targets = torch.as_tensor(np.asarray(labels, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def __getitem__(self, index):
        return self.data[index], self.targets[index]


# -- bundle IO ----------------------------------------------------------------


def encode_bundle(bundle: DatasetBundle) -> bytes:
    header = {
        "num_samples": bundle.num_samples,
        "feature_dim": bundle.feature_dim,
        "attr_dim": bundle.attr_dim,
        "num_classes": bundle.num_classes,
        "split": bundle.split.model_dump(),
        "meta": bundle.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join(
        [
            BUNDLE_MAGIC,
            struct.pack("<II", BUNDLE_VERSION, len(header_bytes)),
            header_bytes,
            np.ascontiguousarray(bundle.features, dtype="<f4").tobytes(),
            np.ascontiguousarray(bundle.labels, dtype="<f4").tobytes(),
            np.ascontiguousarray(bundle.attributes, dtype="<f4").tobytes(),
        ]
    )


def decode_bundle(data: bytes) -> DatasetBundle:
    prefix = len(BUNDLE_MAGIC) + 8
    if len(data) < prefix:
        raise BundleFormatError(f"bundle is {len(data)} bytes, shorter than its fixed prefix")
    if data[: len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
        raise BundleFormatError(f"bad magic {data[:len(BUNDLE_MAGIC)]!r}")
    version, header_len = struct.unpack("<II", data[len(BUNDLE_MAGIC) : prefix])
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    if len(data) < prefix + header_len:
        raise BundleFormatError("bundle truncated inside its header")
    try:
        header = json.loads(data[prefix : prefix + header_len].decode("utf-8"))
        n = int(header["num_samples"])
        d = int(header["feature_dim"])
        a = int(header["attr_dim"])
        num_classes = int(header["num_classes"])
        split = SplitSpec(**header["split"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise BundleFormatError(f"unreadable bundle header: {exc}")
    if min(n, d, a) < 0 or d == 0 or a == 0:
        raise BundleFormatError(f"header dimensions are invalid (n={n}, d={d}, a={a})")

    body = memoryview(data)[prefix + header_len :]
    fixed = 4 * (n * d + n)
    if len(body) < fixed:
        raise BundleFormatError(
            f"bundle truncated: need {fixed} bytes for features and labels, have {len(body)}"
        )
    remaining = len(body) - fixed
    if remaining % (4 * a) != 0:
        raise BundleFormatError(
            f"attribute block of {remaining} bytes is not a whole number of {a}-dim rows"
        )
    rows = remaining // (4 * a)
    if rows != num_classes:
        raise BundleValidationError(
            f"header declares {num_classes} classes but the bundle holds {rows} attribute rows"
        )
    features = np.frombuffer(body[: 4 * n * d], dtype="<f4").reshape(n, d)
    raw_labels = np.frombuffer(body[4 * n * d : fixed], dtype="<f4")
    if not np.all(np.isfinite(raw_labels)) or np.any(raw_labels != np.round(raw_labels)):
        raise BundleFormatError("labels block holds non-integral values")
    attributes = np.frombuffer(body[fixed:], dtype="<f4").reshape(rows, a)
    bundle = DatasetBundle(
        features=features.copy(),
        labels=raw_labels.astype(np.int64),
        attributes=attributes.copy(),
        split=split,
        meta=dict(header.get("meta", {})),
    )
    return bundle.validate()


def save_bundle(bundle: DatasetBundle, path: Union[str, Path]) -> Path:
    bundle.validate()
    target = atomic_write_bytes(path, encode_bundle(bundle))
    logger.info(f"Bundle written to {target} ({bundle.num_samples} samples)")
    return target


def load_bundle(path: Union[str, Path]) -> DatasetBundle:
    return decode_bundle(Path(path).read_bytes())


# -- splits -----------------------------------------------------------------


def make_split(
    labels: Sequence[int],
    seen_ids: Iterable[int],
    unseen_ids: Iterable[int],
    train_fraction: float,
    seed: int,
) -> SplitSpec:
    """Stratified per seen class; every unseen sample goes to test."""
    labels = np.asarray(labels, dtype=np.int64)
    seen = sorted(int(c) for c in seen_ids)
    unseen = sorted(int(c) for c in unseen_ids)
    if set(seen) & set(unseen):
        raise BundleValidationError(f"seen and unseen ids overlap: {sorted(set(seen) & set(unseen))}")
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction must lie in [0, 1], got {train_fraction}")
    uncovered = sorted(set(labels.tolist()) - set(seen) - set(unseen))
    if uncovered:
        raise BundleValidationError(f"labels {uncovered} are neither seen nor unseen")

    rng = numpy_rng(seed, "split")
    train: List[int] = []
    test: List[int] = []
    for cid in seen:
        idx = np.flatnonzero(labels == cid)
        if idx.size == 0:
            raise EmptyInputError(f"seen class {cid} has no samples")
        perm = rng.permutation(idx)
        n_train = int(np.floor(train_fraction * idx.size + 0.5))
        train.extend(perm[:n_train].tolist())
        test.extend(perm[n_train:].tolist())
    for cid in unseen:
        idx = np.flatnonzero(labels == cid)
        if idx.size == 0:
            raise EmptyInputError(f"unseen class {cid} has no samples")
        test.extend(idx.tolist())
    return SplitSpec(
        seen_class_ids=seen,
        unseen_class_ids=unseen,
        train_idx=sorted(train),
        test_idx=sorted(test),
        seed=seed,
    )


# -- synthetic world ----------------------------------------------------------


class SynthWorldConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_seen: PositiveInt = 6
    num_unseen: int = Field(4, ge=0)
    attr_dim: PositiveInt = 4
    z_dim: PositiveInt = 4
    feature_dim: PositiveInt = 16
    samples_per_class: PositiveInt = 200
    nonlinearity: Literal["linear", "tanh"] = "linear"
    attribute_kind: Literal["dense", "onehot"] = "dense"
    attribute_margin: float = Field(1.0, ge=0.0)
    feature_scale: float = Field(0.15, gt=0.0)
    offset: float = 0.5
    train_fraction: float = Field(0.8, ge=0.0, le=1.0)
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.num_seen + self.num_unseen

    @model_validator(mode="after")
    def _check_headroom(self) -> "SynthWorldConfig":
        if self.attribute_kind == "onehot":
            self.attr_dim = self.num_classes
        if self.feature_dim < self.z_dim + self.attr_dim:
            raise ValueError(
                f"feature_dim {self.feature_dim} must be at least z_dim + attr_dim "
                f"= {self.z_dim + self.attr_dim}"
            )
        return self


def _float32_exact(values: np.ndarray) -> np.ndarray:
    # Factors are rounded to float32 before use so the sidecar reloads them exactly.
    return np.asarray(values, dtype=np.float32).astype(np.float64)


@dataclass
class OracleWorld:
    """The generating map g*(z, y) with every factor it was applied to"""

    A: np.ndarray
    B: np.ndarray
    offset: float
    nonlinearity: str
    attributes: np.ndarray
    z_factors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.z_factors = np.asarray(self.z_factors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def z_dim(self) -> int:
        return int(self.A.shape[1])

    @property
    def attr_dim(self) -> int:
        return int(self.B.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.A.shape[0])

    @property
    def y_factors(self) -> np.ndarray:
        return self.attributes[self.labels]

    @property
    def mixing(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    def g(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        pre = np.asarray(z, dtype=np.float64) @ self.A.T + np.asarray(y, dtype=np.float64) @ self.B.T
        if self.nonlinearity == "tanh":
            return self.offset + 0.5 * np.tanh(pre)
        return self.offset + pre

    def features(self) -> np.ndarray:
        return self.g(self.z_factors, self.y_factors)

    def invert(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Recover (z, y) from on-manifold features via the pseudoinverse of [A|B]."""
        centered = np.asarray(x, dtype=np.float64) - self.offset
        if self.nonlinearity == "tanh":
            centered = np.arctanh(np.clip(2.0 * centered, -1.0 + 1e-15, 1.0 - 1e-15))
        factors = centered @ np.linalg.pinv(self.mixing).T
        return factors[..., : self.z_dim], factors[..., self.z_dim :]

    def min_singular_value(self) -> float:
        return float(np.linalg.svd(self.mixing, compute_uv=False).min())


def _draw_attributes(cfg: SynthWorldConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.attribute_kind == "onehot":
        return np.eye(cfg.num_classes)
    for _ in range(ATTRIBUTE_ATTEMPTS):
        table = _float32_exact(rng.standard_normal((cfg.num_classes, cfg.attr_dim)))
        diffs = table[:, None, :] - table[None, :, :]
        dists = np.sqrt((diffs**2).sum(-1))
        np.fill_diagonal(dists, np.inf)
        if cfg.num_classes < 2 or dists.min() >= cfg.attribute_margin:
            return table
    raise GCMError(
        f"could not draw {cfg.num_classes} class attributes with pairwise margin "
        f"{cfg.attribute_margin} in {ATTRIBUTE_ATTEMPTS} attempts"
    )


def _draw_mixing(cfg: SynthWorldConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    width = cfg.z_dim + cfg.attr_dim
    # Entry scale keeps every linear feature coordinate at stddev feature_scale.
    scale = cfg.feature_scale / np.sqrt(width)
    for attempt in range(RANK_ATTEMPTS):
        mixing = _float32_exact(scale * rng.standard_normal((cfg.feature_dim, width)))
        if np.linalg.matrix_rank(mixing) == width:
            return mixing[:, : cfg.z_dim], mixing[:, cfg.z_dim :]
        logger.debug(f"Rank-deficient mixing on attempt {attempt + 1}, resampling")
    raise RankDeficiencyError(
        f"[A|B] stayed rank deficient after {RANK_ATTEMPTS} attempts"
    )


def generate_synthetic_world(cfg: SynthWorldConfig) -> Tuple[DatasetBundle, OracleWorld]:
    rng = numpy_rng(cfg.seed, "data")
    attributes = _draw_attributes(cfg, rng)
    A, B = _draw_mixing(cfg, rng)
    labels = np.repeat(np.arange(cfg.num_classes, dtype=np.int64), cfg.samples_per_class)
    z = _float32_exact(rng.standard_normal((labels.size, cfg.z_dim)))
    world = OracleWorld(
        A=A,
        B=B,
        offset=cfg.offset,
        nonlinearity=cfg.nonlinearity,
        attributes=attributes,
        z_factors=z,
        labels=labels,
    )
    seen = list(range(cfg.num_seen))
    unseen = list(range(cfg.num_seen, cfg.num_classes))
    split = make_split(labels, seen, unseen, cfg.train_fraction, cfg.seed)
    bundle = DatasetBundle(
        features=world.features(),
        labels=labels,
        attributes=attributes,
        split=split,
        meta={
            "source": "synthetic",
            "nonlinearity": cfg.nonlinearity,
            "attribute_kind": cfg.attribute_kind,
            "seed": cfg.seed,
        },
    )
    logger.info(
        f"Synthetic world: {cfg.num_seen} seen + {cfg.num_unseen} unseen classes, "
        f"{labels.size} samples, sigma_min[A|B]={world.min_singular_value():.4f}"
    )
    return bundle.validate(), world


def save_oracle(world: OracleWorld, path: Union[str, Path]) -> Path:
    tensors = {
        "A": world.A,
        "B": world.B,
        "attributes": world.attributes,
        "z_factors": world.z_factors,
        "labels": world.labels.astype(np.float64),
    }
    header = {"kind": "oracle", "nonlinearity": world.nonlinearity, "offset": world.offset}
    return save_tensors(path, tensors, header)


def load_oracle(path: Union[str, Path]) -> OracleWorld:
    header, arrays = load_tensors(path)
    if header.get("kind") != "oracle":
        raise BundleFormatError(f"{path} is not an oracle sidecar")
    return OracleWorld(
        A=arrays["A"],
        B=arrays["B"],
        offset=float(header["offset"]),
        nonlinearity=str(header["nonlinearity"]),
        attributes=arrays["attributes"],
        z_factors=arrays["z_factors"],
        labels=np.rint(arrays["labels"]).astype(np.int64),
    )
