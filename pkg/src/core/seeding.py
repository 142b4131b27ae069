"""Deterministic seed splitting.

All randomness in a run flows from one root seed. Each consumer (data,
split, init, training, sampling, classifier, oracle) gets its own stream so
that adding draws in one place never shifts another.
"""

import hashlib
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import torch

CONSUMERS = ("data", "split", "init", "training", "batches", "sampling", "classifier", "validation", "oracle")


def derive_seed(root_seed: int, consumer: str) -> int:
    digest = hashlib.sha256(f"{int(root_seed)}:{consumer}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def numpy_rng(root_seed: int, consumer: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, consumer))


def torch_generator(root_seed: int, consumer: str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(root_seed, consumer))
    return generator


@contextmanager
def seeded_torch(seed: int) -> Iterator[None]:
    """Run a block under a fixed global torch seed without leaking state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield
