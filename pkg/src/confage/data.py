"""Synthetic heteroscedastic age features and the CSV dataset format.

Features are a fixed random embedding of age plus Gaussian noise whose scale
grows with age (and with a per-group multiplier), so older samples are harder
to place. CSV schema: ``id,age,group,f0,...,f{D-1}``; comma separated,
``.`` decimal point, UTF-8, LF line endings. Floats are written with
``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng

AGE_MIN = 3.0
AGE_MAX = 91.0
AGE_SCALE = 115.0
INGEST_MAX_AGE = 115.0
N_HARMONICS = 4


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    age: float
    group: int
    features: np.ndarray


@dataclass
class Dataset:
    """Column-oriented collection of samples."""

    ids: list
    ages: np.ndarray
    groups: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=np.float64).reshape(-1)
        self.groups = np.asarray(self.groups, dtype=np.int64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.ids)
        if self.features.ndim != 2:
            self.features = self.features.reshape(n, -1)
        if not (self.ages.size == self.groups.size == self.features.shape[0] == n):
            raise ValueError("dataset columns have different lengths")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> Sample:
        return Sample(self.ids[i], float(self.ages[i]), int(self.groups[i]), self.features[i])

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset([self.ids[i] for i in index], self.ages[index], self.groups[index], self.features[index])

    @classmethod
    def from_samples(cls, samples, input_dim=None) -> "Dataset":
        samples = list(samples)
        if not samples:
            return cls([], np.empty(0), np.empty(0, dtype=np.int64), np.empty((0, input_dim or 0)))
        return cls(
            [s.id for s in samples],
            [s.age for s in samples],
            [s.group for s in samples],
            np.stack([np.asarray(s.features, dtype=np.float64) for s in samples]),
        )


@dataclass(frozen=True)
class GenConfig:
    n: int = 10000
    input_dim: int = 16
    noise_base: float = 0.2
    noise_slope: float = 1.0
    groups: int = 4
    group_noise_mult: tuple = (0.5, 1.0, 1.5, 3.0)
    seed: int = 0
    embedding_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "group_noise_mult", tuple(float(m) for m in self.group_noise_mult))
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.noise_base < 0 or self.noise_slope < 0:
            raise ValueError("noise_base and noise_slope must be non-negative")
        if self.groups < 1:
            raise ValueError(f"groups must be positive, got {self.groups}")
        if len(self.group_noise_mult) != self.groups:
            raise ValueError(
                f"group_noise_mult has {len(self.group_noise_mult)} entries for {self.groups} groups"
            )
        if any(not m > 0 for m in self.group_noise_mult):
            raise ValueError("group noise multipliers must be positive")
        for name in ("seed", "embedding_seed"):
            if not 0 <= getattr(self, name) <= rng.MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")


def age_basis(ages) -> np.ndarray:
    """``[a, sin(k*pi*a), cos(k*pi*a)]`` for ``a = age/115`` and k = 1..4."""
    a = np.asarray(ages, dtype=np.float64).reshape(-1, 1) / AGE_SCALE
    k = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    return np.hstack([a, np.sin(k * np.pi * a), np.cos(k * np.pi * a)])


def embedding_matrix(cfg: GenConfig) -> np.ndarray:
    """The linear map from the age basis to feature space, shape (D, 9).

    Keyed by ``embedding_seed`` alone so datasets drawn with different
    sample seeds come from the same population.
    """
    g = rng.stream(cfg.embedding_seed, rng.EMBEDDING)
    return g.standard_normal((cfg.input_dim, 1 + 2 * N_HARMONICS))


def clean_features(ages, cfg: GenConfig) -> np.ndarray:
    """Noise-free features for ``ages``."""
    return age_basis(ages) @ embedding_matrix(cfg).T


def noise_scale(ages, groups, cfg: GenConfig) -> np.ndarray:
    mult = np.asarray(cfg.group_noise_mult)[np.asarray(groups)]
    return mult * (cfg.noise_base + cfg.noise_slope * np.asarray(ages) / AGE_SCALE)


def generate(cfg: GenConfig) -> Dataset:
    g = rng.stream(cfg.seed, rng.SAMPLES)
    ages = g.uniform(AGE_MIN, AGE_MAX, cfg.n)
    groups = g.integers(0, cfg.groups, cfg.n)
    eps = g.standard_normal((cfg.n, cfg.input_dim))
    features = clean_features(ages, cfg) + eps * noise_scale(ages, groups, cfg)[:, None]
    width = len(str(cfg.n - 1))
    ids = [f"s{i:0{width}d}" for i in range(cfg.n)]
    return Dataset(ids, ages, groups, features)


def header(input_dim: int) -> list:
    return ["id", "age", "group"] + [f"f{j}" for j in range(input_dim)]


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header(dataset.input_dim))
        for i in range(len(dataset)):
            w.writerow(
                [dataset.ids[i], repr(float(dataset.ages[i])), int(dataset.groups[i])]
                + [repr(v) for v in dataset.features[i].tolist()]
            )


def load_csv(path) -> Dataset:
    """Read a dataset file, validating every row.

    Raises
    ------
    DatasetFormatError
        On a bad header, a non-numeric cell or an age outside [0, 115).
        Row numbers count data rows from 1.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: missing header") from None
        if head[:3] != ["id", "age", "group"]:
            missing = [c for c in ("id", "age", "group") if c not in head[:3]]
            raise DatasetFormatError(f"{path}: missing column {missing[0] if missing else head[:3]}")
        dim = len(head) - 3
        if head != header(dim):
            raise DatasetFormatError(f"{path}: feature columns must be f0..f{dim - 1}, got {head[3:]}")
        ids, ages, groups, feats = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != dim + 3:
                raise DatasetFormatError(f"{path}: row {row_no}: expected {dim + 3} cells, got {len(row)}")
            try:
                age = float(row[1])
                group = int(row[2])
                f = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: row {row_no}: non-numeric cell ({exc})") from None
            if not (0.0 <= age < INGEST_MAX_AGE):
                raise DatasetFormatError(f"{path}: row {row_no}: age {age} outside [0, {INGEST_MAX_AGE})")
            if not all(np.isfinite(f)):
                raise DatasetFormatError(f"{path}: row {row_no}: non-finite feature")
            ids.append(row[0])
            ages.append(age)
            groups.append(group)
            feats.append(f)
    features = np.array(feats, dtype=np.float64).reshape(len(ids), dim)
    return Dataset(ids, np.array(ages), np.array(groups, dtype=np.int64), features)
