"""Datasets, network presets, and seeded random matrix generation.

Ships the 150-sample iris CSV, relabels it into the binary
setosa-vs-rest task with the fixed 122/28 split (8 setosa, 10
versicolor, 10 virginica in the test set), and exposes the four
benchmark network shapes as presets.

All randomness flows through numpy's seeded PCG64 generator; the
algorithm identifier is exported so experiment outputs can record it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DimError, ParseError, ValidationError
from .kernels import Activation
from .planner import ElemType, Layout, MatrixBuf

PRNG_ID = "pcg64"

SPECIES = ("setosa", "versicolor", "virginica")
_TEST_COUNTS = {"setosa": 8, "versicolor": 10, "virginica": 10}


@dataclass(frozen=True)
class IrisRecord:
    features: tuple[float, float, float, float]
    species: str


@dataclass
class Dataset:
    """Binary iris task: features, 0/1 labels (setosa is 0), and the split."""

    features: np.ndarray          # 150 x 4 float32
    labels: np.ndarray            # 150 float32 in {0, 1}
    train_indices: np.ndarray
    test_indices: np.ndarray

    @property
    def train_x(self) -> np.ndarray:
        return self.features[self.train_indices]

    @property
    def train_y(self) -> np.ndarray:
        return self.labels[self.train_indices]

    @property
    def test_x(self) -> np.ndarray:
        return self.features[self.test_indices]

    @property
    def test_y(self) -> np.ndarray:
        return self.labels[self.test_indices]


def default_iris_path() -> str:
    return str(resources.files("pimsim").joinpath("iris.csv"))


def load_iris(path: str | None = None) -> list[IrisRecord]:
    """Parse the iris CSV: four numeric features plus a species name per row.

    The header row is optional. Malformed rows raise `ParseError` with
    their 1-based row number.
    """
    path = path or default_iris_path()
    records: list[IrisRecord] = []
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or (row_no == 1 and row and row[0].strip().lower().startswith("sepal")):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", row=row_no)
            try:
                features = tuple(float(v) for v in row[:4])
            except ValueError as exc:
                raise ParseError(f"non-numeric feature: {exc}", row=row_no) from None
            species = row[4].strip().lower()
            if species not in SPECIES:
                raise ParseError(f"unknown species '{row[4]}'", row=row_no)
            records.append(IrisRecord(features, species))
    if not records:
        raise ParseError("no data rows found")
    return records


def split_iris(records: list[IrisRecord], seed: int = 0) -> Dataset:
    """Deterministic 122/28 split; the test set holds 8/10/10 per species.

    Labels map setosa to 0 and both other species to 1. The same seed
    always yields the same split.
    """
    counts = {s: sum(1 for r in records if r.species == s) for s in SPECIES}
    for species, needed in _TEST_COUNTS.items():
        if counts.get(species, 0) < needed:
            raise ValidationError(
                f"need at least {needed} {species} rows, found {counts.get(species, 0)}")
    rng = np.random.default_rng(seed)
    test_idx: list[int] = []
    for species in SPECIES:
        members = np.array([i for i, r in enumerate(records) if r.species == species])
        test_idx.extend(rng.choice(members, size=_TEST_COUNTS[species], replace=False))
    test_indices = np.array(sorted(test_idx))
    train_indices = np.array(sorted(set(range(len(records))) - set(test_indices.tolist())))
    features = np.array([r.features for r in records], dtype=np.float32)
    labels = np.array([0.0 if r.species == "setosa" else 1.0 for r in records],
                      dtype=np.float32)
    return Dataset(features=features, labels=labels,
                   train_indices=train_indices, test_indices=test_indices)


@dataclass(frozen=True)
class NetPreset:
    """One benchmark network: layer sizes and the batch sizes it was run at."""

    name: str
    layer_sizes: tuple[int, ...]
    batch_sizes: tuple[int, ...]
    activations: tuple[Activation, ...]


_PRESETS = {
    "net1": NetPreset("Net1", (512, 128, 64, 1), (9984,),
                      (Activation.SIGMOID,) * 3),
    "net2": NetPreset("Net2", (16384, 4096, 4096, 1), (16384,),
                      (Activation.RELU, Activation.RELU, Activation.SIGMOID)),
    "net3": NetPreset("Net3", (112, 96, 64, 1), (2556, 5112, 7668, 10224, 15336),
                      (Activation.SIGMOID,) * 3),
    "net4": NetPreset("Net4", (176, 64, 64, 1), (2556, 5112, 7668),
                      (Activation.RELU, Activation.RELU, Activation.SIGMOID)),
}


def preset(name: str) -> NetPreset:
    try:
        return _PRESETS[name.lower()]
    except KeyError:
        raise ValidationError(
            f"unknown preset '{name}'; choose from {sorted(p.name for p in _PRESETS.values())}"
        ) from None


def preset_names() -> list[str]:
    return [p.name for p in _PRESETS.values()]


# Documented value ranges for generated matrices, per element type.
RANDOM_RANGES = {
    ElemType.FP32: (-1.0, 1.0),     # uniform in [-1, 1)
    ElemType.INT32: (-100, 100),    # uniform integers in [-100, 100)
    ElemType.INT8: (-8, 8),         # uniform integers in [-8, 8)
}


def random_matrix(rows: int, cols: int, elem_type: ElemType = ElemType.FP32,
                  seed: int = 0) -> MatrixBuf:
    """Seeded uniform random buffer; same seed, same bytes."""
    if rows < 1 or cols < 1:
        raise DimError(f"matrix dims must be positive, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    lo, hi = RANDOM_RANGES[elem_type]
    if elem_type is ElemType.FP32:
        arr = (rng.random((rows, cols), dtype=np.float32)
               * np.float32(hi - lo) + np.float32(lo))
    else:
        arr = rng.integers(lo, hi, size=(rows, cols), dtype=elem_type.np_dtype)
    return MatrixBuf.from_array(arr, elem_type, Layout.ROW_MAJOR)
