"""Synthetic dataset generators, few-shot subsampling, and CSV persistence.

All generators are seeded and deterministic. The synthetic families are
normalized to roughly the unit box so one l-infinity radius is meaningful
across them. CSV files are UTF-8 with a header row; an optional trailing
integer column named ``label`` marks a labeled batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FEW_SHOT_OE",
    "GENERATED_BOUNDARY",
    "OUTLIER_DATASET",
    "LabeledBatch",
    "OutlierPool",
    "LatentBatch",
    "DatasetSpec",
    "gen_gaussian_mixture",
    "gen_ring",
    "gen_uniform_noise",
    "gen_low_frequency_noise",
    "generate_dataset",
    "sample_few_shots",
    "load_csv",
    "save_csv",
]

FEW_SHOT_OE = "few-shot-oe"
GENERATED_BOUNDARY = "generated-boundary"
OUTLIER_DATASET = "outlier-dataset"


@dataclass
class LabeledBatch:
    """Labeled normal-class data: inputs (N, d), integer labels (N,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1 or len(self.inputs) != len(self.labels):
            raise ValueError(
                f"labeled batch needs (N, d) inputs and (N,) labels, got {self.inputs.shape} / {self.labels.shape}"
            )

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass
class OutlierPool:
    """Unlabeled outlier samples plus a provenance tag. May be empty."""

    inputs: np.ndarray
    source: str = OUTLIER_DATASET

    def __post_init__(self):
        arr = np.asarray(self.inputs, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"outlier pool needs a (M, d) matrix, got shape {arr.shape}")
        self.inputs = np.ascontiguousarray(arr)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def size(self) -> int:
        return len(self.inputs)

    @property
    def is_empty(self) -> bool:
        return len(self.inputs) == 0


@dataclass
class LatentBatch:
    """Standard-normal latent draws with their seed for provenance."""

    values: np.ndarray
    seed: int | tuple = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"latent batch must be (N, latent_dim), got {self.values.shape}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class DatasetSpec:
    """Declarative description of one synthetic (or CSV) dataset."""

    kind: str
    dim: int = 2
    size: int = 100
    seed: int = 0
    # gaussian-mixture
    means: list = field(default_factory=list)
    cov_scale: float = 0.1
    # ring
    r_inner: float = 0.8
    r_outer: float = 1.2
    center: list = field(default_factory=list)
    # uniform-noise
    box_lo: float = -1.0
    box_hi: float = 1.0
    # low-frequency-noise
    amplitude: float = 1.0
    window: int = 2
    # csv
    path: str = ""

    KINDS = ("gaussian-mixture", "ring", "uniform-noise", "low-frequency-noise", "csv")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown dataset kind '{self.kind}' (one of {self.KINDS})")
        if self.kind != "csv" and (self.size < 1 or self.dim < 1):
            raise ValueError(f"dataset size and dim must be >= 1, got size={self.size} dim={self.dim}")


def gen_gaussian_mixture(spec: DatasetSpec) -> LabeledBatch:
    """Equal-sized isotropic Gaussian clusters, label = component index."""
    means = np.asarray(spec.means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 1:
        raise ValueError("gaussian-mixture needs at least one component mean")
    if means.shape[1] != spec.dim:
        raise ValueError(f"component means have dim {means.shape[1]}, spec says {spec.dim}")
    if spec.cov_scale <= 0:
        raise ValueError("cov_scale must be positive")
    k = means.shape[0]
    rng = np.random.default_rng(spec.seed)
    counts = [spec.size // k + (1 if i < spec.size % k else 0) for i in range(k)]
    chunks, labels = [], []
    for i, n in enumerate(counts):
        chunks.append(means[i] + spec.cov_scale * rng.standard_normal((n, spec.dim)))
        labels.append(np.full(n, i, dtype=np.int64))
    return LabeledBatch(np.concatenate(chunks), np.concatenate(labels))


def gen_ring(spec: DatasetSpec, source: str = OUTLIER_DATASET) -> OutlierPool:
    """Spherical shell: uniform direction, radius uniform in [r_inner, r_outer]."""
    if not (0.0 <= spec.r_inner <= spec.r_outer):
        raise ValueError(f"ring radii must satisfy 0 <= r_inner <= r_outer, got {spec.r_inner}, {spec.r_outer}")
    rng = np.random.default_rng(spec.seed)
    direction = rng.standard_normal((spec.size, spec.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(spec.r_inner, spec.r_outer, spec.size)
    center = np.asarray(spec.center, dtype=np.float64) if len(spec.center) else np.zeros(spec.dim)
    return OutlierPool(center + direction * radius[:, None], source=source)


def gen_uniform_noise(spec: DatasetSpec, source: str = OUTLIER_DATASET) -> OutlierPool:
    if not spec.box_lo < spec.box_hi:
        raise ValueError(f"uniform-noise box is empty: [{spec.box_lo}, {spec.box_hi}]")
    rng = np.random.default_rng(spec.seed)
    return OutlierPool(rng.uniform(spec.box_lo, spec.box_hi, (spec.size, spec.dim)), source=source)


def _smooth_circular(noise: np.ndarray, window: int) -> np.ndarray:
    """Circular moving average across the coordinate axis."""
    out = np.zeros_like(noise)
    for k in range(window):
        out += np.roll(noise, -k, axis=1)
    return out / window


def gen_low_frequency_noise(spec: DatasetSpec, normals: LabeledBatch, source: str = OUTLIER_DATASET) -> OutlierPool:
    """Normal samples plus amplitude * smoothed Gaussian noise.

    Smoothing is a circular moving average over coordinates, which suppresses
    the high-frequency content of the perturbation; window == d makes the
    perturbation constant across coordinates for each sample.
    """
    if spec.amplitude < 0:
        raise ValueError("low-frequency-noise amplitude must be >= 0")
    d = normals.dim
    if spec.window < 1 or spec.window > d:
        raise ValueError(f"smoothing window must be in [1, {d}], got {spec.window}")
    rng = np.random.default_rng(spec.seed)
    rows = rng.integers(0, len(normals), spec.size)
    noise = _smooth_circular(rng.standard_normal((spec.size, d)), spec.window)
    return OutlierPool(normals.inputs[rows] + spec.amplitude * noise, source=source)


def generate_dataset(spec: DatasetSpec, normals: LabeledBatch | None = None, source: str = OUTLIER_DATASET):
    """Dispatch a DatasetSpec to its generator. LFN requires base normals."""
    if spec.kind == "gaussian-mixture":
        return gen_gaussian_mixture(spec)
    if spec.kind == "ring":
        return gen_ring(spec, source=source)
    if spec.kind == "uniform-noise":
        return gen_uniform_noise(spec, source=source)
    if spec.kind == "low-frequency-noise":
        if normals is None:
            raise ValueError("low-frequency-noise needs a base normal batch")
        return gen_low_frequency_noise(spec, normals, source=source)
    if spec.kind == "csv":
        loaded = load_csv(spec.path)
        if isinstance(loaded, OutlierPool):
            loaded.source = source
        return loaded
    raise ValueError(f"unknown dataset kind '{spec.kind}'")


def sample_few_shots(pool: OutlierPool, n: int, seed: int | tuple = 0) -> OutlierPool:
    """Uniform without-replacement subset of the pool, tag preserved."""
    if not 0 <= n <= pool.size:
        raise ValueError(f"cannot sample {n} few-shots from a pool of {pool.size}")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(pool.size)[:n]
    return OutlierPool(pool.inputs[idx], source=pool.source)


def save_csv(batch, path) -> None:
    """Write a LabeledBatch or OutlierPool; 17 significant digits per value."""
    inputs = batch.inputs
    labels = getattr(batch, "labels", None)
    d = inputs.shape[1]
    header = ",".join(f"x{i}" for i in range(d))
    if labels is not None:
        header += ",label"
    lines = [header]
    for r in range(len(inputs)):
        row = ",".join(format(v, ".17g") for v in inputs[r])
        if labels is not None:
            row += f",{int(labels[r])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_csv(path):
    """Read a CSV written by save_csv (or hand-made with the same layout).

    Returns a LabeledBatch when the final header column is ``label``, else an
    OutlierPool. Malformed rows are reported with their 1-based file line.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    labeled = bool(header) and header[-1] == "label"
    ncols = len(header)
    if ncols < 1 or (labeled and ncols < 2):
        raise ValueError(f"{path}: header must name at least one feature column")
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise ValueError(f"{path}: line {lineno}: expected {ncols} columns, found {len(parts)}")
        try:
            if labeled:
                rows.append([float(v) for v in parts[:-1]])
                labels.append(int(parts[-1]))
            else:
                rows.append([float(v) for v in parts])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric value") from None
    dim = ncols - 1 if labeled else ncols
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    if labeled:
        return LabeledBatch(inputs, np.array(labels, dtype=np.int64))
    return OutlierPool(inputs)
