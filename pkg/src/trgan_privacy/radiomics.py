"""Tumour radiomic features and population-level correlation fidelity scores."""
from __future__ import annotations

import itertools
from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np

from ._kernels import glcm_counts
from .volume import Mask, Volume

FEATURES = ("mtv", "suv_max", "suv_mean", "suv_peak", "tlg",
            "glcm_energy", "glcm_entropy", "glcm_homogeneity")

# 5 equal-width bins over [-1, 1]; intervals are right-closed
CORRELATION_BIN_EDGES = np.array([-1.0, -0.6, -0.2, 0.2, 0.6, 1.0])


class FeatureUndefinedError(ValueError):
    pass


class DegenerateFeatureError(ValueError):
    def __init__(self, feature: str):
        super().__init__(f"feature {feature!r} is constant across the population")
        self.feature = feature


def unit_offsets() -> np.ndarray:
    """The 13 unique unit-distance 3-D offsets as (dx, dy, dt) rows."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=3):
        nz = [v for v in off if v != 0]
        if nz and nz[0] > 0:
            out.append(off)
    return np.array(out, dtype=np.int32)


@dataclass(frozen=True)
class RadiomicVector:
    mtv: float
    suv_max: float
    suv_mean: float
    suv_peak: float
    tlg: float
    glcm_energy: float
    glcm_entropy: float
    glcm_homogeneity: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


assert tuple(f.name for f in fields(RadiomicVector)) == FEATURES


def quantize(values: np.ndarray, levels: int) -> np.ndarray:
    """Equal-width bins between min and max; a constant region maps to level 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.int32)
    q = np.floor((values.astype(np.float64) - lo) / (hi - lo) * levels)
    return np.clip(q, 0, levels - 1).astype(np.int32)


def glcm(volume: Volume, mask: Mask, levels: int = 8, offsets=None) -> np.ndarray:
    """Normalized symmetric grey level co-occurrence matrix over in-mask pairs."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    m = np.ascontiguousarray(mask.data, dtype=np.uint8)
    if m.shape != volume.data.shape:
        raise ValueError("volume and mask grids differ")
    if not m.any():
        raise FeatureUndefinedError("empty mask")
    offsets = unit_offsets() if offsets is None else np.ascontiguousarray(offsets, dtype=np.int32)
    qmap = np.zeros(m.shape, dtype=np.int32)
    inside = m.astype(bool)
    qmap[inside] = quantize(volume.data[inside], levels)
    counts = glcm_counts(qmap, m, levels, offsets)
    total = counts.sum()
    if total == 0:
        # no in-mask neighbour pairs: same convention as a constant region
        counts[0, 0] = 1.0
        total = 1.0
    return counts / total


def glcm_texture(p: np.ndarray) -> tuple[float, float, float]:
    """Energy, entropy (bits) and homogeneity of a normalized GLCM."""
    i, j = np.indices(p.shape)
    nz = p[p > 0]
    energy = float(np.sum(p * p))
    entropy = float(-np.sum(nz * np.log2(nz)))
    homogeneity = float(np.sum(p / (1.0 + np.abs(i - j))))
    return energy, entropy, homogeneity


def radiomic_features(volume: Volume, mask: Mask, levels: int = 8) -> RadiomicVector:
    m = mask.data.astype(bool)
    if m.shape != volume.data.shape:
        raise ValueError("volume and mask grids differ")
    if not m.any():
        raise FeatureUndefinedError("radiomic features are undefined for an empty mask")
    data = volume.data.astype(np.float64)
    inside = data[m]
    voxel_volume = float(np.prod(volume.voxel_size))
    mtv = m.sum() * voxel_volume
    suv_max = float(inside.max())
    suv_mean = float(inside.mean())
    # peak: 3x3x3 neighbourhood around the first in-mask maximum, clipped to bounds
    masked = np.where(m, data, -np.inf)
    t, y, x = np.unravel_index(int(np.argmax(masked)), data.shape)
    hood = data[max(t - 1, 0):t + 2, max(y - 1, 0):y + 2, max(x - 1, 0):x + 2]
    suv_peak = float(hood.mean())
    energy, entropy, homogeneity = glcm_texture(glcm(volume, mask, levels))
    return RadiomicVector(mtv=float(mtv), suv_max=suv_max, suv_mean=suv_mean, suv_peak=suv_peak,
                          tlg=float(mtv * suv_mean), glcm_energy=energy, glcm_entropy=entropy,
                          glcm_homogeneity=homogeneity)


def feature_correlations(vectors: Sequence[RadiomicVector]) -> np.ndarray:
    """8x8 Pearson correlation matrix over a population of feature vectors."""
    if len(vectors) < 3:
        raise ValueError("need at least 3 feature vectors")
    x = np.stack([v.as_array() if isinstance(v, RadiomicVector) else np.asarray(v, float)
                  for v in vectors])
    for k, name in enumerate(FEATURES):
        if np.ptp(x[:, k]) == 0:
            raise DegenerateFeatureError(name)
    xc = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(xc * xc, axis=0))
    corr = (xc.T @ xc) / np.outer(norms, norms)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def _upper_pairs(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("correlation matrix must be square")
    return matrix[np.triu_indices(matrix.shape[0], k=1)]


def correlation_mse(real: np.ndarray, syn: np.ndarray) -> float:
    a, b = _upper_pairs(real), _upper_pairs(syn)
    if a.shape != b.shape:
        raise ValueError("correlation matrices differ in shape")
    return float(np.mean((a - b) ** 2))


def correlation_bins(values: np.ndarray) -> np.ndarray:
    return np.searchsorted(CORRELATION_BIN_EDGES[1:-1], values, side="left")


def correlation_accuracy(real: np.ndarray, syn: np.ndarray) -> float:
    a, b = _upper_pairs(real), _upper_pairs(syn)
    if a.shape != b.shape:
        raise ValueError("correlation matrices differ in shape")
    return float(np.mean(correlation_bins(a) == correlation_bins(b)))


def write_feature_table(vectors: Sequence[RadiomicVector], path, ids: Sequence[str] | None = None):
    ids = list(ids) if ids is not None else [str(i) for i in range(len(vectors))]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(FEATURES) + "\n")
        for sid, v in zip(ids, vectors):
            fh.write(sid + "," + ",".join(repr(float(x)) for x in v.as_array()) + "\n")


def read_feature_table(path) -> tuple[list[str], list[RadiomicVector]]:
    ids, vectors = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[1:] != list(FEATURES):
            raise ValueError(f"unexpected feature header {header}")
        for line in fh:
            parts = line.strip().split(",")
            ids.append(parts[0])
            vectors.append(RadiomicVector(*map(float, parts[1:])))
    return ids, vectors
