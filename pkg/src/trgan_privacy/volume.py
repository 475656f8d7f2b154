"""Volume and mask data model, phantom generation, normalization, file IO and splits.

Arrays are stored slice-major: ``data[t, y, x]`` with ``x`` varying fastest, so
the depth axis ``t`` is the sequence axis consumed by the generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np

MAGIC = "vol1"


class ConfigurationError(ValueError):
    pass


class RangeError(ValueError):
    pass


class VolumeFormatError(ValueError):
    """Base class for volume file parse errors."""


class HeaderError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class DimensionMismatchError(VolumeFormatError):
    pass


@dataclass(eq=False)
class Volume:
    data: np.ndarray
    voxel_size: tuple[float, float, float] = (3.7, 3.7, 3.7)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {self.data.shape}")
        self.voxel_size = tuple(float(v) for v in self.voxel_size)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        """Grid dimensions as (W, H, D)."""
        return (self.width, self.height, self.depth)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.voxel_size == other.voxel_size
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))


@dataclass(eq=False)
class Mask:
    data: np.ndarray
    voxel_size: tuple[float, float, float] = (3.7, 3.7, 3.7)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask data must be 3-D, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.data = data.astype(np.uint8)
        self.voxel_size = tuple(float(v) for v in self.voxel_size)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.data.shape[2], self.data.shape[1], self.data.shape[0])

    def count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (self.voxel_size == other.voxel_size
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))


@dataclass(eq=False)
class Sample:
    id: str
    volume: Volume
    mask: Mask
    member: Optional[bool] = None

    def __post_init__(self):
        if self.volume.data.shape != self.mask.data.shape:
            raise DimensionMismatchError(
                f"sample {self.id}: volume grid {self.volume.dims} != mask grid {self.mask.dims}")

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.id == other.id and self.member == other.member
                and self.volume == other.volume and self.mask == other.mask)


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    holdout_ids: tuple
    seed: int


@dataclass(frozen=True)
class PhantomConfig:
    """Parameters of the ellipsoid head phantom.

    Semi-axes are in voxels, ordered (x, y, t). Intensities are already in the
    normalized [-1, 1] range; the tumour range must sit strictly above the
    tissue range so that lesions are hot spots.
    """
    dims: tuple[int, int, int] = (16, 16, 8)
    voxel_size: tuple[float, float, float] = (3.7, 3.7, 3.7)
    head_axes_min: tuple[float, float, float] = (5.0, 5.5, 3.0)
    head_axes_max: tuple[float, float, float] = (7.0, 7.5, 3.8)
    background_range: tuple[float, float] = (-1.0, -0.9)
    tissue_range: tuple[float, float] = (-0.5, 0.0)
    tumour_range: tuple[float, float] = (0.3, 0.9)
    tumour_axes_min: tuple[float, float, float] = (1.2, 1.2, 1.0)
    tumour_axes_max: tuple[float, float, float] = (2.5, 2.5, 1.8)
    placement: float = 0.6
    noise: float = 0.05
    seed: int = 0

    def validate(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ConfigurationError(f"invalid grid dims {self.dims}")
        for name in ("background_range", "tissue_range", "tumour_range"):
            lo, hi = getattr(self, name)
            if not (-1.0 <= lo <= hi <= 1.0):
                raise ConfigurationError(f"{name} {(lo, hi)} must lie inside [-1, 1]")
        if self.tumour_range[0] <= self.tissue_range[1]:
            raise ConfigurationError("tumour intensity range must lie strictly above the tissue range")
        if self.noise < 0:
            raise ConfigurationError("noise amplitude must be >= 0")
        if not 0.0 <= self.placement <= 1.0:
            raise ConfigurationError("placement must be in [0, 1]")
        for lo, hi in zip(self.head_axes_min, self.head_axes_max):
            if not 0 < lo <= hi:
                raise ConfigurationError("head axes ranges must be positive and ordered")
        for lo, hi in zip(self.tumour_axes_min, self.tumour_axes_max):
            if not 0 < lo <= hi:
                raise ConfigurationError("tumour axes ranges must be positive and ordered")
        # smallest tumour must fit inside the smallest head when centred
        fill = sum((b / a) ** 2 for b, a in zip(self.tumour_axes_min, self.head_axes_min))
        if fill > 1.0:
            raise ConfigurationError("tumour ellipsoid cannot fit inside the head region")


def _ellipsoid(shape, center, axes):
    t, y, x = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), np.arange(shape[2]),
                          indexing="ij")
    cx, cy, ct = center
    ax, ay, at = axes
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((t - ct) / at) ** 2


def generate_phantom(config: PhantomConfig, index: int) -> Sample:
    """Deterministic head phantom with one hot tumour, a function of (seed, index)."""
    config.validate()
    if index < 0:
        raise ValueError("phantom index must be >= 0")
    rng = np.random.default_rng([int(config.seed), int(index)])
    w, h, d = (int(v) for v in config.dims)
    shape = (d, h, w)
    centre = np.array([(w - 1) / 2, (h - 1) / 2, (d - 1) / 2])

    head_axes = rng.uniform(config.head_axes_min, config.head_axes_max)
    bg = rng.uniform(*config.background_range)
    tissue_lo, tissue_hi = config.tissue_range
    tissue_base = rng.uniform(tissue_lo, tissue_hi)
    tumour_lo, tumour_hi = config.tumour_range
    tumour_rim = rng.uniform(tumour_lo, tumour_hi)
    tumour_peak = rng.uniform(tumour_rim, tumour_hi)

    for _ in range(200):
        tumour_axes = rng.uniform(config.tumour_axes_min, config.tumour_axes_max)
        offset = rng.uniform(-1.0, 1.0, size=3) * config.placement * np.maximum(head_axes - tumour_axes, 0)
        # containment of the tumour box corners inside the head ellipsoid
        if np.sum(((np.abs(offset) + tumour_axes) / head_axes) ** 2) <= 1.0:
            break
    else:
        raise ConfigurationError("could not place a tumour inside the head region")
    tumour_centre = np.round(centre + offset)

    r_head = _ellipsoid(shape, centre, head_axes)
    r_tumour = _ellipsoid(shape, tumour_centre, tumour_axes)
    head = r_head <= 1.0
    tumour = (r_tumour <= 1.0) & head

    data = np.full(shape, bg, dtype=np.float64)
    # tissue brightens slightly towards the centre but stays inside its range
    tissue_span = min(tissue_hi - tissue_base, 0.5 * (tissue_hi - tissue_lo))
    data[head] = tissue_base + tissue_span * (1.0 - np.sqrt(r_head[head]))
    tumour_profile = tumour_rim + (tumour_peak - tumour_rim) * (1.0 - np.sqrt(np.clip(r_tumour[tumour], 0, 1)))
    data[tumour] = tumour_profile
    if config.noise > 0:
        data = data + config.noise * rng.standard_normal(shape)
    data = np.clip(data, -1.0, 1.0)

    vs = tuple(config.voxel_size)
    return Sample(id=f"phantom-{config.seed}-{index:05d}",
                  volume=Volume(data.astype(np.float32), vs),
                  mask=Mask(tumour.astype(np.uint8), vs))


def normalize(volume: Volume, lo: float, hi: float) -> Volume:
    """Affine map of [lo, hi] onto [-1, 1]. Out-of-range input is an error."""
    if not lo < hi:
        raise RangeError(f"normalize needs lo < hi, got lo={lo}, hi={hi}")
    values = volume.data.astype(np.float64)
    if not np.isfinite(values).all():
        raise RangeError("volume contains non-finite values")
    if values.min() < lo or values.max() > hi:
        raise RangeError(f"values span [{values.min()}, {values.max()}], outside [{lo}, {hi}]")
    out = 2.0 * (values - lo) / (hi - lo) - 1.0
    return Volume(out.astype(np.float32), volume.voxel_size)


def split_dataset(ids: Sequence, n_holdout: int, seed: int) -> DatasetSplit:
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if not 0 < n_holdout < len(ids):
        raise ValueError(f"n_holdout must be in (0, {len(ids)}), got {n_holdout}")
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(len(ids))[:n_holdout].tolist())
    holdout = tuple(x for i, x in enumerate(ids) if i in chosen)
    train = tuple(x for i, x in enumerate(ids) if i not in chosen)
    return DatasetSplit(train_ids=train, holdout_ids=holdout, seed=seed)


# --- file IO -----------------------------------------------------------------

def _write_record(fh: BinaryIO, data: np.ndarray, voxel_size, kind: str, **extra):
    d, h, w = data.shape
    header = {"magic": MAGIC, "dims": [w, h, d], "voxel_size_mm": list(voxel_size), "kind": kind}
    header.update(extra)
    fh.write(json.dumps(header).encode("utf-8") + b"\n")
    dtype = "<f4" if kind == "volume" else "u1"
    fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def _read_record(fh: BinaryIO):
    line = fh.readline()
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise HeaderError("header line is not newline-terminated")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise HeaderError(f"bad magic, expected {MAGIC!r}")
    kind = header.get("kind")
    if kind not in ("volume", "mask"):
        raise HeaderError(f"unknown kind {kind!r}")
    dims = header.get("dims")
    vs = header.get("voxel_size_mm")
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(v, int) and v > 0 for v in dims)):
        raise DimensionMismatchError(f"dims must be three positive integers, got {dims!r}")
    if not isinstance(vs, list) or len(vs) != 3:
        raise HeaderError(f"voxel_size_mm must have three entries, got {vs!r}")
    w, h, d = dims
    itemsize = 4 if kind == "volume" else 1
    nbytes = w * h * d * itemsize
    payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {nbytes}")
    dtype = "<f4" if kind == "volume" else "u1"
    data = np.frombuffer(payload, dtype=dtype).reshape(d, h, w).copy()
    return header, data


def read_grid(path) -> Volume | Mask:
    """Read a file holding exactly one volume or mask record."""
    with open(path, "rb") as fh:
        rec = _read_record(fh)
        if rec is None:
            raise HeaderError("empty file")
        if fh.read(1):
            raise DimensionMismatchError("payload longer than header dims")
    header, data = rec
    vs = tuple(header["voxel_size_mm"])
    if header["kind"] == "volume":
        return Volume(data.astype(np.float32), vs)
    return Mask(data, vs)


def write_grid(grid: Volume | Mask, path):
    kind = "volume" if isinstance(grid, Volume) else "mask"
    with open(path, "wb") as fh:
        _write_record(fh, grid.data, grid.voxel_size, kind)


def save_volume(sample: Sample, path):
    """Write a sample as a volume record followed by its mask record."""
    with open(path, "wb") as fh:
        _write_record(fh, sample.volume.data, sample.volume.voxel_size, "volume",
                      id=sample.id, member=sample.member)
        _write_record(fh, sample.mask.data, sample.mask.voxel_size, "mask")


def load_volume(path) -> Sample:
    with open(path, "rb") as fh:
        first = _read_record(fh)
        if first is None:
            raise HeaderError("empty file")
        second = _read_record(fh)
        if second is None:
            raise HeaderError("sample file lacks a mask record")
        if fh.read(1):
            raise DimensionMismatchError("trailing bytes after mask record")
    (vh, vdata), (mh, mdata) = first, second
    if vh["kind"] != "volume" or mh["kind"] != "mask":
        raise HeaderError("sample file must hold a volume record then a mask record")
    if vh["dims"] != mh["dims"]:
        raise DimensionMismatchError(f"volume dims {vh['dims']} != mask dims {mh['dims']}")
    volume = Volume(vdata, tuple(vh["voxel_size_mm"]))
    try:
        mask = Mask(mdata, tuple(mh["voxel_size_mm"]))
    except ValueError as exc:
        raise HeaderError(str(exc)) from None
    return Sample(id=str(vh.get("id", Path(path).stem)), volume=volume, mask=mask,
                  member=vh.get("member"))
