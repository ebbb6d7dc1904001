"""Deterministic multi-scale feature maps, similarity and LCKA scoring.

Feature extraction replaces a learned tower with fixed statistics: per grid
cell and per (channel, scale) it pools the Gaussian-smoothed mean, standard
deviation and the three spatial gradient components, giving
``channels * scales * 5`` descriptors per cell. Rows are ordered x fastest,
matching the volume layout, so co-located comparison between two maps on
the same geometry is row-by-row.

LCKA (linear centered kernel alignment) compares two feature matrices over
the same locations while ignoring their channel basis: invariant to
orthogonal channel mixing and isotropic scaling, in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import _kernels
from .errors import ChannelMismatch, EmptyGrid, LocationMismatch, MissingChannel
from .volume import CHANNEL_CT, CHANNEL_PET_PREPROCESSED, VoxelGrid

DEFAULT_SCALES_MM = (3.5, 7.0, 14.0)
DEFAULT_CELL_MM = 14.0
DEFAULT_FEATURE_CHANNELS = (CHANNEL_CT, CHANNEL_PET_PREPROCESSED)

#: Descriptors pooled per (channel, scale): mean, std, grad x/y/z.
STATS_PER_SCALE = 5


@dataclass(frozen=True)
class FeatureConfig:
    """What to extract: channels, Gaussian scales (mm) and cell size (mm)."""

    channels: tuple[str, ...] = DEFAULT_FEATURE_CHANNELS
    scales_mm: tuple[float, ...] = DEFAULT_SCALES_MM
    cell_mm: float = DEFAULT_CELL_MM

    def __post_init__(self):
        if not self.channels:
            raise EmptyGrid("feature config needs at least one channel")
        if not self.scales_mm or any(s <= 0 for s in self.scales_mm):
            raise ValueError(f"scales must be positive, got {self.scales_mm}")
        if self.cell_mm <= 0:
            raise ValueError(f"cell_mm must be positive, got {self.cell_mm}")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "scales_mm", tuple(float(s) for s in self.scales_mm))


@dataclass(frozen=True)
class FeatureMap:
    """Per-cell descriptor matrix on a downsampled grid."""

    dims: tuple[int, int, int]  # cells per axis (ncx, ncy, ncz)
    stride_mm: tuple[float, float, float]  # physical size per cell
    origin: tuple[float, float, float]  # world corner of cell (0, 0, 0)
    data: np.ndarray  # (n_locations, c) float64, rows x fastest

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] < 1:
            raise ValueError(f"data must be (n, c >= 1), got {d.shape}")
        nx, ny, nz = self.dims
        if d.shape[0] != nx * ny * nz:
            raise ValueError(f"{d.shape[0]} rows != cell count {nx * ny * nz}")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature values must be finite")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))

    @property
    def n_locations(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    """All-pairs cosine similarity between two maps' locations, in [-1, 1]."""

    values: np.ndarray  # (n_src, n_tgt)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.values).copy()


def extract_features(
    grid: VoxelGrid,
    scales_mm: tuple[float, ...] = DEFAULT_SCALES_MM,
    cell_mm: float = DEFAULT_CELL_MM,
    channels: tuple[str, ...] = DEFAULT_FEATURE_CHANNELS,
) -> FeatureMap:
    """Pool smoothed statistics over a regular cell partition of the grid.

    For each requested channel and Gaussian scale (sigma in mm), the field
    is smoothed and then each cell pools [mean, std, mean gradient x/y/z].
    Descriptor columns are ordered channel-major, then scale. Deterministic
    for identical inputs.
    """
    cfg = FeatureConfig(channels=tuple(channels), scales_mm=tuple(scales_mm), cell_mm=cell_mm)
    for label in cfg.channels:
        if not grid.has_channel(label):
            raise MissingChannel(
                f"feature channel {label!r} missing; volume has {list(grid.channels)}"
            )
    sx, sy, sz = grid.spacing
    if cfg.cell_mm < max(grid.spacing) - 1e-9:
        raise ValueError(f"cell_mm {cfg.cell_mm} below max spacing {max(grid.spacing)}")
    cell = tuple(max(1, int(round(cfg.cell_mm / s))) for s in (sx, sy, sz))
    nx, ny, nz = grid.dims
    n_cells = tuple(-(-n // c) for n, c in zip((nx, ny, nz), cell))

    blocks = []
    for label in cfg.channels:
        chan = grid.channel_data(label)
        for scale in cfg.scales_mm:
            sigma_vox = (scale / sz, scale / sy, scale / sx)  # array axes are (z, y, x)
            smoothed = gaussian_filter(chan, sigma=sigma_vox, mode="nearest")
            blocks.append(_kernels.pool_cell_stats(smoothed, grid.spacing, cell))
    data = np.concatenate(blocks, axis=1)
    return FeatureMap(
        dims=n_cells,
        stride_mm=tuple(c * s for c, s in zip(cell, (sx, sy, sz))),
        origin=grid.origin,
        data=data,
    )


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return m / safe


def similarity_matrix(src: FeatureMap, tgt: FeatureMap) -> SimilarityMatrix:
    """Cosine similarities between every source and target location.

    Rows are L2-normalized first; all-zero descriptor rows (empty air
    cells) stay zero rather than erroring, so their similarities are 0.
    """
    if src.n_channels != tgt.n_channels:
        raise ChannelMismatch(
            f"channel counts differ: {src.n_channels} vs {tgt.n_channels}"
        )
    return SimilarityMatrix(_normalize_rows(src.data) @ _normalize_rows(tgt.data).T)


def diag_cosine(src: FeatureMap, tgt: FeatureMap) -> float:
    """Mean cosine similarity between co-located rows.

    Equals the mean of the similarity-matrix diagonal over informative
    locations; locations where both rows are all-zero carry no signal and
    are excluded (an empty-vs-empty cell is not a disagreement). Returns 1.0
    if no informative location exists.
    """
    if src.n_channels != tgt.n_channels:
        raise ChannelMismatch(
            f"channel counts differ: {src.n_channels} vs {tgt.n_channels}"
        )
    if src.n_locations != tgt.n_locations:
        raise LocationMismatch(
            f"location counts differ: {src.n_locations} vs {tgt.n_locations}"
        )
    a, b = src.data, tgt.data
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    informative = (na > 0.0) | (nb > 0.0)
    if not np.any(informative):
        return 1.0
    dots = np.einsum("ij,ij->i", a, b)
    denom = np.where(na * nb > 0.0, na * nb, 1.0)
    cos = np.where((na > 0.0) & (nb > 0.0), dots / denom, 0.0)
    return float(cos[informative].mean())


def lcka(a: FeatureMap, b: FeatureMap) -> float:
    """Linear centered kernel alignment between co-located feature matrices.

    Column-centers both matrices and returns
    ``||X'Y||_F^2 / (||X'X||_F ||Y'Y||_F)``; 0 when either input is constant
    (zero denominator). Channel counts may differ; location counts may not.
    """
    if a.n_locations != b.n_locations:
        raise LocationMismatch(
            f"location counts differ: {a.n_locations} vs {b.n_locations}"
        )
    if a.n_locations < 2:
        raise ValueError(f"need >= 2 locations, got {a.n_locations}")
    x = a.data - a.data.mean(axis=0, keepdims=True)
    y = b.data - b.data.mean(axis=0, keepdims=True)
    num = float(np.linalg.norm(x.T @ y, "fro") ** 2)
    den = float(np.linalg.norm(x.T @ x, "fro") * np.linalg.norm(y.T @ y, "fro"))
    if den == 0.0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# Debug export: .vmeta-style header + raw float payload (rows x channels)
# ---------------------------------------------------------------------------

def save_feature_map(fm: FeatureMap, path: str | Path) -> None:
    path = Path(path)
    if path.suffix != ".fmeta":
        path = path.with_suffix(".fmeta")
    raw_name = path.stem + ".features.raw"
    header = {
        "dims": list(fm.dims),
        "stride_mm": list(fm.stride_mm),
        "origin_mm": list(fm.origin),
        "channels": fm.n_channels,
        "file": raw_name,
    }
    (path.parent / raw_name).write_bytes(
        np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    )
    path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def load_feature_map(path: str | Path) -> FeatureMap:
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    raw = path.parent / header["file"]
    data = np.frombuffer(raw.read_bytes(), dtype="<f4").reshape(-1, int(header["channels"]))
    return FeatureMap(
        dims=tuple(header["dims"]),
        stride_mm=tuple(header["stride_mm"]),
        origin=tuple(header["origin_mm"]),
        data=data.astype(np.float64),
    )
