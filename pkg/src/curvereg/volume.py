"""Dual-channel 3D scan volumes in physical (mm) coordinates.

A :class:`VoxelGrid` stores per-channel float32 scalar fields together with
voxel spacing and origin. World coordinates follow the voxel-center
convention ``world(v) = origin + (v + 0.5) * spacing``, stated here once and
used everywhere. Arrays are shaped ``(nz, ny, nx)`` in C order so the flat
layout is x-fastest, matching the ``.raw`` on-disk format.

Grids are immutable after construction (arrays are marked read-only) and
therefore safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    EmptyGrid,
    GridMismatch,
    HeaderParse,
    IndexOutOfRange,
    IoFailure,
    MissingChannel,
    MissingFile,
    SizeMismatch,
)

CHANNEL_CT = "CT"
CHANNEL_PET = "PET"
CHANNEL_PET_PREPROCESSED = "PET_PREPROCESSED"

KNOWN_CHANNELS = (CHANNEL_CT, CHANNEL_PET, CHANNEL_PET_PREPROCESSED)

#: Physically plausible out-of-bounds fill per channel (air for CT,
#: no activity for PET).
DEFAULT_FILL = {
    CHANNEL_CT: -1000.0,
    CHANNEL_PET: 0.0,
    CHANNEL_PET_PREPROCESSED: 0.0,
}

#: Fraction of the PET maximum used as the log clamp in preprocess_pet.
DEFAULT_LOG_EPSILON = 1e-3


def default_fill(channel: str) -> float:
    return DEFAULT_FILL.get(channel, 0.0)


@dataclass(frozen=True)
class Geometry:
    """Grid placement: voxel counts, spacing (mm/voxel) and origin (mm)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise EmptyGrid(f"dims must be three values >= 2, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise EmptyGrid(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_to_world(self, v) -> np.ndarray:
        """world = origin + (v + 0.5) * spacing, with v = (vx, vy, vz)."""
        v = np.asarray(v, dtype=np.float64)
        return np.asarray(self.origin) + (v + 0.5) * np.asarray(self.spacing)

    def world_to_voxel(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing) - 0.5

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel center, x fastest, shape (n, 3)."""
        nx, ny, nz = self.dims
        sx, sy, sz = self.spacing
        ox, oy, oz = self.origin
        xs = ox + (np.arange(nx) + 0.5) * sx
        ys = oy + (np.arange(ny) + 0.5) * sy
        zs = oz + (np.arange(nz) + 0.5) * sz
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx.reshape(-1), yy.reshape(-1), zz.reshape(-1)], axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Outer physical extent (lo, hi) in mm, spanning whole voxels."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing)
        return lo, hi


@dataclass(frozen=True)
class VoxelGrid:
    """Immutable multi-channel scalar field on a regular 3D grid."""

    geometry: Geometry
    channels: tuple[str, ...]
    data: tuple[np.ndarray, ...]
    fill_values: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.channels) == 0:
            raise EmptyGrid("a VoxelGrid needs at least one channel")
        if len(set(self.channels)) != len(self.channels):
            raise EmptyGrid(f"duplicate channel labels: {self.channels}")
        nx, ny, nz = self.geometry.dims
        arrays = []
        for label, arr in zip(self.channels, self.data, strict=True):
            a = np.ascontiguousarray(arr, dtype=np.float32)
            if a.size != nx * ny * nz:
                raise SizeMismatch(
                    f"channel {label}: {a.size} values, dims {self.geometry.dims} "
                    f"need {nx * ny * nz}"
                )
            a = a.reshape(nz, ny, nx)
            a.flags.writeable = False
            arrays.append(a)
        object.__setattr__(self, "data", tuple(arrays))
        object.__setattr__(self, "channels", tuple(self.channels))
        fills = self.fill_values or tuple(default_fill(c) for c in self.channels)
        if len(fills) != len(self.channels):
            raise EmptyGrid("fill_values length must match channels")
        object.__setattr__(self, "fill_values", tuple(float(f) for f in fills))

    # -- geometry passthrough ------------------------------------------------
    @property
    def dims(self) -> tuple[int, int, int]:
        return self.geometry.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.geometry.spacing

    @property
    def origin(self) -> tuple[float, float, float]:
        return self.geometry.origin

    def voxel_to_world(self, v):
        return self.geometry.voxel_to_world(v)

    def world_to_voxel(self, p):
        return self.geometry.world_to_voxel(p)

    # -- channels --------------------------------------------------------------
    def has_channel(self, label: str) -> bool:
        return label in self.channels

    def channel_index(self, label: str) -> int:
        try:
            return self.channels.index(label)
        except ValueError:
            raise MissingChannel(f"no channel {label!r}; volume has {list(self.channels)}") from None

    def channel_data(self, label: str) -> np.ndarray:
        """Read-only (nz, ny, nx) float32 array for one channel."""
        return self.data[self.channel_index(label)]

    def channel_fill(self, label: str) -> float:
        return self.fill_values[self.channel_index(label)]

    def with_channel(self, label: str, values: np.ndarray, fill: float | None = None) -> "VoxelGrid":
        """New grid with `label` added (or replaced)."""
        if label in self.channels:
            keep = [i for i, c in enumerate(self.channels) if c != label]
            channels = tuple(self.channels[i] for i in keep)
            data = tuple(self.data[i] for i in keep)
            fills = tuple(self.fill_values[i] for i in keep)
        else:
            channels, data, fills = self.channels, self.data, self.fill_values
        f = default_fill(label) if fill is None else float(fill)
        return VoxelGrid(
            geometry=self.geometry,
            channels=channels + (label,),
            data=data + (np.asarray(values, dtype=np.float32),),
            fill_values=fills + (f,),
        )


@dataclass(frozen=True)
class SliceImage:
    """One z plane of a channel, for display; values are unmodified."""

    axis: str
    index: int
    width: int
    height: int
    values: np.ndarray  # (height, width) float32, read-only
    window: tuple[float, float]

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32).reshape(self.height, self.width)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def make_grid(dims, spacing, origin, channels, arrays, fill_values=()) -> VoxelGrid:
    return VoxelGrid(
        geometry=Geometry(tuple(dims), tuple(spacing), tuple(origin)),
        channels=tuple(channels),
        data=tuple(arrays),
        fill_values=tuple(fill_values),
    )


# ---------------------------------------------------------------------------
# I/O: .vmeta JSON header + little-endian float32 .raw payloads
# ---------------------------------------------------------------------------

def _raw_name(stem: str, label: str) -> str:
    return f"{stem}.{label.lower()}.raw"


def save_volume(grid: VoxelGrid, path: str | Path) -> None:
    """Write a grid as a `.vmeta` header plus one `.raw` file per channel.

    The round trip through :func:`load_volume` is bit-exact.
    """
    path = Path(path)
    if path.suffix != ".vmeta":
        path = path.with_suffix(".vmeta")
    stem = path.stem
    header = {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "origin_mm": list(grid.origin),
        "channels": [
            {"label": label, "file": _raw_name(stem, label)} for label in grid.channels
        ],
    }
    try:
        for label in grid.channels:
            payload = np.ascontiguousarray(grid.channel_data(label), dtype="<f4")
            (path.parent / _raw_name(stem, label)).write_bytes(payload.tobytes())
        path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write volume to {path}: {e}") from e


def load_volume(path: str | Path) -> VoxelGrid:
    """Load a `.vmeta` volume (or a detached-header NRRD, see load_nrrd)."""
    path = Path(path)
    if path.suffix in (".nhdr", ".nrrd"):
        return load_nrrd(path)
    if not path.exists():
        raise MissingFile(f"no such volume header: {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HeaderParse(f"cannot parse {path}: {e}") from e

    try:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing_mm"])
        origin = tuple(float(o) for o in header["origin_mm"])
        channel_specs = [(str(c["label"]), str(c["file"])) for c in header["channels"]]
    except (KeyError, TypeError, ValueError) as e:
        raise HeaderParse(f"malformed header {path}: {e}") from e
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3 or not channel_specs:
        raise HeaderParse(f"malformed header {path}: wrong field arity")

    nx, ny, nz = dims
    expected = nx * ny * nz * 4
    labels, arrays = [], []
    for label, fname in channel_specs:
        raw = path.parent / fname
        if not raw.exists():
            raise MissingFile(f"missing payload {raw} for channel {label}")
        blob = raw.read_bytes()
        if len(blob) != expected:
            raise SizeMismatch(
                f"{raw}: {len(blob)} bytes, dims {dims} need {expected}"
            )
        labels.append(label)
        arrays.append(np.frombuffer(blob, dtype="<f4"))
    try:
        return make_grid(dims, spacing, origin, labels, arrays)
    except EmptyGrid as e:
        raise HeaderParse(f"malformed header {path}: {e}") from e


def load_nrrd(path: str | Path, channel: str = CHANNEL_CT) -> VoxelGrid:
    """Import a detached-header NRRD volume as a single-channel grid.

    Only the minimal profile is accepted: `type: float`, little endian, raw
    encoding, 3 dims. Anything else raises HeaderParse. NRRD's `space
    origin` names the first voxel *center*; it is converted to this module's
    corner-based origin.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such NRRD header: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise HeaderParse(f"cannot read {path}: {e}") from e

    lines = text.splitlines()
    if not lines or not lines[0].startswith("NRRD"):
        raise HeaderParse(f"{path}: missing NRRD magic")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise HeaderParse(f"{path}: bad header line {line!r}")
        key, _, value = line.partition(":")
        fields[key.strip().lower()] = value.strip()

    def need(key: str) -> str:
        if key not in fields:
            raise HeaderParse(f"{path}: missing NRRD field {key!r}")
        return fields[key]

    if need("dimension") != "3":
        raise HeaderParse(f"{path}: only 3-D NRRD supported")
    if need("type") not in ("float", "float32"):
        raise HeaderParse(f"{path}: only type float supported")
    if need("encoding") != "raw":
        raise HeaderParse(f"{path}: only raw encoding supported")
    if fields.get("endian", "little") != "little":
        raise HeaderParse(f"{path}: only little-endian supported")

    try:
        dims = tuple(int(t) for t in need("sizes").split())
    except ValueError as e:
        raise HeaderParse(f"{path}: bad sizes: {e}") from e
    if len(dims) != 3:
        raise HeaderParse(f"{path}: sizes must have 3 entries")

    if "spacings" in fields:
        try:
            spacing = tuple(float(t) for t in fields["spacings"].split())
        except ValueError as e:
            raise HeaderParse(f"{path}: bad spacings: {e}") from e
    elif "space directions" in fields:
        spacing = _diagonal_spacing(fields["space directions"], path)
    else:
        raise HeaderParse(f"{path}: no spacing information")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise HeaderParse(f"{path}: spacing must be 3 positive values")

    center0 = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        center0 = _parse_vector(fields["space origin"], path)
    origin = tuple(c - 0.5 * s for c, s in zip(center0, spacing))

    datafile = fields.get("data file") or fields.get("datafile")
    if not datafile:
        raise HeaderParse(f"{path}: only detached headers supported (missing data file)")
    raw = path.parent / datafile
    if not raw.exists():
        raise MissingFile(f"missing NRRD payload {raw}")
    blob = raw.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * 4
    if len(blob) != expected:
        raise SizeMismatch(f"{raw}: {len(blob)} bytes, sizes {dims} need {expected}")
    return make_grid(dims, spacing, origin, [channel], [np.frombuffer(blob, dtype="<f4")])


def _parse_vector(text: str, path: Path) -> tuple[float, float, float]:
    try:
        parts = text.strip().lstrip("(").rstrip(")").split(",")
        v = tuple(float(t) for t in parts)
    except ValueError as e:
        raise HeaderParse(f"{path}: bad vector {text!r}: {e}") from e
    if len(v) != 3:
        raise HeaderParse(f"{path}: bad vector {text!r}")
    return v


def _diagonal_spacing(text: str, path: Path) -> tuple[float, float, float]:
    vecs = [t for t in text.replace("(", " (").split() if t.startswith("(")]
    if len(vecs) != 3:
        raise HeaderParse(f"{path}: bad space directions {text!r}")
    spacing = []
    for axis, vec in enumerate(vecs):
        v = _parse_vector(vec, path)
        for other in range(3):
            if other != axis and v[other] != 0.0:
                raise HeaderParse(f"{path}: non-axis-aligned space directions unsupported")
        spacing.append(v[axis])
    return tuple(spacing)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def preprocess_pet(grid: VoxelGrid, epsilon: float = DEFAULT_LOG_EPSILON) -> VoxelGrid:
    """Add the PET_PREPROCESSED channel: |grad log PET| in 1/mm.

    PET activity is clamped below at ``epsilon * max(PET, 0)`` before the
    log (negatives count as zero background), which makes the output exactly
    invariant to global positive rescaling of the PET channel. Gradients use
    central differences with the grid spacing, one-sided at the borders.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    pet = grid.channel_data(CHANNEL_PET).astype(np.float64)
    pet = np.maximum(pet, 0.0)
    peak = float(pet.max())
    clamp = epsilon * peak if peak > 0 else 1.0
    logf = np.log(np.maximum(pet, clamp))
    sx, sy, sz = grid.spacing
    gz, gy, gx = np.gradient(logf, sz, sy, sx)
    mag = np.sqrt(gx * gx + gy * gy + gz * gz)
    return grid.with_channel(CHANNEL_PET_PREPROCESSED, mag.astype(np.float32))


def trilinear_sample(grid: VoxelGrid, channel: str, p, fill: float | None = None) -> float:
    """Trilinear interpolation at one world point (mm).

    Out-of-bounds (outside the voxel-center hull) returns the channel's
    configured fill value, or `fill` when given.
    """
    data = grid.channel_data(channel)
    f = grid.channel_fill(channel) if fill is None else float(fill)
    v = grid.world_to_voxel(np.asarray(p, dtype=np.float64)).reshape(1, 3)
    return float(_kernels.trilinear_gather(data, v, f)[0])


def sample_channel(grid: VoxelGrid, channel: str, points: np.ndarray, fill: float | None = None) -> np.ndarray:
    """Vectorized trilinear sampling at (N, 3) world points."""
    data = grid.channel_data(channel)
    f = grid.channel_fill(channel) if fill is None else float(fill)
    v = grid.world_to_voxel(np.asarray(points, dtype=np.float64))
    return _kernels.trilinear_gather(data, v, f)


def extract_slice(grid: VoxelGrid, channel: str, z_index: int, window: tuple[float, float] | None = None) -> SliceImage:
    """Copy one z plane for display. `window` is metadata only."""
    nx, ny, nz = grid.dims
    if not 0 <= z_index < nz:
        raise IndexOutOfRange(f"z_index {z_index} outside [0, {nz})")
    plane = grid.channel_data(channel)[z_index]
    if window is None:
        window = (float(plane.min()), float(plane.max()))
    return SliceImage(
        axis="z",
        index=int(z_index),
        width=nx,
        height=ny,
        values=plane.copy(),
        window=(float(window[0]), float(window[1])),
    )


def residual_image(a: VoxelGrid, b: VoxelGrid, channel: str) -> VoxelGrid:
    """Voxel-wise difference (a - b) of one channel as a new grid."""
    if a.dims != b.dims or a.spacing != b.spacing or a.origin != b.origin:
        raise GridMismatch(
            f"grids differ: dims {a.dims} vs {b.dims}, spacing {a.spacing} vs "
            f"{b.spacing}, origin {a.origin} vs {b.origin}"
        )
    diff = a.channel_data(channel).astype(np.float64) - b.channel_data(channel).astype(np.float64)
    return make_grid(
        a.dims, a.spacing, a.origin, [channel], [diff.astype(np.float32)], [0.0]
    )


def resample(grid: VoxelGrid, geometry: Geometry, channels: tuple[str, ...] | None = None) -> VoxelGrid:
    """Resample channels onto a new geometry by trilinear interpolation."""
    channels = tuple(channels) if channels is not None else grid.channels
    centers = geometry.voxel_centers()
    arrays, fills = [], []
    for label in channels:
        vals = sample_channel(grid, label, centers)
        arrays.append(vals.astype(np.float32))
        fills.append(grid.channel_fill(label))
    return VoxelGrid(geometry=geometry, channels=channels, data=tuple(arrays), fill_values=tuple(fills))


def working_geometry(geometry: Geometry, spacing_mm: float) -> Geometry:
    """Coarser geometry covering the same physical extent at `spacing_mm`."""
    lo, hi = geometry.bounds()
    extent = hi - lo
    dims = tuple(max(2, int(np.ceil(e / spacing_mm))) for e in extent)
    return Geometry(dims=dims, spacing=(spacing_mm,) * 3, origin=tuple(lo))


def worker_count() -> int:
    """Parallelism cap from CURVEREG_THREADS (default: machine cores)."""
    return _kernels.n_threads()
