"""Raster grids, band stacks, resampling, normalization and the CRYO stack format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ROLES",
    "DEFAULT_NODATA",
    "RasterError",
    "FormatError",
    "TruncationError",
    "GeometryError",
    "RoleNotFoundError",
    "Geometry",
    "RasterGrid",
    "BandStack",
    "read_stack",
    "write_stack",
    "resample",
    "normalize_stack",
    "save_stats",
    "load_stats",
]

# Role code = index + 1; 0 means untagged.
ROLES = (
    "Blue", "Green", "Red", "RedEdge1", "RedEdge2", "RedEdge3", "NIR",
    "NarrowNIR", "WaterVapour", "SWIR1", "SWIR2", "Cirrus",
    "Elevation", "Slope", "Aspect",
    "NDVI", "NDSI", "NDWI", "NDGI",
    "LST", "GLCM", "Velocity", "Coherence", "Phase",
    "PCA1", "PCA2", "PCA3",
    "TCB", "TCG", "TCW",
)
_ROLE_CODE = {name: i + 1 for i, name in enumerate(ROLES)}

DEFAULT_NODATA = -9999.0
MAGIC = b"CRYO"
DTYPE_FLOAT32 = 1
DTYPE_UINT8 = 2
_HEADER = struct.Struct("<4sHIIIdddf")


class RasterError(Exception):
    pass


class FormatError(RasterError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TruncationError(RasterError):
    pass


class GeometryError(RasterError):
    pass


class RoleNotFoundError(RasterError, KeyError):
    def __init__(self, role):
        super().__init__(f"band role not found in stack: {role}")
        self.role = role

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class Geometry:
    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 10.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pixel_size > 0:
            raise GeometryError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def shape(self):
        return (self.height, self.width)

    def centers(self):
        """Map coordinates of pixel centres as (xs, ys); y decreases with row (north-up)."""
        xs = self.origin_x + (np.arange(self.width) + 0.5) * self.pixel_size
        ys = self.origin_y - (np.arange(self.height) + 0.5) * self.pixel_size
        return xs, ys

    def bounds(self):
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y,
        )


@dataclass
class RasterGrid:
    """Single-band float32 grid; ``origin`` is the top-left corner, rows run north to south."""

    values: np.ndarray
    geometry: Geometry
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise GeometryError(f"values must be 2-D, got shape {values.shape}")
        if values.shape != self.geometry.shape:
            raise GeometryError(
                f"values shape {values.shape} does not match geometry {self.geometry.shape}"
            )
        nodata = np.float32(self.nodata)
        bad = ~np.isfinite(values) & (values != nodata)
        if bad.any():
            values = np.where(bad, nodata, values)
        self.values = values
        self.nodata = float(nodata)

    @classmethod
    def from_array(cls, values, pixel_size=10.0, origin=(0.0, 0.0), nodata=DEFAULT_NODATA):
        values = np.asarray(values, dtype=np.float32)
        geom = Geometry(values.shape[1], values.shape[0], origin[0], origin[1], pixel_size)
        return cls(values, geom, nodata)

    @property
    def width(self):
        return self.geometry.width

    @property
    def height(self):
        return self.geometry.height

    @property
    def pixel_size(self):
        return self.geometry.pixel_size

    @property
    def valid(self):
        return self.values != np.float32(self.nodata)

    def masked(self):
        """float64 copy with nodata replaced by NaN."""
        out = self.values.astype(np.float64)
        out[~self.valid] = np.nan
        return out

    def with_values(self, values):
        return RasterGrid(values, self.geometry, self.nodata)


@dataclass
class BandStack:
    """Ordered, named bands sharing one pixel lattice.

    Each band carries an optional semantic role (one of ``ROLES``), used by
    the feature code to find e.g. the NIR or Red band regardless of order.
    """

    geometry: Geometry
    names: list[str] = field(default_factory=list)
    roles: list[str | None] = field(default_factory=list)
    data: np.ndarray = None
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        h, w = self.geometry.shape
        if self.data is None:
            self.data = np.zeros((0, h, w), dtype=np.float32)
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            data = data.astype(np.float32, copy=False)
        if data.ndim != 3 or data.shape[1:] != (h, w):
            raise GeometryError(f"band data shape {data.shape} does not match geometry {(h, w)}")
        self.data = data
        self.names = list(self.names)
        if not self.roles:
            self.roles = [None] * len(self.names)
        self.roles = list(self.roles)
        if len(self.names) != data.shape[0] or len(self.roles) != data.shape[0]:
            raise GeometryError("band names/roles do not match band count")
        if len(set(self.names)) != len(self.names):
            raise RasterError(f"duplicate band names: {self.names}")
        tagged = [r for r in self.roles if r is not None]
        if len(set(tagged)) != len(tagged):
            raise RasterError(f"duplicate band roles: {tagged}")
        for r in tagged:
            if r not in _ROLE_CODE:
                raise RasterError(f"unknown band role {r!r}")
        self.nodata = float(np.float32(self.nodata))

    @classmethod
    def from_grids(cls, bands):
        """Build from ``[(name, grid, role), ...]``; all grids must share geometry and nodata."""
        bands = list(bands)
        if not bands:
            raise RasterError("at least one band required")
        geom = bands[0][1].geometry
        nodata = bands[0][1].nodata
        for name, grid, _ in bands:
            if grid.geometry != geom:
                raise GeometryError(f"band {name!r} geometry differs from {bands[0][0]!r}")
            if grid.nodata != nodata:
                raise GeometryError(f"band {name!r} uses a different nodata sentinel")
        data = np.stack([g.values for _, g, _ in bands])
        return cls(geom, [b[0] for b in bands], [b[2] for b in bands], data, nodata)

    def __len__(self):
        return self.data.shape[0]

    @property
    def valid(self):
        """Pixels valid in every band."""
        return np.all(self.data != np.float32(self.nodata), axis=0)

    def index(self, key):
        """Band position by name or role."""
        if key in self.names:
            return self.names.index(key)
        if key in self.roles:
            return self.roles.index(key)
        raise RoleNotFoundError(key)

    def band(self, key):
        return RasterGrid(self.data[self.index(key)], self.geometry, self.nodata)

    def by_role(self, role):
        if role not in self.roles:
            raise RoleNotFoundError(role)
        return self.band(role)

    def append(self, name, grid, role=None):
        if grid.geometry != self.geometry:
            raise GeometryError(f"band {name!r} geometry differs from stack geometry")
        values = np.where(grid.valid, grid.values, np.float32(self.nodata))
        data = np.concatenate([self.data, values[None].astype(self.data.dtype)])
        return BandStack(self.geometry, self.names + [name], self.roles + [role], data, self.nodata)

    def extend(self, other):
        out = self
        for i, name in enumerate(other.names):
            out = out.append(name, other.band(name), other.roles[i])
        return out

    def select(self, keys):
        idx = [self.index(k) for k in keys]
        return BandStack(
            self.geometry,
            [self.names[i] for i in idx],
            [self.roles[i] for i in idx],
            self.data[idx],
            self.nodata,
        )


def _role_code(role):
    return 0 if role is None else _ROLE_CODE[role]


def write_stack(stack: BandStack, path) -> None:
    """Write ``stack`` in the little-endian CRYO layout.

    uint8 stacks (label masks) carry dtype code 2 in the version slot and a
    one-byte-per-pixel payload; everything else is float32 (code 1).
    """
    g = stack.geometry
    dtype_code = DTYPE_UINT8 if stack.data.dtype == np.uint8 else DTYPE_FLOAT32
    parts = [
        _HEADER.pack(
            MAGIC, dtype_code, g.width, g.height, len(stack), g.pixel_size,
            g.origin_x, g.origin_y, stack.nodata,
        )
    ]
    for name, role in zip(stack.names, stack.roles):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<H", _role_code(role)))
    payload_dtype = "u1" if dtype_code == DTYPE_UINT8 else "<f4"
    parts.append(np.ascontiguousarray(stack.data, dtype=payload_dtype).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_stack(path) -> BandStack:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise TruncationError(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, code, width, height, count, pixel_size, ox, oy, nodata = _HEADER.unpack_from(buf)
    if code not in (DTYPE_FLOAT32, DTYPE_UINT8):
        raise FormatError(f"unsupported version/dtype code {code}", 4)
    if width < 1 or height < 1:
        raise FormatError(f"invalid grid size {width}x{height}", 6)
    if not (pixel_size > 0 and math.isfinite(pixel_size)):
        raise FormatError(f"invalid pixel size {pixel_size}", 18)
    pos = _HEADER.size
    names, roles = [], []
    for _ in range(count):
        if pos + 2 > len(buf):
            raise TruncationError(f"band table truncated at byte {pos}")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n + 2 > len(buf):
            raise TruncationError(f"band table truncated at byte {pos}")
        try:
            names.append(buf[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("band name is not valid UTF-8", pos) from None
        pos += n
        (rc,) = struct.unpack_from("<H", buf, pos)
        if rc > len(ROLES):
            raise FormatError(f"unknown role code {rc}", pos)
        roles.append(None if rc == 0 else ROLES[rc - 1])
        pos += 2
    itemsize = 1 if code == DTYPE_UINT8 else 4
    expected = count * width * height * itemsize
    if len(buf) - pos != expected:
        raise TruncationError(
            f"payload has {len(buf) - pos} bytes, expected {expected} for "
            f"{count} bands of {width}x{height}"
        )
    dtype = np.uint8 if code == DTYPE_UINT8 else np.dtype("<f4")
    data = np.frombuffer(buf, dtype=dtype, offset=pos).reshape(count, height, width)
    data = data.astype(np.uint8 if code == DTYPE_UINT8 else np.float32)
    geom = Geometry(width, height, ox, oy, pixel_size)
    return BandStack(geom, names, roles, data, nodata)


def _overlaps(a: Geometry, b: Geometry):
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def resample(grid: RasterGrid, target: Geometry, method="bilinear") -> RasterGrid:
    """Resample onto ``target`` by centre-based nearest or bilinear interpolation.

    Target pixels whose centre falls outside the source extent become nodata.
    Bilinear uses the four surrounding source centres (edge-clamped inside the
    extent) and yields nodata if any of them is nodata.
    """
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")
    src = grid.geometry
    if not _overlaps(src, target):
        raise GeometryError("source and target extents do not overlap")
    if src == target:
        return RasterGrid(grid.values.copy(), target, grid.nodata)

    xs, ys = target.centers()
    # continuous source pixel coordinates; integer values sit on pixel centres
    col = (xs - src.origin_x) / src.pixel_size - 0.5
    row = (src.origin_y - ys) / src.pixel_size - 0.5
    inside_c = (col >= -0.5) & (col < src.width - 0.5)
    inside_r = (row >= -0.5) & (row < src.height - 0.5)
    inside = inside_r[:, None] & inside_c[None, :]
    nodata = np.float32(grid.nodata)
    vals = grid.values
    valid = grid.valid

    if method == "nearest":
        ci = np.clip(np.floor(col + 0.5).astype(int), 0, src.width - 1)
        ri = np.clip(np.floor(row + 0.5).astype(int), 0, src.height - 1)
        out = vals[np.ix_(ri, ci)].copy()
        out[~inside] = nodata
        return RasterGrid(out, target, grid.nodata)

    c = np.clip(col, 0, src.width - 1)
    r = np.clip(row, 0, src.height - 1)
    c0 = np.minimum(np.floor(c).astype(int), max(src.width - 2, 0))
    r0 = np.minimum(np.floor(r).astype(int), max(src.height - 2, 0))
    c1 = np.minimum(c0 + 1, src.width - 1)
    r1 = np.minimum(r0 + 1, src.height - 1)
    fc = (c - c0)[None, :]
    fr = (r - r0)[:, None]
    v = vals.astype(np.float64)
    v00, v01 = v[np.ix_(r0, c0)], v[np.ix_(r0, c1)]
    v10, v11 = v[np.ix_(r1, c0)], v[np.ix_(r1, c1)]
    out = (v00 * (1 - fc) + v01 * fc) * (1 - fr) + (v10 * (1 - fc) + v11 * fc) * fr
    ok = valid[np.ix_(r0, c0)] & valid[np.ix_(r0, c1)] & valid[np.ix_(r1, c0)] & valid[np.ix_(r1, c1)]
    out = np.where(ok & inside, out, nodata).astype(np.float32)
    return RasterGrid(out, target, grid.nodata)


def normalize_stack(stack: BandStack, stats=None, eps=1e-8):
    """Standardize each band over its valid pixels.

    Returns ``(normalized_stack, stats)`` where ``stats`` is a list of
    ``(mean, std)``; pass it back in to apply identical scaling to another
    scene.
    """
    n = len(stack)
    if stats is not None and len(stats) != n:
        raise ValueError(f"got {len(stats)} (mean, std) pairs for {n} bands")
    nodata = np.float32(stack.nodata)
    out = stack.data.astype(np.float32).copy()
    computed = []
    for b in range(n):
        valid = stack.data[b] != nodata
        x = stack.data[b][valid].astype(np.float64)
        if stats is None:
            mean = float(x.mean()) if x.size else 0.0
            std = float(x.std()) if x.size else 0.0
        else:
            mean, std = (float(s) for s in stats[b])
        computed.append((mean, std))
        out[b][valid] = ((x - mean) / max(std, eps)).astype(np.float32)
    return replace(stack, data=out), computed


def save_stats(stack: BandStack, stats, path):
    rows = [{"name": n, "mean": m, "std": s} for n, (m, s) in zip(stack.names, stats)]
    Path(path).write_text(json.dumps(rows, indent=2))


def load_stats(path, names=None):
    rows = json.loads(Path(path).read_text())
    if names is not None and [r["name"] for r in rows] != list(names):
        raise ValueError("statistics sidecar band names do not match the stack")
    return [(float(r["mean"]), float(r["std"])) for r in rows]
