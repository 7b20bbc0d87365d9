import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np
from affine import Affine
from scipy.ndimage import correlate1d

from .errors import KindError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

GridKind = Literal["continuous", "categorical"]
ResampleMethod = Literal["nearest", "bilinear"]

# outer fill for resampled pixels when the source declares no nodata value
DEFAULT_NODATA = -9999.0


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel-to-world mapping, GDAL term order.

    (origin_x, origin_y) is the outer corner of pixel (0, 0); pixel_h is negative
    for north-up rasters.
    """

    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float
    shear_x: float = 0.0
    shear_y: float = 0.0

    def __post_init__(self) -> None:
        values = (
            self.origin_x,
            self.origin_y,
            self.pixel_w,
            self.pixel_h,
            self.shear_x,
            self.shear_y,
        )
        if not all(math.isfinite(v) for v in values):
            raise ParameterError(f"GeoTransform: Non-finite term ({values})")
        if self.pixel_w == 0 or self.pixel_h == 0:
            raise ParameterError(
                f"GeoTransform: Zero pixel size ({self.pixel_w}, {self.pixel_h})"
            )
        if self.pixel_w * self.pixel_h - self.shear_x * self.shear_y == 0:
            raise ParameterError("GeoTransform: Degenerate (zero determinant)")

    @classmethod
    def from_origin(
        cls, west: float, north: float, pixel_size: float
    ) -> "GeoTransform":
        return cls(
            origin_x=west, origin_y=north, pixel_w=pixel_size, pixel_h=-pixel_size
        )

    @classmethod
    def from_gdal(
        cls, values: Tuple[float, float, float, float, float, float]
    ) -> "GeoTransform":
        origin_x, pixel_w, shear_x, origin_y, shear_y, pixel_h = values
        return cls(
            origin_x=origin_x,
            origin_y=origin_y,
            pixel_w=pixel_w,
            pixel_h=pixel_h,
            shear_x=shear_x,
            shear_y=shear_y,
        )

    def to_gdal(self) -> Tuple[float, float, float, float, float, float]:
        return (
            self.origin_x,
            self.pixel_w,
            self.shear_x,
            self.origin_y,
            self.shear_y,
            self.pixel_h,
        )

    def to_affine(self) -> Affine:
        return Affine.from_gdal(*self.to_gdal())

    @property
    def has_shear(self) -> bool:
        return self.shear_x != 0 or self.shear_y != 0

    def almost_equals(self, other: "GeoTransform", tol: float = 1e-9) -> bool:
        return all(
            math.isclose(a, b, rel_tol=tol, abs_tol=tol)
            for a, b in zip(self.to_gdal(), other.to_gdal())
        )


@dataclass(frozen=True)
class Grid:
    """Single-channel raster. `data` has shape (height, width), row 0 is the top row."""

    width: int
    height: int
    transform: GeoTransform
    data: np.ndarray = field(repr=False)
    nodata: Optional[float] = None
    kind: GridKind = "continuous"

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ShapeError(f"Grid: Invalid size ({self.width}x{self.height})")

        data = np.asarray(self.data)
        if data.size != self.width * self.height:
            raise ShapeError(
                f"Grid: Data length mismatch ({data.size} != "
                f"{self.width}x{self.height})"
            )
        data = data.reshape(self.height, self.width)

        if self.kind == "categorical":
            if not np.issubdtype(data.dtype, np.integer):
                if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                    raise KindError("Grid: Categorical grid has non-integer values")
                data = data.astype(np.int64)
            valid = data != self.nodata if self.nodata is not None else None
            values = data[valid] if valid is not None else data
            if values.size > 0 and values.min() < 0:
                raise KindError("Grid: Categorical grid has negative class ids")
        elif self.kind == "continuous":
            data = data.astype(np.float64, copy=False)
            valid = self._valid(data)
            if not np.all(np.isfinite(data[valid])):
                raise KindError("Grid: Continuous grid has non-finite values")
        else:
            raise KindError(f"Grid: Unknown kind ({self.kind})")

        data = np.array(data, copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def _valid(self, data: np.ndarray) -> np.ndarray:
        if self.nodata is None:
            return np.ones(data.shape, dtype=bool)
        if isinstance(self.nodata, float) and math.isnan(self.nodata):
            return ~np.isnan(data)
        return data != self.nodata

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def valid_mask(self) -> np.ndarray:
        return self._valid(self.data)

    def with_data(
        self,
        data: np.ndarray,
        kind: Optional[GridKind] = None,
        nodata: Optional[float] = None,
    ) -> "Grid":
        return Grid(
            width=self.width,
            height=self.height,
            transform=self.transform,
            data=data,
            nodata=nodata,
            kind=kind if kind is not None else self.kind,
        )

    def is_aligned(self, other: "Grid") -> bool:
        return self.shape == other.shape and self.transform.almost_equals(
            other.transform
        )


@dataclass(frozen=True)
class Kernel:
    radius: int
    weights: np.ndarray = field(repr=False)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    if not sigma > 0 or not math.isfinite(sigma):
        raise ParameterError(f"Gaussian: Invalid sigma ({sigma}). Must be > 0.")

    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_kernel(sigma: float) -> Kernel:
    """Sampled 2-D Gaussian truncated at ceil(3 sigma), normalized to sum 1."""
    weights_1d = gaussian_kernel_1d(sigma)
    weights = np.outer(weights_1d, weights_1d)
    return Kernel(radius=(len(weights_1d) - 1) // 2, weights=weights / weights.sum())


def _separable(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # scipy "reflect" is the half-sample symmetric extension (d c b a | a b c d)
    out = correlate1d(values, weights, axis=0, mode="reflect")
    return correlate1d(out, weights, axis=1, mode="reflect")


def gaussian_blur(grid: Grid, sigma: float) -> Grid:
    if grid.kind != "continuous":
        raise KindError("Gaussian: Blur of a categorical grid is not defined")
    weights = gaussian_kernel_1d(sigma)

    valid = grid.valid_mask()
    if valid.all():
        return grid.with_data(_separable(grid.data, weights), nodata=grid.nodata)

    values = np.where(valid, grid.data, 0.0)
    numerator = _separable(values, weights)
    denominator = _separable(valid.astype(np.float64), weights)

    nodata = grid.nodata if grid.nodata is not None else DEFAULT_NODATA
    out = np.full(grid.shape, nodata, dtype=np.float64)
    keep = valid & (denominator > 0)
    out[keep] = numerator[keep] / denominator[keep]
    return grid.with_data(out, nodata=nodata)


def pixel_centers(
    transform: GeoTransform, width: int, height: int
) -> Tuple[np.ndarray, np.ndarray]:
    """World (x, y) of every pixel center, each of shape (height, width)."""
    cols, rows = np.meshgrid(
        np.arange(width, dtype=np.float64) + 0.5,
        np.arange(height, dtype=np.float64) + 0.5,
    )
    xs, ys = transform.to_affine() * (cols, rows)
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


def _nearest_index(u: np.ndarray) -> np.ndarray:
    # pixel c spans (c, c+1] so shared edges go to the smaller index;
    # the outer edge u == 0 belongs to pixel 0
    index = np.ceil(u - 1.0).astype(np.int64)
    return np.where(u == 0.0, 0, index)


def resample(
    grid: Grid,
    target: GeoTransform,
    target_w: int,
    target_h: int,
    method: ResampleMethod = "bilinear",
) -> Grid:
    if method not in ("nearest", "bilinear"):
        raise ParameterError(f"Resample: Unknown method ({method})")
    if method == "bilinear" and grid.kind == "categorical":
        raise KindError("Resample: Bilinear resampling of a categorical grid")
    if target_w <= 0 or target_h <= 0:
        raise ParameterError(f"Resample: Invalid target size ({target_w}x{target_h})")

    xs, ys = pixel_centers(target, target_w, target_h)
    us, vs = ~grid.transform.to_affine() * (xs, ys)
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)

    valid = grid.valid_mask()
    nodata = grid.nodata if grid.nodata is not None else DEFAULT_NODATA
    dtype = np.int64 if grid.kind == "categorical" else np.float64

    cols = _nearest_index(us)
    rows = _nearest_index(vs)
    inside = (cols >= 0) & (cols < grid.width) & (rows >= 0) & (rows < grid.height)
    safe_cols = np.clip(cols, 0, grid.width - 1)
    safe_rows = np.clip(rows, 0, grid.height - 1)
    nearest_ok = inside & valid[safe_rows, safe_cols]

    out = np.full((target_h, target_w), nodata, dtype=dtype)
    out[nearest_ok] = grid.data[safe_rows[nearest_ok], safe_cols[nearest_ok]]
    filled = nearest_ok

    if method == "bilinear":
        # center-index coordinates: source pixel centers sit on integers
        t = us - 0.5
        s = vs - 0.5
        in_hull = (t >= 0) & (t <= grid.width - 1) & (s >= 0) & (s <= grid.height - 1)

        x0 = np.clip(np.floor(t), 0, max(grid.width - 2, 0)).astype(np.int64)
        y0 = np.clip(np.floor(s), 0, max(grid.height - 2, 0)).astype(np.int64)
        x1 = np.minimum(x0 + 1, grid.width - 1)
        y1 = np.minimum(y0 + 1, grid.height - 1)
        fx = np.clip(t - x0, 0.0, 1.0)
        fy = np.clip(s - y0, 0.0, 1.0)

        corners_ok = valid[y0, x0] & valid[y0, x1] & valid[y1, x0] & valid[y1, x1]
        use = in_hull & corners_ok

        data = grid.data
        value = (
            data[y0, x0] * (1 - fx) * (1 - fy)
            + data[y0, x1] * fx * (1 - fy)
            + data[y1, x0] * (1 - fx) * fy
            + data[y1, x1] * fx * fy
        )
        out[use] = value[use]
        filled = filled | use

    has_gaps = not bool(filled.all())
    if has_gaps and grid.nodata is None:
        logger.debug("resample: target extends past the source, nodata=%s", nodata)

    return Grid(
        width=target_w,
        height=target_h,
        transform=target,
        data=out,
        nodata=nodata if has_gaps or grid.nodata is not None else None,
        kind=grid.kind,
    )
