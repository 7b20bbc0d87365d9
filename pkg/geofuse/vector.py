import fnmatch
import importlib.resources as ILR
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import MappingError, ParameterError, ParseError, ShapeError
from .parallel import map_ordered, row_bands, thread_count
from .raster import GeoTransform, Grid, gaussian_blur, pixel_centers

logger = logging.getLogger(__name__)

GeometryKind = Literal["point", "linestring", "polygon"]


@dataclass(frozen=True)
class Geometry:
    """Single-part geometry. Polygons hold the exterior ring first, then holes."""

    kind: GeometryKind
    parts: Tuple[np.ndarray, ...] = field(repr=False)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        coords = np.concatenate(self.parts, axis=0)
        return (
            float(coords[:, 0].min()),
            float(coords[:, 1].min()),
            float(coords[:, 0].max()),
            float(coords[:, 1].max()),
        )


@dataclass(frozen=True)
class Feature:
    geometry: Geometry
    properties: Dict[str, str]


@dataclass(frozen=True)
class VectorLayer:
    features: List[Feature]


class GeoJsonGeometry(BaseModel):
    type: str
    coordinates: Any


class GeoJsonFeature(BaseModel):
    type: Literal["Feature"]
    geometry: GeoJsonGeometry
    properties: Optional[Dict[str, Any]] = None


class GeoJsonFeatureCollection(BaseModel):
    type: Literal["FeatureCollection"]
    features: List[Dict[str, Any]]


def _flatten_properties(
    properties: Dict[str, Any], prefix: str = ""
) -> Dict[str, str]:
    flat: Dict[str, str] = {}
    for key, value in properties.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten_properties(value, prefix=f"{name}."))
        elif isinstance(value, str):
            flat[name] = value
        elif value is None:
            flat[name] = ""
        else:
            flat[name] = json.dumps(value)
    return flat


def _coords(raw: Any, index: int) -> np.ndarray:
    try:
        array = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(
            f"GeoJSON: Feature {index} has malformed coordinates", index=index
        ) from None
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 2:
        raise ParseError(
            f"GeoJSON: Feature {index} has malformed coordinates", index=index
        )
    if not np.all(np.isfinite(array)):
        raise ParseError(
            f"GeoJSON: Feature {index} has non-finite coordinates", index=index
        )
    return array[:, :2].copy()


def _polygon(raw: Any, index: int) -> Geometry:
    if not isinstance(raw, list) or len(raw) == 0:
        raise ParseError(f"GeoJSON: Feature {index} has an empty polygon", index=index)
    rings = []
    for ring_raw in raw:
        ring = _coords(ring_raw, index)
        if not np.array_equal(ring[0], ring[-1]):
            raise ParseError(
                f"GeoJSON: Feature {index} has an unclosed polygon ring", index=index
            )
        rings.append(ring)
    return Geometry(kind="polygon", parts=tuple(rings))


def _explode(geometry: GeoJsonGeometry, index: int) -> List[Geometry]:
    coordinates = geometry.coordinates
    if geometry.type == "Point":
        return [Geometry(kind="point", parts=(_coords(coordinates, index),))]
    if geometry.type == "LineString":
        return [Geometry(kind="linestring", parts=(_coords(coordinates, index),))]
    if geometry.type == "Polygon":
        return [_polygon(coordinates, index)]

    if not isinstance(coordinates, list):
        raise ParseError(
            f"GeoJSON: Feature {index} has malformed coordinates", index=index
        )
    if geometry.type == "MultiPoint":
        return [
            Geometry(kind="point", parts=(_coords(part, index),))
            for part in coordinates
        ]
    if geometry.type == "MultiLineString":
        return [
            Geometry(kind="linestring", parts=(_coords(part, index),))
            for part in coordinates
        ]
    if geometry.type == "MultiPolygon":
        return [_polygon(part, index) for part in coordinates]

    raise ParseError(
        f"GeoJSON: Feature {index} has unsupported geometry type ({geometry.type})",
        index=index,
    )


def parse_geojson(data: bytes) -> VectorLayer:
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"GeoJSON: Invalid JSON ({e})") from None

    try:
        collection = GeoJsonFeatureCollection.model_validate(document)
    except ValidationError as e:
        raise ParseError(
            f"GeoJSON: Not a FeatureCollection ({e.errors()[0]['msg']})"
        ) from None

    features: List[Feature] = []
    for index, raw_feature in enumerate(collection.features):
        try:
            feature = GeoJsonFeature.model_validate(raw_feature)
        except ValidationError as e:
            raise ParseError(
                f"GeoJSON: Feature {index} is malformed ({e.errors()[0]['msg']})",
                index=index,
            ) from None

        properties = _flatten_properties(feature.properties or {})
        for geometry in _explode(feature.geometry, index):
            features.append(Feature(geometry=geometry, properties=properties))

    logger.debug("parse_geojson: %d single-part features", len(features))
    return VectorLayer(features=features)


def _parse_color(value: str) -> Tuple[int, int, int]:
    if len(value) != 7 or value[0] != "#":
        raise ValueError(f"Invalid color ({value}). Use #RRGGBB.")
    return (int(value[1:3], 16), int(value[3:5], 16), int(value[5:7], 16))


class ClassMapEntry(BaseModel):
    tag_key: str = Field(min_length=1)
    tag_value_pattern: str = Field(min_length=1)
    class_id: int = Field(ge=0, le=65535)
    color: Tuple[int, int, int]
    buffer_radius: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)

    @field_validator("color")
    @classmethod
    def check_color(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if not all(0 <= c <= 255 for c in value):
            raise ValueError(f"Color out of byte range ({value})")
        return value

    def matches(self, properties: Dict[str, str]) -> bool:
        value = properties.get(self.tag_key)
        if value is None:
            return False
        return any(
            fnmatch.fnmatchcase(value, pattern)
            for pattern in self.tag_value_pattern.split("|")
        )


@dataclass(frozen=True)
class ClassMap:
    """Ordered tag -> class -> color mapping; later entries paint over earlier ones."""

    entries: List[ClassMapEntry]
    background_class_id: int = 0
    background_color: Tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        class_ids = [entry.class_id for entry in self.entries]
        if len(set(class_ids)) != len(class_ids):
            raise ParameterError(f"ClassMap: Duplicate class ids ({class_ids})")
        if self.background_class_id in class_ids:
            raise ParameterError(
                f"ClassMap: Background class id reused ({self.background_class_id})"
            )
        colors = [entry.color for entry in self.entries] + [self.background_color]
        if len(set(colors)) != len(colors):
            raise ParameterError("ClassMap: Colors must be unique per class")

    def palette(self) -> Dict[int, Tuple[int, int, int]]:
        palette = {self.background_class_id: self.background_color}
        for entry in self.entries:
            palette[entry.class_id] = entry.color
        return palette


def parse_classmap(text: str) -> ClassMap:
    """Parse `tag_key=pattern class=<int> color=#RRGGBB buffer=<float>` lines.

    A `background class=<int> color=#RRGGBB` line sets the background class.
    """
    entries: List[ClassMapEntry] = []
    background_class_id = 0
    background_color = (0, 0, 0)

    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped == "" or stripped.startswith("#") or stripped.startswith(";"):
            continue

        tokens = stripped.split()
        options: Dict[str, str] = {}
        for token in tokens[1:]:
            key, sep, value = token.partition("=")
            if sep == "" or key not in ("class", "color", "buffer"):
                raise ParseError(
                    f"ClassMap: Unexpected token ({token})", line=line_number
                )
            options[key] = value

        try:
            if tokens[0] == "background":
                background_class_id = int(options.get("class", "0"))
                background_color = _parse_color(options.get("color", "#000000"))
                continue

            tag_key, sep, pattern = tokens[0].partition("=")
            if sep == "":
                raise ValueError(f"Expected tag_key=pattern ({tokens[0]})")
            if "class" not in options or "color" not in options:
                raise ValueError("Entry needs class= and color=")
            entries.append(
                ClassMapEntry(
                    tag_key=tag_key,
                    tag_value_pattern=pattern,
                    class_id=int(options["class"]),
                    color=_parse_color(options["color"]),
                    buffer_radius=float(options.get("buffer", "0")),
                )
            )
        except ValidationError as e:
            raise ParseError(
                f"ClassMap: Invalid entry ({e.errors()[0]['msg']})", line=line_number
            ) from None
        except ValueError as e:
            raise ParseError(f"ClassMap: {e}", line=line_number) from None

    if len(entries) == 0:
        raise ParseError("ClassMap: No entries")

    try:
        return ClassMap(
            entries=entries,
            background_class_id=background_class_id,
            background_color=background_color,
        )
    except ParameterError as e:
        raise ParseError(str(e)) from None


def load_builtin_classmap(name: str) -> ClassMap:
    try:
        text = (ILR.files("geofuse") / "classmaps" / f"{name}.txt").read_text()
    except FileNotFoundError:
        raise ParameterError(f"ClassMap: Unknown built-in class map ({name})") from None
    return parse_classmap(text)


@dataclass(frozen=True)
class TagSelector:
    key: str
    pattern: str = "*"

    def __call__(self, feature: Feature) -> bool:
        value = feature.properties.get(self.key)
        return value is not None and any(
            fnmatch.fnmatchcase(value, p) for p in self.pattern.split("|")
        )


FeaturePredicate = Union[TagSelector, Callable[[Feature], bool]]


@dataclass(frozen=True)
class BinaryMask:
    grid: Grid

    def __post_init__(self) -> None:
        if self.grid.kind != "categorical" or self.grid.nodata is not None:
            raise ParameterError("BinaryMask: Needs a categorical grid without nodata")
        if not np.isin(self.grid.data, (0, 1)).all():
            raise ParameterError("BinaryMask: Values must be 0 or 1")

    @property
    def values(self) -> np.ndarray:
        return self.grid.data.astype(bool)


def _even_odd(
    rings: Tuple[np.ndarray, ...], px: np.ndarray, py: np.ndarray
) -> np.ndarray:
    inside = np.zeros(px.shape, dtype=bool)
    for ring in rings:
        x1, y1 = ring[:-1, 0], ring[:-1, 1]
        x2, y2 = ring[1:, 0], ring[1:, 1]
        for k in range(len(x1)):
            if y1[k] == y2[k]:
                continue
            straddles = (y1[k] > py) != (y2[k] > py)
            x_cross = x1[k] + (py - y1[k]) * (x2[k] - x1[k]) / (y2[k] - y1[k])
            inside ^= straddles & (px < x_cross)
    return inside


def _within(
    geometry: Geometry, px: np.ndarray, py: np.ndarray, radius: float
) -> np.ndarray:
    r2 = radius * radius
    hit = np.zeros(px.shape, dtype=bool)
    for part in geometry.parts:
        if len(part) == 1:
            hit |= (px - part[0, 0]) ** 2 + (py - part[0, 1]) ** 2 < r2
            continue
        for k in range(len(part) - 1):
            ax, ay = part[k]
            bx, by = part[k + 1]
            dx, dy = bx - ax, by - ay
            length2 = dx * dx + dy * dy
            if length2 == 0:
                t = np.zeros(px.shape)
            else:
                t = np.clip(((px - ax) * dx + (py - ay) * dy) / length2, 0.0, 1.0)
            hit |= (px - (ax + t * dx)) ** 2 + (py - (ay + t * dy)) ** 2 < r2
    return hit


def _burn(
    geometries: List[Geometry], radius: float, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Pixel centers inside a polygon or strictly closer than `radius` to a geometry."""
    mask = np.zeros(xs.shape, dtype=bool)
    for geometry in geometries:
        minx, miny, maxx, maxy = geometry.bounds
        candidates = (
            (xs >= minx - radius)
            & (xs <= maxx + radius)
            & (ys >= miny - radius)
            & (ys <= maxy + radius)
        )
        if not candidates.any():
            continue
        px, py = xs[candidates], ys[candidates]
        hit = np.zeros(px.shape, dtype=bool)
        if geometry.kind == "polygon":
            hit |= _even_odd(geometry.parts, px, py)
        if radius > 0:
            hit |= _within(geometry, px, py, radius)
        mask[candidates] |= hit
    return mask


def _burn_banded(
    geometries: List[Geometry],
    radius: float,
    transform: GeoTransform,
    w: int,
    h: int,
) -> np.ndarray:
    xs, ys = pixel_centers(transform, w, h)

    def burn_band(band: Tuple[int, int]) -> np.ndarray:
        start, stop = band
        return _burn(geometries, radius, xs[start:stop], ys[start:stop])

    return np.concatenate(map_ordered(burn_band, row_bands(h, thread_count())), axis=0)


def _check_size(w: int, h: int) -> None:
    if w <= 0 or h <= 0:
        raise ShapeError(f"Rasterize: Invalid size ({w}x{h})")


def rasterize_classes(
    layer: VectorLayer,
    class_map: ClassMap,
    transform: GeoTransform,
    w: int,
    h: int,
) -> Grid:
    _check_size(w, h)
    if len(class_map.entries) == 0:
        raise ParameterError("Rasterize: Empty class map")

    out = np.full((h, w), class_map.background_class_id, dtype=np.int64)
    for entry in class_map.entries:
        geometries = [
            feature.geometry
            for feature in layer.features
            if entry.matches(feature.properties)
        ]
        if len(geometries) == 0:
            continue
        mask = _burn_banded(geometries, entry.buffer_radius, transform, w, h)
        out[mask] = entry.class_id
        logger.debug(
            "rasterize_classes: %s=%s -> class %d on %d pixels",
            entry.tag_key,
            entry.tag_value_pattern,
            entry.class_id,
            int(mask.sum()),
        )

    return Grid(width=w, height=h, transform=transform, data=out, kind="categorical")


def binary_mask(
    layer: VectorLayer,
    selector: FeaturePredicate,
    radius: float,
    transform: GeoTransform,
    w: int,
    h: int,
) -> BinaryMask:
    if not radius >= 0:
        raise ParameterError(f"Mask: Invalid radius ({radius}). Must be >= 0.")
    _check_size(w, h)

    geometries = [feature.geometry for feature in layer.features if selector(feature)]
    if len(geometries) == 0:
        mask = np.zeros((h, w), dtype=bool)
    else:
        mask = _burn_banded(geometries, radius, transform, w, h)

    grid = Grid(
        width=w,
        height=h,
        transform=transform,
        data=mask.astype(np.int64),
        kind="categorical",
    )
    return BinaryMask(grid=grid)


def to_rgb_raster(
    class_grid: Grid,
    class_map: ClassMap,
    smooth_sigma: Optional[float] = None,
) -> Tuple[Grid, Grid, Grid]:
    if class_grid.kind != "categorical":
        raise ParameterError("RGB: Needs a categorical class grid")

    palette = class_map.palette()
    valid = class_grid.valid_mask()
    ids = np.where(valid, class_grid.data, class_map.background_class_id)

    unmapped: Set[int] = set(int(v) for v in np.unique(ids)) - set(palette)
    if len(unmapped) > 0:
        raise MappingError(f"RGB: Unmapped class ids ({sorted(unmapped)})")

    lut_size = int(max(palette)) + 1
    lut = np.zeros((lut_size, 3), dtype=np.float64)
    for class_id, color in palette.items():
        lut[class_id] = np.array(color, dtype=np.float64) / 255.0
    colors = lut[ids]

    channels = [
        class_grid.with_data(colors[:, :, c], kind="continuous", nodata=None)
        for c in range(3)
    ]
    if smooth_sigma is not None:
        channels = map_ordered(
            lambda channel: gaussian_blur(channel, smooth_sigma), channels
        )
    return (channels[0], channels[1], channels[2])


def classes_from_rgb(r: Grid, g: Grid, b: Grid, class_map: ClassMap) -> Grid:
    """Inverse palette lookup of an unsmoothed RGB raster."""
    bytes_rgb = np.stack(
        [np.rint(channel.data * 255.0).astype(np.int64) for channel in (r, g, b)],
        axis=-1,
    )
    out = np.full(r.shape, -1, dtype=np.int64)
    for class_id, color in class_map.palette().items():
        out[np.all(bytes_rgb == np.array(color), axis=-1)] = class_id
    if np.any(out < 0):
        raise MappingError("RGB: Pixels with colors outside the palette")
    return r.with_data(out, kind="categorical", nodata=None)


def unmatched_tags(layer: VectorLayer, class_map: ClassMap) -> List[Tuple[str, str]]:
    """(key, value) tags no ClassMap entry matches, limited to keys the map uses."""
    keys = {entry.tag_key for entry in class_map.entries}
    missing: Set[Tuple[str, str]] = set()
    for feature in layer.features:
        if any(entry.matches(feature.properties) for entry in class_map.entries):
            continue
        for key in keys:
            if key in feature.properties:
                missing.add((key, feature.properties[key]))
    return sorted(missing)
