import math
from io import StringIO
from typing import Dict, List, Optional

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .raster import GeoTransform, Grid, GridKind

REQUIRED_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
OPTIONAL_KEYS = ("nodata_value",)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_ascii_grid(data: bytes, kind: GridKind = "continuous") -> Grid:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError(f"ASCII grid: Non-ASCII content at byte {e.start}") from None

    lines = text.splitlines()
    header: Dict[str, str] = {}
    header_lines: Dict[str, int] = {}
    line_index = 0

    while line_index < len(lines):
        tokens = lines[line_index].split()
        if len(tokens) == 0:
            line_index += 1
            continue
        if _is_number(tokens[0]):
            break
        if len(tokens) != 2:
            raise ParseError(
                f"ASCII grid: Malformed header line ({lines[line_index]!r})",
                line=line_index + 1,
            )
        key = tokens[0].lower()
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ParseError(
                f"ASCII grid: Unknown header key ({tokens[0]})", line=line_index + 1
            )
        if not _is_number(tokens[1]):
            raise ParseError(
                f"ASCII grid: Non-numeric header value ({tokens[1]})",
                line=line_index + 1,
            )
        header[key] = tokens[1]
        header_lines[key] = line_index + 1
        line_index += 1

    for key in REQUIRED_KEYS:
        if key not in header:
            raise ParseError(
                f"ASCII grid: Missing required key ({key})", line=line_index + 1
            )

    sizes: Dict[str, int] = {}
    for key in ("ncols", "nrows"):
        try:
            sizes[key] = int(header[key])
        except ValueError:
            raise ParseError(
                f"ASCII grid: {key} must be an integer ({header[key]})",
                line=header_lines[key],
            ) from None
        if sizes[key] <= 0:
            raise ParseError(
                f"ASCII grid: Invalid {key} ({sizes[key]})", line=header_lines[key]
            )
    ncols, nrows = sizes["ncols"], sizes["nrows"]

    cellsize = float(header["cellsize"])
    if not (math.isfinite(cellsize) and cellsize > 0):
        raise ParseError(
            f"ASCII grid: cellsize must be positive ({header['cellsize']})",
            line=header_lines["cellsize"],
        )
    xllcorner = float(header["xllcorner"])
    yllcorner = float(header["yllcorner"])
    nodata: Optional[float] = (
        float(header["nodata_value"]) if "nodata_value" in header else None
    )

    rows: List[List[float]] = []
    for offset, line in enumerate(lines[line_index:]):
        line_number = line_index + offset + 1
        tokens = line.split()
        if len(tokens) == 0:
            continue
        if len(rows) == nrows:
            raise ParseError(
                f"ASCII grid: More rows than nrows ({nrows})", line=line_number
            )
        if len(tokens) != ncols:
            raise ParseError(
                f"ASCII grid: Row has {len(tokens)} values, expected {ncols}",
                line=line_number,
            )
        try:
            values = [float(token) for token in tokens]
        except ValueError:
            bad = next(token for token in tokens if not _is_number(token))
            raise ParseError(
                f"ASCII grid: Non-numeric cell ({bad})", line=line_number
            ) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("ASCII grid: Non-finite cell", line=line_number)
        rows.append(values)

    if len(rows) != nrows:
        raise ParseError(
            f"ASCII grid: Found {len(rows)} rows, header says {nrows}",
            line=len(lines) + 1,
        )

    array = np.array(rows, dtype=np.float64)
    if kind == "categorical":
        if np.any(array != np.round(array)):
            raise ParseError("ASCII grid: Categorical grid has non-integer cells")
        array = array.astype(np.int64)

    transform = GeoTransform(
        origin_x=xllcorner,
        origin_y=yllcorner + nrows * cellsize,
        pixel_w=cellsize,
        pixel_h=-cellsize,
    )
    return Grid(
        width=ncols,
        height=nrows,
        transform=transform,
        data=array,
        nodata=nodata,
        kind=kind,
    )


def _format_value(value: float) -> str:
    return "%.6g" % value


def write_ascii_grid(grid: Grid) -> bytes:
    transform = grid.transform
    if transform.has_shear:
        raise UnsupportedFormatError("ASCII grid: Sheared transforms are not supported")
    if transform.pixel_w <= 0 or transform.pixel_h != -transform.pixel_w:
        raise UnsupportedFormatError(
            "ASCII grid: Only square north-up cells are supported "
            f"({transform.pixel_w}, {transform.pixel_h})"
        )

    cellsize = transform.pixel_w
    yllcorner = transform.origin_y + grid.height * transform.pixel_h

    sio = StringIO()
    # header coordinates keep full precision so georeferencing survives round-trips
    sio.write(f"ncols {grid.width}\n")
    sio.write(f"nrows {grid.height}\n")
    sio.write(f"xllcorner {float(transform.origin_x)!r}\n")
    sio.write(f"yllcorner {float(yllcorner)!r}\n")
    sio.write(f"cellsize {float(cellsize)!r}\n")
    if grid.nodata is not None:
        sio.write(f"NODATA_value {_format_value(grid.nodata)}\n")

    for row in grid.data:
        sio.write(" ".join(_format_value(float(v)) for v in row))
        sio.write("\n")

    return sio.getvalue().encode("ascii")
