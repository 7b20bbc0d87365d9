import numpy as np
import pytest

from geofuse import (
    GeoTransform,
    Grid,
    ParseError,
    UnsupportedFormatError,
    read_ascii_grid,
    write_ascii_grid,
)


def assert_parse_error_line(data: bytes, line: int) -> None:
    with pytest.raises(ParseError) as e:
        read_ascii_grid(data)
    assert e.value.line == line


def test_read_minimal() -> None:
    grid = read_ascii_grid(
        b"ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n7\n"
    )
    assert grid.width == 1
    assert grid.height == 1
    assert grid.data.tolist() == [[7.0]]
    assert grid.nodata is None
    assert grid.transform == GeoTransform.from_origin(0.0, 1.0, 1.0)


def test_read_nodata_and_case_insensitive_keys() -> None:
    grid = read_ascii_grid(
        b"NCOLS 2\nNROWS 1\nXLLCORNER 10\nYLLCORNER 20\nCELLSIZE 5\n"
        b"NODATA_value -9999\n1 -9999\n"
    )
    assert grid.nodata == -9999.0
    assert grid.valid_mask().tolist() == [[True, False]]
    assert grid.transform.origin_y == 25.0


def test_read_categorical() -> None:
    grid = read_ascii_grid(
        b"ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n3 4\n",
        kind="categorical",
    )
    assert grid.kind == "categorical"
    assert grid.data.dtype == np.int64
    with pytest.raises(ParseError):
        read_ascii_grid(
            b"ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n0.5\n",
            kind="categorical",
        )


def test_read_errors_name_lines() -> None:
    header = b"ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n"
    assert_parse_error_line(header + b"1 2\n3 x\n", 7)
    assert_parse_error_line(header + b"1 2\n3\n", 7)
    assert_parse_error_line(header + b"1 2\n3 4\n5 6\n", 8)
    assert_parse_error_line(b"ncols 1\nnrows 1\nxllcorner 0\ncellsize 1\n1\n", 5)
    assert_parse_error_line(b"ncols 1\nbogus 1\n", 2)


@pytest.mark.parametrize("cellsize", [b"0", b"-5", b"inf"])
def test_read_rejects_nonpositive_cellsize(cellsize: bytes) -> None:
    data = b"ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize " + cellsize
    assert_parse_error_line(data + b"\n1\n", 5)
    reordered = b"cellsize " + cellsize + b"\nncols 1\nnrows 1\nxllcorner 0\n"
    assert_parse_error_line(reordered + b"yllcorner 0\n1\n", 1)


def test_read_size_errors_name_header_line() -> None:
    corners = b"xllcorner 0\nyllcorner 0\ncellsize 1\n"
    assert_parse_error_line(b"nrows 1\nncols 0\n" + corners + b"1\n", 2)
    assert_parse_error_line(b"ncols 1\nnrows 1.5\n" + corners + b"1\n", 2)


def test_write_minimal() -> None:
    grid = Grid(
        width=1,
        height=1,
        transform=GeoTransform.from_origin(0.0, 1.0, 1.0),
        data=np.array([7.0]),
    )
    assert write_ascii_grid(grid) == (
        b"ncols 1\nnrows 1\nxllcorner 0.0\nyllcorner 0.0\ncellsize 1.0\n7\n"
    )


def test_write_rejects_sheared() -> None:
    grid = Grid(
        width=1,
        height=1,
        transform=GeoTransform(
            origin_x=0.0, origin_y=1.0, pixel_w=1.0, pixel_h=-1.0, shear_x=0.5
        ),
        data=np.array([1.0]),
    )
    with pytest.raises(UnsupportedFormatError):
        write_ascii_grid(grid)


def test_round_trip_random() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(100):
        h, w = rng.integers(1, 8, size=2)
        pixel = float(2.0 ** rng.integers(-2, 5))
        west = float(rng.integers(-1000, 1000)) * 0.5
        north = float(rng.integers(-1000, 1000)) * 0.5
        data = rng.integers(-4000, 4000, size=(h, w)) / 4.0
        nodata = -9999.0 if rng.random() < 0.5 else None
        if nodata is not None:
            data[0, 0] = nodata
        grid = Grid(
            width=int(w),
            height=int(h),
            transform=GeoTransform.from_origin(west, north, pixel),
            data=data,
            nodata=nodata,
        )

        encoded = write_ascii_grid(grid)
        decoded = read_ascii_grid(encoded)
        np.testing.assert_array_equal(decoded.data, grid.data)
        assert decoded.transform == grid.transform
        assert decoded.nodata == grid.nodata
        assert write_ascii_grid(decoded) == encoded
