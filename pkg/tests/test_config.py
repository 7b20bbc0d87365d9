from pathlib import Path

import numpy as np
import pytest

from geofuse import (
    GeoTransform,
    Grid,
    ParseError,
    load_config,
    read_config,
    validate,
    write_ascii_grid,
)
from geofuse.config import (
    BoostEntry,
    ChannelEntry,
    parse_config_text,
    parse_override,
)


def write_grid(
    path: Path, data: np.ndarray, west: float = 0.0, north: float = 8.0
) -> None:
    h, w = data.shape
    grid = Grid(
        width=w,
        height=h,
        transform=GeoTransform.from_origin(west, north, 1.0),
        data=data,
    )
    path.write_bytes(write_ascii_grid(grid))


def write_scene(directory: Path) -> None:
    write_grid(directory / "coarse.asc", np.zeros((8, 8)))
    write_grid(directory / "red.asc", np.full((8, 8), 128.0))
    write_grid(directory / "dem.asc", np.arange(64.0).reshape(8, 8))
    (directory / "co.txt").write_text("1 2\n0.25 0.75\n")


CONFIG = """\
# a small scene
[inputs]
coarse = coarse.asc
cooccurrence = co.txt

[prior]
sigma = 2

[stack]
optical = red.asc
extra = dem.asc minmax:0:63
"""


def test_parse_config_text() -> None:
    entries = parse_config_text("[A]\n; comment\nKey = some value\n")
    assert len(entries) == 1
    assert entries[0].section == "a"
    assert entries[0].key == "key"
    assert entries[0].value == "some value"
    assert entries[0].line == 3


def test_parse_config_text_errors() -> None:
    with pytest.raises(ParseError) as e:
        parse_config_text("key = 1\n")
    assert e.value.line == 1
    with pytest.raises(ParseError) as e:
        parse_config_text("[inputs]\n\njust words\n")
    assert e.value.line == 3
    with pytest.raises(ParseError):
        parse_override("sigma=2")


def test_entries_parse_from_text() -> None:
    boost = BoostEntry.model_validate("highway=primary|secondary radius=5 class=3")
    assert boost.key == "highway"
    assert boost.pattern == "primary|secondary"
    assert boost.radius == 5.0
    assert boost.target_class == 3
    assert boost.weight == 1.0

    channel = ChannelEntry.model_validate("dem.asc minmax:0:100")
    assert channel.norm_rule().max == 100.0
    assert ChannelEntry.model_validate("red.asc").rule == "byte255"


def test_load_config_defaults() -> None:
    loaded, findings = load_config("[inputs]\ncoarse = c.asc\n")
    assert findings == []
    assert loaded is not None
    assert loaded.config.prior.sigma == 1.0
    assert loaded.config.prior.epsilon == 1e-6
    assert loaded.config.subset.fraction == 1.0


def test_load_config_range_error_names_line() -> None:
    text = "[inputs]\ncoarse = c.asc\n\n[prior]\nsigma = 0\n"
    loaded, findings = load_config(text, "a.cfg")
    assert loaded is None
    assert len(findings) == 1
    assert findings[0].line == 5
    assert str(findings[0]).startswith("a.cfg:5: error: prior.sigma")


def test_load_config_epsilon_allows_zero() -> None:
    loaded, findings = load_config("[prior]\nepsilon = 0\n")
    assert findings == []
    assert loaded is not None
    assert loaded.config.prior.epsilon == 0.0

    loaded, findings = load_config("[prior]\nepsilon = -1e-6\n")
    assert loaded is None
    assert findings[0].line == 2


def test_load_config_unknown_key() -> None:
    loaded, findings = load_config("[stack]\nopticals = x.asc\n")
    assert loaded is None
    assert findings[0].line == 2


def test_overrides_take_precedence() -> None:
    text = "[prior]\nsigma = 2\n\n[stack]\noptical = a.asc\noptical = b.asc\n"
    loaded, findings = load_config(
        text, overrides=["prior.sigma=3.5", "stack.optical=c.asc"]
    )
    assert findings == []
    assert loaded is not None
    assert loaded.config.prior.sigma == 3.5
    assert [entry.path for entry in loaded.config.stack.optical] == ["c.asc"]


def test_validate_consistent_scene(tmp_path: Path) -> None:
    write_scene(tmp_path)
    (tmp_path / "run.cfg").write_text(CONFIG)
    loaded, findings = read_config(tmp_path / "run.cfg")
    assert findings == []
    assert loaded is not None
    assert validate(loaded) == []


def test_validate_names_misaligned_inputs(tmp_path: Path) -> None:
    write_scene(tmp_path)
    write_grid(tmp_path / "dem.asc", np.zeros((8, 8)), west=1.0)
    (tmp_path / "run.cfg").write_text(CONFIG)
    loaded, _ = read_config(tmp_path / "run.cfg")
    assert loaded is not None
    findings = validate(loaded)
    assert len(findings) == 1
    assert findings[0].severity == "error"
    assert findings[0].line == 11
    assert "dem.asc" in findings[0].message
    assert "coarse.asc" in findings[0].message


def test_validate_missing_file_and_prerequisite(tmp_path: Path) -> None:
    (tmp_path / "run.cfg").write_text("[inputs]\ncoarse = nowhere.asc\n")
    loaded, _ = read_config(tmp_path / "run.cfg")
    assert loaded is not None
    messages = [finding.message for finding in validate(loaded)]
    assert any("File not found (nowhere.asc)" in message for message in messages)
    assert any("inputs.cooccurrence" in message for message in messages)


def test_validate_reports_unmatched_tags(tmp_path: Path) -> None:
    (tmp_path / "roads.geojson").write_text(
        '{"type": "FeatureCollection", "features": ['
        '{"type": "Feature", "properties": {"highway": "primary"},'
        ' "geometry": {"type": "Point", "coordinates": [1, 1]}},'
        '{"type": "Feature", "properties": {"natural": "beach"},'
        ' "geometry": {"type": "Point", "coordinates": [2, 2]}}]}'
    )
    (tmp_path / "run.cfg").write_text(
        "[inputs]\nvector = roads.geojson\nclassmap = builtin:enviroatlas\n"
    )
    loaded, _ = read_config(tmp_path / "run.cfg")
    assert loaded is not None
    findings = validate(loaded)
    assert [finding.severity for finding in findings] == ["warning"]
    assert "natural=beach" in findings[0].message
