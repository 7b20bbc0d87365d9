import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from .ascii_grid import read_ascii_grid
from .errors import GeofuseError, ParseError
from .fusion import NormRule
from .raster import Grid
from .vector import (
    ClassMap,
    VectorLayer,
    load_builtin_classmap,
    parse_classmap,
    parse_geojson,
    unmatched_tags,
)

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"

Severity = Literal["error", "warning"]

# keys that may appear more than once in a section
REPEATABLE_KEYS = {
    ("inputs", "pair"),
    ("inputs", "vector"),
    ("prior", "boost"),
    ("stack", "optical"),
    ("stack", "extra"),
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class BoostEntry(BaseModel):
    """`boost = <key>=<pattern> radius=<m> class=<id> [weight=<w>]`"""

    key: str
    pattern: str
    radius: NonNegativeFloat
    target_class: NonNegativeInt
    weight: PositiveFloat = 1.0

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        tokens = value.split()
        if len(tokens) == 0:
            raise ValueError("empty boost")
        key, sep, pattern = tokens[0].partition("=")
        if sep == "" or key == "":
            raise ValueError(f"expected <key>=<pattern> ({tokens[0]})")
        fields: Dict[str, str] = {"key": key, "pattern": pattern or "*"}
        names = {"radius": "radius", "class": "target_class", "weight": "weight"}
        for token in tokens[1:]:
            name, sep, option = token.partition("=")
            if sep == "" or name not in names:
                raise ValueError(f"unexpected token ({token})")
            fields[names[name]] = option
        return fields


class ChannelEntry(BaseModel):
    """`optical = <path> <rule>`; the rule defaults to byte255."""

    path: str
    rule: str = "byte255"

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        tokens = value.split()
        if len(tokens) not in (1, 2):
            raise ValueError("expected <path> [<rule>]")
        return {"path": tokens[0], "rule": tokens[1] if len(tokens) == 2 else "byte255"}

    @field_validator("rule")
    @classmethod
    def _check_rule(cls, value: str) -> str:
        try:
            NormRule.parse(value)
        except GeofuseError as e:
            raise ValueError(str(e)) from None
        return value

    def norm_rule(self) -> NormRule:
        return NormRule.parse(self.rule)


class PairEntry(BaseModel):
    """`pair = <coarse path> <fine path>`"""

    coarse: str
    fine: str

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        tokens = value.split()
        if len(tokens) != 2:
            raise ValueError("expected <coarse path> <fine path>")
        return {"coarse": tokens[0], "fine": tokens[1]}


class InputsSection(_Section):
    coarse: Optional[str] = None
    cooccurrence: Optional[str] = None
    pairs: List[PairEntry] = Field(default_factory=list, alias="pair")
    n_coarse: Optional[PositiveInt] = None
    n_fine: Optional[PositiveInt] = None
    vectors: List[str] = Field(default_factory=list, alias="vector")
    classmap: Optional[str] = None


class PriorSection(_Section):
    sigma: PositiveFloat = 1.0
    epsilon: NonNegativeFloat = 1e-6
    post_sigma: Optional[PositiveFloat] = None
    boosts: List[BoostEntry] = Field(default_factory=list, alias="boost")


class StackSection(_Section):
    optical: List[ChannelEntry] = Field(default_factory=list)
    extra: List[ChannelEntry] = Field(default_factory=list)
    crop: Optional[PositiveInt] = None


class SubsetSection(_Section):
    n: Optional[PositiveInt] = None
    fraction: float = Field(default=1.0, gt=0, le=1)
    seed: NonNegativeInt = 0


class OutputSection(_Section):
    out: Optional[str] = None


class PipelineConfig(_Section):
    inputs: InputsSection = Field(default_factory=InputsSection)
    prior: PriorSection = Field(default_factory=PriorSection)
    stack: StackSection = Field(default_factory=StackSection)
    subset: SubsetSection = Field(default_factory=SubsetSection)
    output: OutputSection = Field(default_factory=OutputSection)


@dataclass(frozen=True)
class Finding:
    severity: Severity
    source: str
    line: Optional[int]
    message: str

    def __str__(self) -> str:
        where = self.source if self.line is None else f"{self.source}:{self.line}"
        return f"{where}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class RawEntry:
    section: str
    key: str
    value: str
    line: Optional[int]


def parse_config_text(text: str, source: str = "<config>") -> List[RawEntry]:
    """Split `[section]` / `key = value` text into entries with 1-based line numbers."""
    entries: List[RawEntry] = []
    section: Optional[str] = None
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped == "" or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ParseError(
                    f"Config: Invalid section header ({stripped})", line=line_number
                )
            section = stripped[1:-1].strip().lower()
            continue
        key, sep, value = stripped.partition("=")
        if sep == "":
            raise ParseError(
                f"Config: Expected key = value ({stripped})", line=line_number
            )
        if section is None:
            raise ParseError("Config: Entry before the first section", line=line_number)
        entries.append(
            RawEntry(
                section=section,
                key=key.strip().lower(),
                value=value.strip(),
                line=line_number,
            )
        )
    return entries


def parse_override(text: str) -> RawEntry:
    """`section.key=value` from the command line."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if sep == "" or dot == "" or section == "" or key == "":
        raise ParseError(f"Config: Invalid override ({text}). Use section.key=value.")
    return RawEntry(
        section=section.lower(), key=key.lower(), value=value.strip(), line=None
    )


@dataclass
class LoadedConfig:
    config: PipelineConfig
    source: str
    base_dir: Path
    lines: Dict[Tuple[str, str], List[Optional[int]]] = field(default_factory=dict)

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    def line_of(self, section: str, key: str, index: int = 0) -> Optional[int]:
        lines = self.lines.get((section, key), [])
        return lines[index] if index < len(lines) else None


def _collect(
    entries: Sequence[RawEntry],
) -> Tuple[Dict[str, Dict[str, Any]], Dict[Tuple[str, str], List[Optional[int]]]]:
    values: Dict[str, Dict[str, Any]] = {}
    lines: Dict[Tuple[str, str], List[Optional[int]]] = {}
    overridden = set()
    for entry in entries:
        name = (entry.section, entry.key)
        section = values.setdefault(entry.section, {})
        if name in REPEATABLE_KEYS:
            # an override replaces the file's list
            if entry.line is None and name not in overridden:
                section[entry.key] = []
                lines[name] = []
                overridden.add(name)
            section.setdefault(entry.key, []).append(entry.value)
            lines.setdefault(name, []).append(entry.line)
        else:
            section[entry.key] = entry.value
            lines[name] = [entry.line]
    return values, lines


def _error_line(
    loc: Tuple[Any, ...], lines: Dict[Tuple[str, str], List[Optional[int]]]
) -> Optional[int]:
    if len(loc) < 2:
        return None
    candidates = lines.get((str(loc[0]), str(loc[1])), [])
    index = loc[2] if len(loc) > 2 and isinstance(loc[2], int) else 0
    return candidates[index] if index < len(candidates) else None


def load_config(
    text: str,
    source: str = "<config>",
    base_dir: Optional[Path] = None,
    overrides: Sequence[str] = (),
) -> Tuple[Optional[LoadedConfig], List[Finding]]:
    """Parse and validate a pipeline config; problems come back as findings."""
    try:
        entries = parse_config_text(text, source)
        entries += [parse_override(item) for item in overrides]
    except ParseError as e:
        return None, [Finding("error", source, e.line, str(e))]

    values, lines = _collect(entries)
    try:
        config = PipelineConfig.model_validate(values)
    except ValidationError as err:
        findings = [
            Finding(
                "error",
                source,
                _error_line(tuple(error["loc"]), lines),
                f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}",
            )
            for error in err.errors()
        ]
        return None, findings

    loaded = LoadedConfig(
        config=config,
        source=source,
        base_dir=base_dir if base_dir is not None else Path("."),
        lines=lines,
    )
    return loaded, []


def read_config(
    path: Path, overrides: Sequence[str] = ()
) -> Tuple[Optional[LoadedConfig], List[Finding]]:
    return load_config(
        path.read_text(encoding="utf-8"),
        source=str(path),
        base_dir=path.parent,
        overrides=overrides,
    )


def resolve_classmap(name: str, base_dir: Path = Path(".")) -> ClassMap:
    """`builtin:<name>` or a class map file relative to `base_dir`."""
    if name.startswith(BUILTIN_PREFIX):
        return load_builtin_classmap(name[len(BUILTIN_PREFIX) :])
    path = Path(name)
    if not path.is_absolute():
        path = base_dir / path
    return parse_classmap(path.read_text(encoding="utf-8"))


def load_classmap(loaded: LoadedConfig, name: str) -> ClassMap:
    return resolve_classmap(name, loaded.base_dir)


def load_vectors(loaded: LoadedConfig) -> VectorLayer:
    features = []
    for path in loaded.config.inputs.vectors:
        features.extend(parse_geojson(loaded.resolve(path).read_bytes()).features)
    return VectorLayer(features=features)


def validate(loaded: LoadedConfig) -> List[Finding]:
    """Run-time checks: files exist, grids align and the ClassMap covers the tags.

    Never writes anything.
    """
    config = loaded.config
    findings: List[Finding] = []

    def add(
        severity: Severity, section: str, key: str, index: int, message: str
    ) -> None:
        line = loaded.line_of(section, key, index)
        findings.append(Finding(severity, loaded.source, line, message))

    references: List[Tuple[str, str, int, str, bool]] = []
    if config.inputs.coarse is not None:
        references.append(("inputs", "coarse", 0, config.inputs.coarse, True))
    for i, pair in enumerate(config.inputs.pairs):
        references.append(("inputs", "pair", i, pair.coarse, True))
        references.append(("inputs", "pair", i, pair.fine, True))
    for key in ("optical", "extra"):
        for i, channel in enumerate(getattr(config.stack, key)):
            references.append(("stack", key, i, channel.path, True))
    for i, path in enumerate(config.inputs.vectors):
        references.append(("inputs", "vector", i, path, False))
    if config.inputs.cooccurrence is not None:
        references.append(
            ("inputs", "cooccurrence", 0, config.inputs.cooccurrence, False)
        )
    classmap = config.inputs.classmap
    if classmap is not None and not classmap.startswith(BUILTIN_PREFIX):
        references.append(("inputs", "classmap", 0, classmap, False))

    grids: List[Tuple[str, str, int, str, Grid]] = []
    for section, key, index, path, is_grid in references:
        resolved = loaded.resolve(path)
        if not resolved.is_file():
            message = f"{section}.{key}: File not found ({path})"
            add("error", section, key, index, message)
            continue
        if is_grid:
            try:
                grid = read_ascii_grid(resolved.read_bytes())
            except GeofuseError as e:
                add("error", section, key, index, f"{section}.{key}: {e}")
                continue
            grids.append((section, key, index, path, grid))

    # co-occurrence pairs only need to align with each other
    stack_grids = [item for item in grids if item[0] == "stack" or item[1] == "coarse"]
    if stack_grids:
        ref_section, ref_key, _, ref_path, ref_grid = stack_grids[0]
        for section, key, index, path, grid in stack_grids[1:]:
            if not grid.is_aligned(ref_grid):
                add(
                    "error",
                    section,
                    key,
                    index,
                    f"Alignment: {section}.{key} ({path}, {grid.height}x{grid.width}) "
                    f"does not align with {ref_section}.{ref_key} ({ref_path}, "
                    f"{ref_grid.height}x{ref_grid.width})",
                )
    pair_grids: Dict[int, List[Tuple[str, Grid]]] = {}
    for _, key, index, path, grid in grids:
        if key == "pair":
            pair_grids.setdefault(index, []).append((path, grid))
    for index, members in pair_grids.items():
        if len(members) == 2 and not members[0][1].is_aligned(members[1][1]):
            add(
                "error",
                "inputs",
                "pair",
                index,
                f"Alignment: pair {members[0][0]} and {members[1][0]} do not align",
            )

    has_source = config.inputs.cooccurrence is not None or config.inputs.pairs
    if config.inputs.coarse is not None and not has_source:
        message = "Prior: Needs inputs.cooccurrence or inputs.pair"
        add("error", "inputs", "coarse", 0, message)
    counts_missing = config.inputs.n_coarse is None or config.inputs.n_fine is None
    if config.inputs.pairs and counts_missing:
        message = "Prior: Pairs need inputs.n_coarse and inputs.n_fine"
        add("error", "inputs", "pair", 0, message)
    if config.prior.boosts and not config.inputs.vectors:
        message = "Prior: Boosts need at least one inputs.vector"
        add("error", "prior", "boost", 0, message)

    if config.inputs.classmap is not None and config.inputs.vectors:
        try:
            class_map = load_classmap(loaded, config.inputs.classmap)
            layer = load_vectors(loaded)
        except (GeofuseError, OSError) as e:
            add("error", "inputs", "classmap", 0, f"inputs.classmap: {e}")
        else:
            for key, value in unmatched_tags(layer, class_map):
                message = f"ClassMap: No entry for tag {key}={value}"
                add("warning", "inputs", "classmap", 0, message)

    return findings
