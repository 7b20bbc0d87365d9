import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AlignmentError,
    DataError,
    DegenerateError,
    ParameterError,
    ShapeError,
)
from .prior import PriorStack
from .raster import GeoTransform, Grid

logger = logging.getLogger(__name__)

NormKind = Literal["byte255", "identity", "minmax", "categorical_rgb"]


@dataclass(frozen=True)
class NormRule:
    kind: NormKind
    min: Optional[float] = None
    max: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in ("byte255", "identity", "minmax", "categorical_rgb"):
            raise ParameterError(f"NormRule: Unknown kind ({self.kind})")
        if self.kind == "minmax" and self.min is not None and self.max is not None:
            if not self.min < self.max:
                raise DegenerateError(
                    f"NormRule: minmax needs min < max ({self.min}, {self.max})"
                )

    def token(self) -> str:
        if self.kind == "minmax" and self.min is not None and self.max is not None:
            return f"minmax:{self.min!r}:{self.max!r}"
        return self.kind

    @classmethod
    def parse(cls, token: str) -> "NormRule":
        kind, _, rest = token.partition(":")
        if kind == "minmax" and rest != "":
            lo, sep, hi = rest.partition(":")
            if sep == "":
                raise ParameterError(f"NormRule: Expected minmax:<min>:<max> ({token})")
            try:
                return cls(kind="minmax", min=float(lo), max=float(hi))
            except ValueError:
                raise ParameterError(f"NormRule: Invalid bounds ({token})") from None
        if rest != "":
            raise ParameterError(f"NormRule: Unexpected parameters ({token})")
        return cls(kind=kind)  # type: ignore[arg-type]


BYTE255 = NormRule(kind="byte255")
IDENTITY = NormRule(kind="identity")
CATEGORICAL_RGB = NormRule(kind="categorical_rgb")


@dataclass(frozen=True)
class ChannelProvenance:
    source: str
    rule: NormRule
    prior_hash: Optional[str] = None


@dataclass(frozen=True)
class ChannelSpec:
    grid: Grid
    rule: NormRule
    source: str = ""


@dataclass(frozen=True)
class FusedTensor:
    """C x H x W float32 channel stack with per-channel provenance."""

    data: np.ndarray = field(repr=False)
    provenance: List[ChannelProvenance]
    transform: Optional[GeoTransform] = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"FusedTensor: Expected C x H x W data ({data.shape})")
        if len(self.provenance) != data.shape[0]:
            raise ShapeError(
                f"FusedTensor: Provenance length {len(self.provenance)} != "
                f"channel count {data.shape[0]}"
            )
        data = np.array(data, dtype=np.float32)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.data.shape[1]), int(self.data.shape[2]))

    @property
    def channels(self) -> List[Grid]:
        return [self.channel(k) for k in range(self.n_channels)]

    def channel(self, index: int) -> Grid:
        height, width = self.shape
        transform = self.transform or GeoTransform.from_origin(0.0, float(height), 1.0)
        return Grid(
            width=width,
            height=height,
            transform=transform,
            data=self.data[index].astype(np.float64),
        )


def _normalize(spec: ChannelSpec, index: int) -> Tuple[np.ndarray, NormRule]:
    grid = spec.grid
    valid = grid.valid_mask()
    values = grid.data.astype(np.float64)
    rule = spec.rule

    if rule.kind == "byte255":
        if np.any(values[valid] < 0) or np.any(values[valid] > 255):
            raise DataError(f"Stack: Channel {index} has values outside [0, 255]")
        out = values / 255.0
    elif rule.kind == "minmax":
        lo, hi = rule.min, rule.max
        if lo is None or hi is None:
            if not valid.any():
                raise DegenerateError(f"Stack: Channel {index} has no valid pixels")
            lo, hi = float(values[valid].min()), float(values[valid].max())
            if not lo < hi:
                raise DegenerateError(
                    f"Stack: Channel {index} is constant ({lo}); minmax is undefined"
                )
            rule = NormRule(kind="minmax", min=lo, max=hi)
        out = (values - lo) / (hi - lo)
    elif rule.kind == "categorical_rgb":
        if np.any(values[valid] < 0) or np.any(values[valid] > 1):
            raise DataError(f"Stack: Channel {index} RGB values outside [0, 1]")
        out = values
    else:
        out = values

    if not valid.all():
        logger.warning(
            "Stack: Channel %d (%s) has %d nodata pixels, filled with 0",
            index,
            spec.source,
            int((~valid).sum()),
        )
        out = np.where(valid, out, 0.0)
    return out, rule


def _check_alignment(grids: Sequence[Grid]) -> None:
    reference = grids[0]
    for index, grid in enumerate(grids[1:], start=1):
        if grid.shape != reference.shape:
            raise AlignmentError(
                f"Stack: Input {index} shape {grid.shape} != input 0 shape "
                f"{reference.shape}"
            )
        if not grid.transform.almost_equals(reference.transform):
            raise AlignmentError(
                f"Stack: Input {index} transform differs from input 0 transform"
            )


def stack_channels(inputs: Sequence[ChannelSpec]) -> FusedTensor:
    if len(inputs) == 0:
        raise ParameterError("Stack: At least one input channel is needed")
    _check_alignment([spec.grid for spec in inputs])

    channels: List[np.ndarray] = []
    provenance: List[ChannelProvenance] = []
    for index, spec in enumerate(inputs):
        values, rule = _normalize(spec, index)
        channels.append(values)
        provenance.append(ChannelProvenance(source=spec.source, rule=rule))

    return FusedTensor(
        data=np.stack(channels, axis=0),
        provenance=provenance,
        transform=inputs[0].grid.transform,
    )


def proc_stack(
    optical: Sequence[ChannelSpec],
    prior: PriorStack,
    extra: Sequence[ChannelSpec] = (),
) -> FusedTensor:
    prior_hash = prior.manifest.digest() if prior.manifest is not None else None
    prior_specs = [
        ChannelSpec(grid=prior.channel(k), rule=IDENTITY, source=f"prior:{k}")
        for k in range(prior.n_fine)
    ]
    tensor = stack_channels(list(optical) + prior_specs + list(extra))

    first_prior = len(optical)
    provenance = [
        ChannelProvenance(source=p.source, rule=p.rule, prior_hash=prior_hash)
        if first_prior <= k < first_prior + prior.n_fine
        else p
        for k, p in enumerate(tensor.provenance)
    ]
    return FusedTensor(
        data=tensor.data, provenance=provenance, transform=tensor.transform
    )


def center_crop(tensor: FusedTensor, size: int) -> FusedTensor:
    height, width = tensor.shape
    if size <= 0 or size > height or size > width:
        raise ParameterError(f"Crop: Invalid size {size} for {height}x{width}")

    top = (height - size) // 2
    left = (width - size) // 2
    transform = tensor.transform
    if transform is not None:
        x, y = transform.to_affine() * (left, top)
        transform = GeoTransform(
            origin_x=x,
            origin_y=y,
            pixel_w=transform.pixel_w,
            pixel_h=transform.pixel_h,
            shear_x=transform.shear_x,
            shear_y=transform.shear_y,
        )
    return FusedTensor(
        data=tensor.data[:, top : top + size, left : left + size],
        provenance=list(tensor.provenance),
        transform=transform,
    )
