import hashlib
import logging
from dataclasses import dataclass, field
from io import StringIO
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .errors import AlignmentError, DataError, ParameterError, ParseError, ShapeError
from .parallel import map_ordered
from .raster import GeoTransform, Grid, gaussian_blur
from .vector import BinaryMask

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-6
DEFAULT_BLUR_SIGMA = 1.0
DEFAULT_BOOST_WEIGHT = 1.0


@dataclass(frozen=True)
class CoOccurrenceMatrix:
    """Row-stochastic P(fine | coarse), shape (n_coarse, n_fine)."""

    probs: np.ndarray = field(repr=False)
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
            raise ShapeError(f"CoOccurrence: Invalid shape ({probs.shape})")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DataError("CoOccurrence: Entries must be finite and >= 0")
        if not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-6):
            raise DataError("CoOccurrence: Rows must sum to 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_coarse(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_fine(self) -> int:
        return int(self.probs.shape[1])

    def digest(self) -> str:
        return hashlib.sha256(self.probs.astype("<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class PriorStack:
    """Per-pixel class beliefs, `channels` has shape (n_fine, height, width)."""

    channels: np.ndarray = field(repr=False)
    transform: GeoTransform
    manifest: Optional["PriorManifest"] = None

    def __post_init__(self) -> None:
        channels = np.array(self.channels, dtype=np.float64)
        if channels.ndim != 3 or min(channels.shape) == 0:
            raise ShapeError(f"PriorStack: Invalid shape ({channels.shape})")
        if not np.all(np.isfinite(channels)) or np.any(channels < 0):
            raise DataError("PriorStack: Beliefs must be finite and >= 0")
        channels.flags.writeable = False
        object.__setattr__(self, "channels", channels)

    @property
    def n_fine(self) -> int:
        return int(self.channels.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.channels.shape[1]), int(self.channels.shape[2]))

    def channel(self, index: int) -> Grid:
        height, width = self.shape
        return Grid(
            width=width,
            height=height,
            transform=self.transform,
            data=self.channels[index],
        )


@dataclass(frozen=True)
class Boost:
    mask: BinaryMask
    target_class: int
    weight: float = DEFAULT_BOOST_WEIGHT
    source: str = ""


BoostSpec = List[Boost]


class BoostRecord(BaseModel):
    source: str
    target_class: int
    weight: float


class PriorManifest(BaseModel):
    stages: List[str]
    n_coarse: int
    n_fine: int
    blur_sigma: float
    post_blur_sigma: Optional[float]
    epsilon: Optional[float]
    cooccurrence_sha256: str
    shape: Tuple[int, int]
    transform: Tuple[float, float, float, float, float, float]
    boosts: List[BoostRecord]

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


def _check_ids(grid: Grid, limit: int, name: str, pair_index: int) -> None:
    valid = grid.valid_mask()
    bad = valid & ((grid.data < 0) | (grid.data >= limit))
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"CoOccurrence: {name} class id {int(grid.data.flat[flat])} out of range "
            f"[0, {limit}) in pair {pair_index} at pixel {flat}"
        )


def estimate_cooccurrence(
    pairs: Sequence[Tuple[Grid, Grid]],
    n_coarse: int,
    n_fine: int,
    epsilon: float = DEFAULT_EPSILON,
) -> CoOccurrenceMatrix:
    if len(pairs) == 0:
        raise ParameterError("CoOccurrence: At least one (coarse, fine) pair is needed")
    if n_coarse <= 0 or n_fine <= 0:
        raise ParameterError(
            f"CoOccurrence: Invalid class counts ({n_coarse}, {n_fine})"
        )
    if not epsilon >= 0:
        raise ParameterError(f"CoOccurrence: Invalid epsilon ({epsilon})")

    counts = np.zeros(n_coarse * n_fine, dtype=np.int64)
    for pair_index, (coarse, fine) in enumerate(pairs):
        if coarse.kind != "categorical" or fine.kind != "categorical":
            raise ParameterError("CoOccurrence: Pairs must be categorical grids")
        if coarse.shape != fine.shape:
            raise ShapeError(
                f"CoOccurrence: Pair {pair_index} shape mismatch "
                f"({coarse.shape} != {fine.shape})"
            )
        _check_ids(coarse, n_coarse, "coarse", pair_index)
        _check_ids(fine, n_fine, "fine", pair_index)

        valid = coarse.valid_mask() & fine.valid_mask()
        codes = coarse.data[valid] * n_fine + fine.data[valid]
        counts += np.bincount(codes, minlength=n_coarse * n_fine)

    table = counts.reshape(n_coarse, n_fine).astype(np.float64)
    totals = table.sum(axis=1)
    if totals.sum() == 0:
        raise DataError("CoOccurrence: No valid pixels in any pair")

    probs = np.full((n_coarse, n_fine), 1.0 / n_fine)
    seen = totals > 0
    probs[seen] = (table[seen] + epsilon) / (totals[seen, None] + n_fine * epsilon)
    logger.debug(
        "estimate_cooccurrence: %d of %d coarse classes observed",
        int(seen.sum()),
        n_coarse,
    )
    return CoOccurrenceMatrix(probs=probs, epsilon=epsilon)


def write_cooccurrence(co: CoOccurrenceMatrix) -> bytes:
    sio = StringIO()
    sio.write(f"{co.n_coarse} {co.n_fine}\n")
    for row in co.probs:
        sio.write(" ".join("%.9g" % v for v in row))
        sio.write("\n")
    return sio.getvalue().encode("ascii")


def read_cooccurrence(data: bytes) -> CoOccurrenceMatrix:
    lines = [line for line in data.decode("ascii").splitlines()]
    if len(lines) == 0:
        raise ParseError("CoOccurrence: Empty file", line=1)
    try:
        n_coarse, n_fine = (int(token) for token in lines[0].split())
    except ValueError:
        raise ParseError(
            "CoOccurrence: Header must be 'ncoarse nfine'", line=1
        ) from None

    rows: List[List[float]] = []
    for line_number, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        try:
            row = [float(token) for token in line.split()]
        except ValueError:
            raise ParseError(
                "CoOccurrence: Non-numeric entry", line=line_number
            ) from None
        if len(row) != n_fine:
            raise ParseError(
                f"CoOccurrence: Row has {len(row)} entries, expected {n_fine}",
                line=line_number,
            )
        rows.append(row)
    if len(rows) != n_coarse:
        raise ParseError(
            f"CoOccurrence: Found {len(rows)} rows, header says {n_coarse}",
            line=len(lines),
        )

    probs = np.array(rows, dtype=np.float64)
    try:
        return CoOccurrenceMatrix(probs=probs / probs.sum(axis=1, keepdims=True))
    except (DataError, FloatingPointError) as e:
        raise ParseError(f"CoOccurrence: {e}") from None


def _blur_channels(
    channels: np.ndarray, transform: GeoTransform, sigma: float
) -> np.ndarray:
    height, width = channels.shape[1:]

    def blur(channel: np.ndarray) -> np.ndarray:
        grid = Grid(width=width, height=height, transform=transform, data=channel)
        return np.asarray(gaussian_blur(grid, sigma).data)

    return np.stack(map_ordered(blur, list(channels)), axis=0)


def prior_from_coarse(
    coarse: Grid,
    co: CoOccurrenceMatrix,
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
) -> PriorStack:
    """Broadcast P(fine | coarse) to every pixel, then blur each channel.

    Nodata pixels of the coarse grid get the uniform belief.
    """
    if coarse.kind != "categorical":
        raise ParameterError("Prior: Coarse grid must be categorical")

    valid = coarse.valid_mask()
    ids = np.where(valid, coarse.data, 0)
    bad = valid & ((ids < 0) | (ids >= co.n_coarse))
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"Prior: Coarse class id {int(ids.flat[flat])} not in the co-occurrence "
            f"matrix (n_coarse={co.n_coarse}) at pixel {flat}"
        )

    broadcast = co.probs[ids]
    broadcast[~valid] = 1.0 / co.n_fine
    channels = np.moveaxis(broadcast, -1, 0)

    blurred = _blur_channels(channels, coarse.transform, blur_sigma)
    return PriorStack(channels=blurred, transform=coarse.transform)


def _renormalize(channels: np.ndarray) -> np.ndarray:
    sums = channels.sum(axis=0)
    zero = sums <= 0
    if zero.any():
        logger.warning(
            "Prior: %d pixels with zero belief mass fall back to uniform",
            int(zero.sum()),
        )
        channels = channels.copy()
        channels[:, zero] = 1.0
        sums = np.where(zero, channels.shape[0], sums)
    return channels / sums


def boost_and_renormalize(prior: PriorStack, boosts: BoostSpec) -> PriorStack:
    channels = np.array(prior.channels, dtype=np.float64)
    for boost in boosts:
        if boost.mask.grid.shape != prior.shape:
            raise ShapeError(
                f"Prior: Boost mask {boost.source or boost.target_class} shape "
                f"{boost.mask.grid.shape} != prior shape {prior.shape}"
            )
        if not 0 <= boost.target_class < prior.n_fine:
            raise ParameterError(
                f"Prior: Boost target class {boost.target_class} out of range "
                f"[0, {prior.n_fine})"
            )
        if not (np.isfinite(boost.weight) and boost.weight >= 0):
            raise ParameterError(f"Prior: Invalid boost weight ({boost.weight})")
        channels[boost.target_class][boost.mask.values] += boost.weight

    return PriorStack(
        channels=_renormalize(channels),
        transform=prior.transform,
        manifest=prior.manifest,
    )


@dataclass(frozen=True)
class PriorConfig:
    """Inputs of the prior pipeline: a fitted matrix or (coarse, fine) pairs to fit."""

    coarse: Grid
    cooccurrence: Optional[CoOccurrenceMatrix] = None
    pairs: Optional[Sequence[Tuple[Grid, Grid]]] = None
    n_coarse: Optional[int] = None
    n_fine: Optional[int] = None
    blur_sigma: float = DEFAULT_BLUR_SIGMA
    epsilon: float = DEFAULT_EPSILON
    boosts: BoostSpec = field(default_factory=list)
    post_blur_sigma: Optional[float] = None


def _resolve_cooccurrence(config: PriorConfig) -> CoOccurrenceMatrix:
    if config.cooccurrence is not None:
        return config.cooccurrence
    if config.pairs is None or config.n_coarse is None or config.n_fine is None:
        raise ParameterError(
            "Prior: Needs a co-occurrence matrix or pairs with n_coarse and n_fine"
        )
    for index, (coarse, fine) in enumerate(config.pairs):
        if not coarse.is_aligned(fine):
            raise AlignmentError(f"Prior: Co-occurrence pair {index} is misaligned")
    return estimate_cooccurrence(
        config.pairs,
        n_coarse=config.n_coarse,
        n_fine=config.n_fine,
        epsilon=config.epsilon,
    )


def generate_prior(config: PriorConfig) -> PriorStack:
    if not config.blur_sigma > 0:
        raise ParameterError(f"Prior: Invalid blur sigma ({config.blur_sigma})")
    if config.post_blur_sigma is not None and not config.post_blur_sigma > 0:
        raise ParameterError(
            f"Prior: Invalid post-boost blur sigma ({config.post_blur_sigma})"
        )

    for index, boost in enumerate(config.boosts):
        if not boost.mask.grid.is_aligned(config.coarse):
            raise AlignmentError(
                f"Prior: Boost mask {boost.source or index} is not aligned "
                "with the coarse grid"
            )

    co = _resolve_cooccurrence(config)
    prior = prior_from_coarse(config.coarse, co, blur_sigma=config.blur_sigma)
    prior = boost_and_renormalize(prior, config.boosts)

    stages = ["broadcast", "blur", "boost", "renormalize"]
    if config.post_blur_sigma is not None:
        channels = _blur_channels(
            prior.channels, prior.transform, config.post_blur_sigma
        )
        prior = PriorStack(channels=_renormalize(channels), transform=prior.transform)
        stages += ["post_blur", "renormalize"]

    manifest = PriorManifest(
        stages=stages,
        n_coarse=co.n_coarse,
        n_fine=co.n_fine,
        blur_sigma=config.blur_sigma,
        post_blur_sigma=config.post_blur_sigma,
        epsilon=co.epsilon,
        cooccurrence_sha256=co.digest(),
        shape=prior.shape,
        transform=prior.transform.to_gdal(),
        boosts=[
            BoostRecord(
                source=boost.source,
                target_class=boost.target_class,
                weight=boost.weight,
            )
            for boost in config.boosts
        ],
    )
    logger.debug("generate_prior: manifest %s", manifest.digest()[:16])
    return PriorStack(
        channels=prior.channels, transform=prior.transform, manifest=manifest
    )
