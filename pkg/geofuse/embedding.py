import csv
import logging
from dataclasses import dataclass, field
from io import StringIO
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from .errors import DegenerateError, ParameterError, ParseError, ShapeError

logger = logging.getLogger(__name__)

# eigenvalues below this fraction of the largest are treated as zero
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray = field(repr=False)
    groups: List[str]
    lats: np.ndarray = field(repr=False)
    lons: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ShapeError(f"Embeddings: Expected a 2-D matrix ({vectors.shape})")
        n = vectors.shape[0]
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        if len(self.groups) != n or lats.shape != (n,) or lons.shape != (n,):
            raise ShapeError(
                f"Embeddings: {n} vectors but {len(self.groups)} groups, "
                f"{lats.shape} lats, {lons.shape} lons"
            )
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "groups", list(self.groups))
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)

    @classmethod
    def from_vectors(
        cls, vectors: np.ndarray, groups: Optional[Sequence[str]] = None
    ) -> "EmbeddingSet":
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        n = vectors.shape[0]
        return cls(
            vectors=vectors,
            groups=list(groups) if groups is not None else [""] * n,
            lats=np.zeros(n),
            lons=np.zeros(n),
        )

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


class EmbeddingRow(BaseModel):
    lat: float
    lon: float
    group: str
    values: List[float]

    @field_validator("values")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite component")
        return values


def read_embeddings_csv(text: str) -> EmbeddingSet:
    """Parse `lat,lon,group,v0,...,v{D-1}` rows."""
    reader = csv.reader(StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("Embeddings: Empty CSV") from None

    header = [name.strip() for name in header]
    if header[:3] != ["lat", "lon", "group"]:
        raise ParseError(f"Embeddings: Invalid header ({header[:3]})", line=1)
    dim = len(header) - 3
    if dim <= 0 or header[3:] != [f"v{i}" for i in range(dim)]:
        raise ParseError("Embeddings: Vector columns must be v0..v{D-1}", line=1)

    rows: List[EmbeddingRow] = []
    for record in reader:
        line = reader.line_num
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != dim + 3:
            raise ParseError(
                f"Embeddings: Expected {dim + 3} columns, got {len(record)}", line=line
            )
        try:
            rows.append(
                EmbeddingRow(
                    lat=record[0], lon=record[1], group=record[2], values=record[3:]
                )
            )
        except ValidationError as err:
            message = err.errors()[0]["msg"]
            raise ParseError(
                f"Embeddings: Invalid row ({message})", line=line
            ) from None

    if not rows:
        raise ParseError("Embeddings: No rows")

    return EmbeddingSet(
        vectors=np.array([row.values for row in rows], dtype=np.float64),
        groups=[row.group for row in rows],
        lats=np.array([row.lat for row in rows]),
        lons=np.array([row.lon for row in rows]),
    )


def write_embeddings_csv(embeddings: EmbeddingSet) -> str:
    sio = StringIO()
    writer = csv.writer(sio, lineterminator="\n")
    writer.writerow(["lat", "lon", "group"] + [f"v{i}" for i in range(embeddings.dim)])
    for i in range(len(embeddings)):
        writer.writerow(
            [
                repr(float(embeddings.lats[i])),
                repr(float(embeddings.lons[i])),
                embeddings.groups[i],
            ]
            + [repr(float(v)) for v in embeddings.vectors[i]]
        )
    return sio.getvalue()


@dataclass(frozen=True)
class GroupSimilarity:
    groups: List[str]
    matrix: np.ndarray = field(repr=False)


def group_means(
    embeddings: EmbeddingSet, group_by: Optional[Sequence[str]] = None
) -> Dict[str, np.ndarray]:
    """Mean vector per group label, in order of first appearance."""
    labels = list(group_by) if group_by is not None else embeddings.groups
    if len(labels) != len(embeddings):
        raise ShapeError(
            f"Embeddings: {len(labels)} labels for {len(embeddings)} vectors"
        )
    members: Dict[str, List[int]] = {}
    for index, label in enumerate(labels):
        members.setdefault(label, []).append(index)
    return {
        label: embeddings.vectors[indices].mean(axis=0)
        for label, indices in members.items()
    }


def pairwise_cosine(
    embeddings: EmbeddingSet, group_by: Optional[Sequence[str]] = None
) -> GroupSimilarity:
    if len(embeddings) == 0:
        raise ParameterError("Cosine: Empty embedding set")

    means = group_means(embeddings, group_by)
    names = list(means)
    stacked = np.array([means[name] for name in names])
    norms = np.linalg.norm(stacked, axis=1)
    for name, norm in zip(names, norms):
        if norm == 0:
            raise DegenerateError(f"Cosine: Zero-norm mean for group {name!r}")

    unit = stacked / norms[:, None]
    matrix = unit @ unit.T
    matrix = 0.5 * (matrix + matrix.T)
    np.fill_diagonal(matrix, 1.0)
    return GroupSimilarity(groups=names, matrix=matrix)


def _unit(reference: np.ndarray, dim: int) -> np.ndarray:
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != (dim,):
        raise ShapeError(f"Distance: Reference shape {reference.shape} != ({dim},)")
    norm = np.linalg.norm(reference)
    if norm == 0:
        raise DegenerateError("Distance: Zero-norm reference vector")
    return reference / norm


def cosine_distance_map(embeddings: EmbeddingSet, reference: np.ndarray) -> np.ndarray:
    """1 - cosine similarity of each row to `reference`."""
    ref = _unit(reference, embeddings.dim)
    norms = np.linalg.norm(embeddings.vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateError(f"Distance: Zero-norm vector at row {int(zero[0])}")
    return 1.0 - (embeddings.vectors @ ref) / norms


def cosine_disagreement(
    before: EmbeddingSet,
    after: EmbeddingSet,
    reference: np.ndarray,
    reference_after: Optional[np.ndarray] = None,
) -> np.ndarray:
    """|d_before - d_after| per row for two aligned sets.

    `reference_after` defaults to `reference`; pass the reference location's embedding
    under the second encoder when the two sets come from different encoders.
    """
    if len(before) != len(after):
        raise ShapeError(
            f"Disagreement: Sets are not aligned ({len(before)} vs {len(after)} rows)"
        )
    d_before = cosine_distance_map(before, reference)
    d_after = cosine_distance_map(
        after, reference if reference_after is None else reference_after
    )
    return np.abs(d_before - d_after)


@dataclass(frozen=True)
class PrincipalComponents:
    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    projections: np.ndarray = field(repr=False)
    rank: int


def principal_components(embeddings: EmbeddingSet, k: int = 3) -> PrincipalComponents:
    """Top-k covariance eigenvectors in descending order.

    Each component is signed so that its largest |loading| is positive.
    """
    if k <= 0:
        raise ParameterError(f"PCA: Invalid component count ({k})")
    if len(embeddings) < 2:
        raise ParameterError(f"PCA: Need at least 2 rows ({len(embeddings)})")

    mean = embeddings.vectors.mean(axis=0)
    centered = embeddings.vectors - mean
    covariance = centered.T @ centered / (len(embeddings) - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)

    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    eigenvectors = eigenvectors[:, order]

    top = float(eigenvalues[0]) if eigenvalues.size else 0.0
    rank = int(np.sum(eigenvalues > RANK_TOLERANCE * top)) if top > 0 else 0

    k = min(k, eigenvectors.shape[1])
    components = eigenvectors[:, :k].T.copy()
    for i in range(k):
        pivot = int(np.argmax(np.abs(components[i])))
        if components[i, pivot] < 0:
            components[i] = -components[i]

    return PrincipalComponents(
        mean=mean,
        components=components,
        eigenvalues=eigenvalues[:k],
        projections=centered @ components.T,
        rank=rank,
    )


@dataclass(frozen=True)
class PcaColors:
    colors: np.ndarray = field(repr=False)
    rank: int
    degenerate: bool


def pca_rgb(embeddings: EmbeddingSet) -> PcaColors:
    """Per-row (r, g, b) in [0, 1] from the top three principal components.

    Components beyond the covariance rank are filled with 0.5 and the result is flagged.
    """
    if len(embeddings) < 3:
        raise ParameterError(f"PCA: Need at least 3 rows ({len(embeddings)})")

    pcs = principal_components(embeddings, k=3)
    colors = np.full((len(embeddings), 3), 0.5)
    for i in range(min(pcs.rank, pcs.projections.shape[1])):
        column = pcs.projections[:, i]
        lo, hi = float(column.min()), float(column.max())
        if hi > lo:
            colors[:, i] = (column - lo) / (hi - lo)

    degenerate = pcs.rank < 3
    if degenerate:
        logger.warning("PCA: Covariance rank %d < 3, padding with 0.5", pcs.rank)
    return PcaColors(colors=colors, rank=pcs.rank, degenerate=degenerate)
