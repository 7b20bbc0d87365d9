import numpy as np
import pytest

from geofuse import (
    DegenerateError,
    EmbeddingSet,
    ParseError,
    cosine_disagreement,
    cosine_distance_map,
    pairwise_cosine,
    pca_rgb,
    principal_components,
    read_embeddings_csv,
    write_embeddings_csv,
)


def cosine_oracle(vectors: np.ndarray, groups: list) -> np.ndarray:
    names = list(dict.fromkeys(groups))
    means = []
    for name in names:
        members = [vectors[i] for i in range(len(groups)) if groups[i] == name]
        means.append(sum(members) / len(members))
    out = np.zeros((len(names), len(names)))
    for a in range(len(names)):
        for b in range(len(names)):
            out[a, b] = means[a] @ means[b] / (
                np.linalg.norm(means[a]) * np.linalg.norm(means[b])
            )
    return out


def test_pairwise_single_group() -> None:
    vectors = np.array([[1.0, 2.0], [3.0, 1.0]])
    embeddings = EmbeddingSet.from_vectors(vectors, ["AT", "AT"])
    similarity = pairwise_cosine(embeddings)
    assert similarity.groups == ["AT"]
    assert similarity.matrix.tolist() == [[1.0]]


def test_pairwise_orthogonal_groups() -> None:
    embeddings = EmbeddingSet.from_vectors(np.eye(2), ["a", "b"])
    np.testing.assert_array_equal(pairwise_cosine(embeddings).matrix, np.eye(2))


def test_pairwise_matches_oracle() -> None:
    rng = np.random.default_rng(3)
    vectors = rng.standard_normal((15, 16))
    groups = [["x", "y", "z"][i % 3] for i in range(15)]
    similarity = pairwise_cosine(EmbeddingSet.from_vectors(vectors, groups))
    assert similarity.groups == ["x", "y", "z"]
    expected = cosine_oracle(vectors, groups)
    np.testing.assert_allclose(similarity.matrix, expected, atol=1e-9)
    np.testing.assert_array_equal(similarity.matrix, similarity.matrix.T)
    np.testing.assert_allclose(np.diag(similarity.matrix), 1.0, atol=1e-9)


def test_pairwise_scale_invariant() -> None:
    rng = np.random.default_rng(4)
    vectors = rng.standard_normal((6, 8))
    groups = ["a", "a", "b", "b", "c", "c"]
    scaled = vectors.copy()
    scaled[2:4] *= 7.5
    base = pairwise_cosine(EmbeddingSet.from_vectors(vectors, groups)).matrix
    other = pairwise_cosine(EmbeddingSet.from_vectors(scaled, groups)).matrix
    np.testing.assert_allclose(base, other, atol=1e-12)


def test_pairwise_zero_mean_group() -> None:
    vectors = np.array([[1.0, 0.0], [-1.0, 0.0]])
    embeddings = EmbeddingSet.from_vectors(vectors, ["a", "a"])
    with pytest.raises(DegenerateError):
        pairwise_cosine(embeddings)


def test_distance_map() -> None:
    reference = np.array([1.0, 2.0, -0.5])
    rows = np.stack([reference, -reference, 3 * reference])
    embeddings = EmbeddingSet.from_vectors(rows)
    distances = cosine_distance_map(embeddings, reference)
    np.testing.assert_allclose(distances, [0.0, 2.0, 0.0], atol=1e-12)

    with_zero = EmbeddingSet.from_vectors(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateError) as e:
        cosine_distance_map(with_zero, np.ones(2))
    assert "row 1" in str(e.value)
    with pytest.raises(DegenerateError):
        cosine_distance_map(embeddings, np.zeros(3))


def test_disagreement_with_itself_is_zero() -> None:
    rng = np.random.default_rng(5)
    embeddings = EmbeddingSet.from_vectors(rng.standard_normal((10, 4)))
    out = cosine_disagreement(embeddings, embeddings, embeddings.vectors[0])
    np.testing.assert_array_equal(out, np.zeros(10))


def test_principal_components_recover_affine_subspace() -> None:
    rng = np.random.default_rng(6)
    basis, _ = np.linalg.qr(rng.standard_normal((256, 3)))
    coords = rng.standard_normal((20, 3)) * np.array([5.0, 2.0, 0.5])
    offset = rng.standard_normal(256)
    rows = offset + coords @ basis.T

    pcs = principal_components(EmbeddingSet.from_vectors(rows), k=3)
    assert pcs.rank == 3
    reconstructed = pcs.mean + pcs.projections @ pcs.components
    np.testing.assert_allclose(reconstructed, rows, atol=1e-9)

    centered = coords - coords.mean(axis=0)
    covariance = centered.T @ centered / (len(coords) - 1)
    roots = np.sort(np.roots(np.poly(covariance)).real)[::-1]
    np.testing.assert_allclose(pcs.eigenvalues, roots, rtol=1e-8)

    for component in pcs.components:
        assert component[np.argmax(np.abs(component))] > 0


def test_pca_rgb_identical_rows_are_degenerate() -> None:
    colors = pca_rgb(EmbeddingSet.from_vectors(np.ones((4, 8))))
    assert colors.degenerate
    assert colors.rank == 0
    assert (colors.colors == 0.5).all()


def test_pca_rgb_separates_clusters() -> None:
    rng = np.random.default_rng(7)
    direction = np.zeros(16)
    direction[3] = 1.0
    a = rng.standard_normal((10, 16)) * 0.1 - 10 * direction
    b = rng.standard_normal((10, 16)) * 0.1 + 10 * direction
    colors = pca_rgb(EmbeddingSet.from_vectors(np.vstack([a, b])))
    assert not colors.degenerate
    assert ((colors.colors >= 0) & (colors.colors <= 1)).all()
    # the first component loads positively on the separating axis
    assert colors.colors[:10, 0].max() < colors.colors[10:, 0].min()


def test_embeddings_csv_round_trip() -> None:
    embeddings = EmbeddingSet(
        vectors=np.array([[0.1, -2.5], [3.0, 1e-7]]),
        groups=["AT", "DE"],
        lats=np.array([48.2, 52.5]),
        lons=np.array([16.4, 13.4]),
    )
    decoded = read_embeddings_csv(write_embeddings_csv(embeddings))
    np.testing.assert_array_equal(decoded.vectors, embeddings.vectors)
    assert decoded.groups == embeddings.groups
    np.testing.assert_array_equal(decoded.lats, embeddings.lats)
    np.testing.assert_array_equal(decoded.lons, embeddings.lons)


def test_embeddings_csv_errors() -> None:
    with pytest.raises(ParseError):
        read_embeddings_csv("lat,lon,name,v0\n0,0,a,1\n")
    with pytest.raises(ParseError) as e:
        read_embeddings_csv("lat,lon,group,v0,v1\n0,0,a,1,2\n0,0,b,1\n")
    assert e.value.line == 3
    with pytest.raises(ParseError) as e:
        read_embeddings_csv("lat,lon,group,v0\n0,0,a,x\n")
    assert e.value.line == 2
