from typing import List, Tuple

import numpy as np
import pytest

from geofuse import (
    AlignmentError,
    BinaryMask,
    Boost,
    CoOccurrenceMatrix,
    DataError,
    GeoTransform,
    Grid,
    ParameterError,
    PriorConfig,
    PriorStack,
    boost_and_renormalize,
    estimate_cooccurrence,
    generate_prior,
    prior_from_coarse,
    read_cooccurrence,
    write_cooccurrence,
)
from geofuse.parallel import THREADS_ENV

from .oracles import brute_force_blur

TRANSFORM = GeoTransform.from_origin(0.0, 16.0, 1.0)


def categorical(data: np.ndarray, transform: GeoTransform = TRANSFORM) -> Grid:
    h, w = data.shape
    return Grid(width=w, height=h, transform=transform, data=data, kind="categorical")


def mask(data: np.ndarray) -> BinaryMask:
    return BinaryMask(grid=categorical(data.astype(np.int64)))


def count_oracle(
    pairs: List[Tuple[np.ndarray, np.ndarray]],
    n_coarse: int,
    n_fine: int,
    epsilon: float,
) -> np.ndarray:
    counts = np.zeros((n_coarse, n_fine))
    for coarse, fine in pairs:
        for c, f in zip(coarse.ravel(), fine.ravel()):
            counts[c, f] += 1
    probs = np.full((n_coarse, n_fine), 1.0 / n_fine)
    for c in range(n_coarse):
        total = counts[c].sum()
        if total > 0:
            probs[c] = (counts[c] + epsilon) / (total + n_fine * epsilon)
    return probs


def pipeline_oracle(
    coarse: np.ndarray,
    probs: np.ndarray,
    sigma: float,
    boosts: List[Tuple[np.ndarray, int, float]],
) -> np.ndarray:
    n_fine = probs.shape[1]
    broadcast = np.stack([probs[coarse, k] for k in range(n_fine)])
    blurred = np.stack([brute_force_blur(broadcast[k], sigma) for k in range(n_fine)])
    for values, target, weight in boosts:
        for y in range(coarse.shape[0]):
            for x in range(coarse.shape[1]):
                if values[y, x]:
                    blurred[target, y, x] += weight
    return blurred / blurred.sum(axis=0)


def test_estimate_one_to_one() -> None:
    coarse = categorical(np.zeros((4, 4), dtype=np.int64))
    fine = categorical(np.full((4, 4), 2, dtype=np.int64))
    co = estimate_cooccurrence([(coarse, fine)], n_coarse=2, n_fine=3, epsilon=1e-6)
    assert co.probs[0, 2] == pytest.approx(1.0, abs=1e-5)
    assert co.probs[0, 0] == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(co.probs[1], 1.0 / 3.0)


def test_estimate_matches_counting_oracle() -> None:
    rng = np.random.default_rng(5)
    coarse = rng.integers(0, 4, size=(16, 16))
    fine = rng.integers(0, 3, size=(16, 16))
    co = estimate_cooccurrence(
        [(categorical(coarse), categorical(fine))], n_coarse=5, n_fine=3, epsilon=0.0
    )
    np.testing.assert_array_equal(co.probs, count_oracle([(coarse, fine)], 5, 3, 0.0))
    # coarse class 4 never observed
    np.testing.assert_allclose(co.probs[4], 1.0 / 3.0)


def test_estimate_errors() -> None:
    coarse = categorical(np.array([[0, 5]]))
    fine = categorical(np.array([[0, 1]]))
    with pytest.raises(DataError) as e:
        estimate_cooccurrence([(coarse, fine)], n_coarse=2, n_fine=2)
    assert "pixel 1" in str(e.value)

    empty = Grid(
        width=1,
        height=1,
        transform=TRANSFORM,
        data=np.array([9]),
        nodata=9,
        kind="categorical",
    )
    with pytest.raises(DataError):
        estimate_cooccurrence([(empty, empty)], n_coarse=2, n_fine=2)
    with pytest.raises(ParameterError):
        estimate_cooccurrence([], n_coarse=2, n_fine=2)


def test_cooccurrence_text_round_trip() -> None:
    co = CoOccurrenceMatrix(probs=np.array([[0.25, 0.75], [0.5, 0.5]]))
    decoded = read_cooccurrence(write_cooccurrence(co))
    np.testing.assert_array_equal(decoded.probs, co.probs)
    assert decoded.digest() == co.digest()


def test_prior_uniform_coarse_is_row() -> None:
    co = CoOccurrenceMatrix(probs=np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]]))
    prior = prior_from_coarse(categorical(np.zeros((8, 8), dtype=np.int64)), co)
    for k in range(3):
        np.testing.assert_allclose(prior.channels[k], co.probs[0, k], atol=1e-12)


def test_prior_two_region_matches_blur_oracle() -> None:
    data = np.zeros((8, 8), dtype=np.int64)
    data[:, 4:] = 1
    co = CoOccurrenceMatrix(probs=np.array([[0.9, 0.1], [0.2, 0.8]]))
    prior = prior_from_coarse(categorical(data), co, blur_sigma=1.0)
    for k in range(2):
        expected = brute_force_blur(co.probs[data, k], 1.0)
        np.testing.assert_allclose(prior.channels[k], expected, atol=1e-12)


def test_prior_unseen_class() -> None:
    co = CoOccurrenceMatrix(probs=np.array([[1.0]]))
    with pytest.raises(DataError):
        prior_from_coarse(categorical(np.array([[0, 1]])), co)


def test_boost_arithmetic() -> None:
    prior = PriorStack(
        channels=np.array([[[0.5]], [[0.5]]]), transform=TRANSFORM
    )
    boosted = boost_and_renormalize(
        prior, [Boost(mask=mask(np.array([[1]])), target_class=0, weight=1.0)]
    )
    assert boosted.channels[:, 0, 0].tolist() == [0.75, 0.25]


def test_boost_identities() -> None:
    rng = np.random.default_rng(1)
    raw = rng.random((3, 4, 4))
    prior = PriorStack(channels=raw / raw.sum(axis=0), transform=TRANSFORM)

    unchanged = boost_and_renormalize(prior, [])
    np.testing.assert_allclose(unchanged.channels, prior.channels, atol=1e-15)

    zero_weight = boost_and_renormalize(
        prior,
        [Boost(mask=mask(np.ones((4, 4))), target_class=1, weight=0.0)],
    )
    np.testing.assert_allclose(zero_weight.channels, prior.channels, atol=1e-15)


def test_boost_argmax_invariant_under_common_scale() -> None:
    rng = np.random.default_rng(4)
    for _ in range(20):
        raw = rng.random((4, 6, 6))
        prior = PriorStack(channels=raw / raw.sum(axis=0), transform=TRANSFORM)
        masks = [mask(rng.random((6, 6)) < 0.4) for _ in range(3)]
        targets = [int(t) for t in rng.integers(0, 4, size=3)]
        weights = [float(w) for w in rng.uniform(0.1, 2.0, size=3)]
        scale = float(rng.uniform(0.01, 100.0))

        boosts = [
            Boost(mask=m, target_class=t, weight=w)
            for m, t, w in zip(masks, targets, weights)
        ]
        base = boost_and_renormalize(prior, boosts)
        scaled_prior = PriorStack(
            channels=scale * prior.channels, transform=TRANSFORM
        )
        scaled = boost_and_renormalize(
            scaled_prior,
            [
                Boost(mask=m, target_class=t, weight=scale * w)
                for m, t, w in zip(masks, targets, weights)
            ],
        )
        np.testing.assert_array_equal(
            scaled.channels.argmax(axis=0), base.channels.argmax(axis=0)
        )
        np.testing.assert_allclose(scaled.channels, base.channels, atol=1e-12)


def test_boost_zero_mass_falls_back_to_uniform() -> None:
    prior = PriorStack(channels=np.zeros((4, 1, 1)), transform=TRANSFORM)
    out = boost_and_renormalize(prior, [])
    np.testing.assert_array_equal(out.channels[:, 0, 0], [0.25] * 4)


def test_generate_prior_constant_without_boosts() -> None:
    co = CoOccurrenceMatrix(probs=np.array([[0.6, 0.4]]))
    coarse = categorical(np.zeros((5, 5), dtype=np.int64))
    prior = generate_prior(PriorConfig(coarse=coarse, cooccurrence=co))
    np.testing.assert_allclose(prior.channels[0], 0.6, atol=1e-12)
    np.testing.assert_allclose(prior.channels[1], 0.4, atol=1e-12)
    assert prior.manifest is not None
    assert prior.manifest.blur_sigma == 1.0
    assert prior.manifest.stages == ["broadcast", "blur", "boost", "renormalize"]


def test_generate_prior_misaligned_mask() -> None:
    co = CoOccurrenceMatrix(probs=np.array([[0.6, 0.4]]))
    shifted = GeoTransform.from_origin(1.0, 16.0, 1.0)
    boost = Boost(
        mask=BinaryMask(grid=categorical(np.ones((4, 4), dtype=np.int64), shifted)),
        target_class=0,
        source="roads",
    )
    with pytest.raises(AlignmentError) as e:
        generate_prior(
            PriorConfig(
                coarse=categorical(np.zeros((4, 4), dtype=np.int64)),
                cooccurrence=co,
                boosts=[boost],
            )
        )
    assert "roads" in str(e.value)


def test_generate_prior_matches_oracle_on_random_scenes() -> None:
    rng = np.random.default_rng(42)
    n_coarse, n_fine = 8, 4
    for _ in range(25):
        coarse = rng.integers(0, n_coarse, size=(16, 16))
        fine = rng.integers(0, n_fine, size=(16, 16))
        masks = [rng.random((16, 16)) < 0.2 for _ in range(2)]
        targets = [int(t) for t in rng.integers(0, n_fine, size=2)]
        weights = [float(w) for w in rng.uniform(0.5, 2.0, size=2)]

        prior = generate_prior(
            PriorConfig(
                coarse=categorical(coarse),
                pairs=[(categorical(coarse), categorical(fine))],
                n_coarse=n_coarse,
                n_fine=n_fine,
                boosts=[
                    Boost(mask=mask(m), target_class=t, weight=w, source=f"mask{i}")
                    for i, (m, t, w) in enumerate(zip(masks, targets, weights))
                ],
            )
        )

        probs = count_oracle([(coarse, fine)], n_coarse, n_fine, 1e-6)
        boosts = list(zip(masks, targets, weights))
        expected = pipeline_oracle(coarse, probs, 1.0, boosts)
        np.testing.assert_allclose(prior.channels, expected, atol=1e-5)
        np.testing.assert_allclose(prior.channels.sum(axis=0), 1.0, atol=1e-5)


def test_generate_prior_post_blur_stays_normalized() -> None:
    rng = np.random.default_rng(8)
    coarse = rng.integers(0, 3, size=(10, 10))
    co = CoOccurrenceMatrix(probs=np.array([[0.7, 0.3], [0.1, 0.9], [0.5, 0.5]]))
    prior = generate_prior(
        PriorConfig(
            coarse=categorical(coarse),
            cooccurrence=co,
            boosts=[Boost(mask=mask(coarse == 2), target_class=0)],
            post_blur_sigma=0.5,
        )
    )
    np.testing.assert_allclose(prior.channels.sum(axis=0), 1.0, atol=1e-12)
    assert prior.manifest is not None
    assert prior.manifest.stages[-2:] == ["post_blur", "renormalize"]


def test_generate_prior_thread_count_invariant(monkeypatch: pytest.MonkeyPatch) -> None:
    rng = np.random.default_rng(3)
    coarse = categorical(rng.integers(0, 3, size=(12, 12)))
    co = CoOccurrenceMatrix(
        probs=np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    )
    config = PriorConfig(coarse=coarse, cooccurrence=co)

    monkeypatch.setenv(THREADS_ENV, "1")
    single = generate_prior(config)
    monkeypatch.setenv(THREADS_ENV, "8")
    multi = generate_prior(config)
    assert single.channels.tobytes() == multi.channels.tobytes()
    assert single.manifest is not None and multi.manifest is not None
    assert single.manifest.digest() == multi.manifest.digest()
