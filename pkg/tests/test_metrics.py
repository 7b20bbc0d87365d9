import math
from typing import Optional

import numpy as np
import pytest

from geofuse import (
    DataError,
    DegenerateError,
    GeoTransform,
    Grid,
    ParameterError,
    ShapeError,
    average_precision,
    format_report,
    match_point,
    mean_squared_error,
    multilabel_metrics,
    r_squared,
    scores_from_confusion,
    segmentation_metrics,
    summarize_seeds,
)

TRANSFORM = GeoTransform.from_origin(0.0, 2.0, 1.0)


def categorical(data: list, nodata: Optional[float] = None) -> Grid:
    array = np.array(data, dtype=np.int64)
    h, w = array.shape
    return Grid(
        width=w,
        height=h,
        transform=TRANSFORM,
        data=array,
        nodata=nodata,
        kind="categorical",
    )


def ap_oracle(scores: list, truth: list) -> float:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for k, index in enumerate(order, start=1):
        if truth[index]:
            hits += 1
            total += hits / k
    return total / sum(truth)


def test_segmentation_perfect() -> None:
    truth = categorical([[0, 1], [2, 2]])
    result = segmentation_metrics(truth, truth, 3)
    assert result.iou.tolist() == [1.0, 1.0, 1.0]
    assert result.dice.tolist() == [1.0, 1.0, 1.0]
    assert result.overall_accuracy == 1.0
    assert result.absent == []


def test_segmentation_hand_case() -> None:
    truth = categorical([[0, 0], [1, 1]])
    pred = categorical([[0, 1], [1, 1]])
    result = segmentation_metrics(pred, truth, 2)
    assert result.iou[0] == pytest.approx(1 / 2)
    assert result.dice[0] == pytest.approx(2 / 3)
    assert result.iou[1] == pytest.approx(2 / 3)
    assert result.dice[1] == pytest.approx(4 / 5)
    assert result.overall_accuracy == pytest.approx(3 / 4)
    assert result.confusion.tolist() == [[1, 1], [0, 2]]


def test_segmentation_disjoint() -> None:
    result = segmentation_metrics(
        categorical([[1, 1], [1, 1]]), categorical([[0, 0], [0, 0]]), 2
    )
    assert result.iou.tolist() == [0.0, 0.0]
    assert result.overall_accuracy == 0.0


def test_segmentation_absent_class() -> None:
    result = segmentation_metrics(
        categorical([[0, 1], [0, 1]]), categorical([[0, 1], [1, 1]]), 4
    )
    assert result.absent == [2, 3]
    assert result.iou[2] == 1.0
    assert result.dice[3] == 1.0
    assert result.present == [0, 1]
    assert result.mean_iou == pytest.approx((0.5 + 2 / 3) / 2)
    assert result.report()["absent"] == "2 3"


def test_segmentation_skips_nodata() -> None:
    truth = categorical([[0, 255], [1, 1]], nodata=255)
    pred = categorical([[0, 0], [1, 1]])
    result = segmentation_metrics(pred, truth, 2)
    assert int(result.confusion.sum()) == 3
    assert result.overall_accuracy == 1.0


def test_segmentation_errors() -> None:
    with pytest.raises(DataError):
        segmentation_metrics(categorical([[0, 5]]), categorical([[0, 1]]), 2)
    with pytest.raises(ShapeError):
        segmentation_metrics(categorical([[0, 1]]), categorical([[0], [1]]), 2)
    with pytest.raises(ParameterError):
        segmentation_metrics(categorical([[0]]), categorical([[0]]), 0)


def test_dice_iou_identity() -> None:
    rng = np.random.default_rng(8)
    for _ in range(100):
        confusion = rng.integers(0, 20, size=(4, 4))
        result = scores_from_confusion(confusion)
        np.testing.assert_allclose(
            result.dice, 2 * result.iou / (1 + result.iou), atol=1e-12
        )


def test_r_squared() -> None:
    truth = [1.0, 2.0, 3.0]
    assert r_squared(truth, truth) == 1.0
    assert r_squared([2.0, 2.0, 2.0], truth) == 0.0
    assert r_squared([3.0, 2.0, 1.0], truth) == pytest.approx(-3.0)
    with pytest.raises(DegenerateError):
        r_squared([1.0, 2.0], [5.0, 5.0])
    with pytest.raises(ShapeError):
        r_squared([1.0, 2.0], [1.0, 2.0, 3.0])


def test_mean_squared_error() -> None:
    assert mean_squared_error([1.0, 2.0], [1.0, 4.0]) == 2.0
    with pytest.raises(DataError):
        mean_squared_error([1.0, math.nan], [1.0, 2.0])


def test_average_precision_hand_case() -> None:
    scores = np.array([0.9, 0.8, 0.7])
    truth = np.array([1, 0, 1])
    assert average_precision(scores, truth) == pytest.approx(5 / 6)


def test_average_precision_ties_rank_by_index() -> None:
    assert average_precision(np.array([0.5, 0.5]), np.array([1, 0])) == 1.0
    assert average_precision(np.array([0.5, 0.5]), np.array([0, 1])) == 0.5


def test_average_precision_matches_oracle() -> None:
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        labels = int(rng.integers(1, 4))
        scores = rng.integers(0, 5, size=(n, labels)) / 4.0
        truth = rng.integers(0, 2, size=(n, labels))
        truth[0, 0] = 1
        result = multilabel_metrics(scores, truth)
        for j in range(labels):
            if truth[:, j].sum() == 0:
                assert j in result.excluded
                assert math.isnan(result.ap[j])
            else:
                expected = ap_oracle(list(scores[:, j]), list(truth[:, j]))
                assert result.ap[j] == pytest.approx(expected, abs=1e-12)


def test_multilabel_threshold_and_exclusion() -> None:
    scores = np.array([[0.5, 0.9], [0.2, 0.1], [0.7, 0.6]])
    truth = np.array([[1, 0], [0, 0], [0, 0]])
    result = multilabel_metrics(scores, truth)
    assert result.excluded == [1]
    assert result.precision[0] == 0.5
    assert result.recall[0] == 1.0
    assert result.f1[0] == pytest.approx(2 / 3)
    assert result.macro_f1 == pytest.approx(2 / 3)
    assert result.macro_ap == 0.5

    with pytest.raises(DegenerateError):
        multilabel_metrics(scores, np.zeros((3, 2)))
    with pytest.raises(DataError):
        multilabel_metrics(scores, truth * 2)


def test_summarize_seeds() -> None:
    summaries = summarize_seeds({0.5: [1.0, 3.0], 0.1: [2.0]})
    assert [s.fraction for s in summaries] == [0.1, 0.5]
    assert summaries[0].std == 0.0
    assert summaries[1].mean == 2.0
    assert summaries[1].std == pytest.approx(math.sqrt(2.0))
    assert summaries[1].n_seeds == 2
    with pytest.raises(ParameterError):
        summarize_seeds({0.5: []})


def test_match_point() -> None:
    baseline = summarize_seeds({0.5: [0.6], 1.0: [0.7]})
    fused = summarize_seeds({0.1: [0.5], 0.2: [0.71], 1.0: [0.8]})
    assert match_point(fused, baseline) == 0.2
    assert match_point(summarize_seeds({1.0: [0.1]}), baseline) is None


def test_format_report() -> None:
    items = {"mean_iou": 0.5, "absent": "2 3", "n": 4}
    assert format_report(items) == "mean_iou=0.5\nabsent=2 3\nn=4\n"
    assert format_report(items, "csv") == "mean_iou,absent,n\n0.5,2 3,4\n"
    with pytest.raises(ParameterError):
        format_report(items, "json")
