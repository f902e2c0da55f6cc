import numpy as np
import pytest

from vineyield.association import NearestAssociation
from vineyield.detection import (
    Box,
    OriginFit,
    aggregate_detections,
    aggregate_for_points,
    average_precision,
    fit_origin_linear,
    iou,
    load_fit_json,
    predict_yield_from_detections,
    read_detections_jsonl,
    save_fit_json,
    write_detections_jsonl,
)
from vineyield.errors import ValidationError

from oracles import ap_by_cutoff_enumeration


def box(x0, y0, x1, y1, conf=None):
    return Box(x0, y0, x1, y1, conf)


# --- IoU --------------------------------------------------------------------------


def test_iou_identical_boxes():
    b = box(0, 0, 2, 2)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0


def test_iou_hand_value():
    assert iou(box(0, 0, 2, 2), box(1, 1, 3, 3)) == pytest.approx(1 / 7)


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = Box.from_center(*rng.uniform(0, 10, 2), *rng.uniform(1, 5, 2))
        b = Box.from_center(*rng.uniform(0, 10, 2), *rng.uniform(1, 5, 2))
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


def test_box_validation():
    with pytest.raises(ValidationError):
        Box(0, 0, 0, 1)
    with pytest.raises(ValidationError):
        Box(0, 0, 1, 1, confidence=1.2)
    b = Box.from_center(5, 5, 2, 4, 0.5)
    assert (b.x_min, b.y_min, b.x_max, b.y_max) == (4, 3, 6, 7)
    assert b.area == 8


# --- average precision ---------------------------------------------------------------


def test_ap_perfect_detection():
    labels = {0: [box(0, 0, 2, 2)], 1: [box(1, 1, 3, 3)]}
    preds = {0: [box(0, 0, 2, 2, 0.9)], 1: [box(1, 1, 3, 3, 0.8)]}
    assert average_precision(preds, labels) == 1.0


def test_ap_no_predictions():
    labels = {0: [box(0, 0, 2, 2)]}
    assert average_precision({}, labels) == 0.0


def test_ap_empty_everything_is_vacuous_success():
    assert average_precision({}, {}) == 1.0


def test_ap_predictions_without_labels():
    assert average_precision({0: [box(0, 0, 1, 1, 0.9)]}, {}) == 0.0


def test_ap_hand_case_tp_fp_tp():
    # 2 labels; predictions ranked TP(0.9), FP(0.8), TP(0.7)
    labels = {0: [box(0, 0, 2, 2)], 1: [box(0, 0, 2, 2)]}
    preds = {
        0: [box(0, 0, 2, 2, 0.9), box(10, 10, 12, 12, 0.8)],
        1: [box(0, 0, 2, 2, 0.7)],
    }
    # PR points: (0.5, 1), (0.5, 0.5), (1.0, 2/3) -> AP = 0.5*1 + 0.5*(2/3)
    ap = average_precision(preds, labels)
    assert ap == pytest.approx(0.5 + 0.5 * 2 / 3)
    assert ap == pytest.approx(ap_by_cutoff_enumeration(preds, labels))


def test_ap_requires_confidences():
    with pytest.raises(ValidationError):
        average_precision({0: [box(0, 0, 1, 1)]}, {0: [box(0, 0, 1, 1)]})


def random_ap_instance(rng):
    labels = {}
    preds = {}
    for image_id in range(int(rng.integers(1, 4))):
        labels[image_id] = [
            Box.from_center(*rng.uniform(2, 18, 2), *rng.uniform(2, 6, 2))
            for _ in range(int(rng.integers(0, 4)))
        ]
        preds[image_id] = [
            Box.from_center(*rng.uniform(2, 18, 2), *rng.uniform(2, 6, 2),
                            confidence=float(rng.random()))
            for _ in range(int(rng.integers(0, 4)))
        ]
    return preds, labels


def test_ap_matches_enumeration_oracle():
    rng = np.random.default_rng(5)
    for _ in range(120):
        preds, labels = random_ap_instance(rng)
        assert average_precision(preds, labels) == pytest.approx(
            ap_by_cutoff_enumeration(preds, labels), abs=1e-12
        )


def test_ap_invariant_under_monotone_confidence_rescale():
    rng = np.random.default_rng(6)
    for _ in range(40):
        preds, labels = random_ap_instance(rng)
        rescaled = {
            i: [Box(b.x_min, b.y_min, b.x_max, b.y_max, b.confidence**3)
                for b in boxes]
            for i, boxes in preds.items()
        }
        assert average_precision(preds, labels) == pytest.approx(
            average_precision(rescaled, labels), abs=1e-12
        )


# --- aggregation ---------------------------------------------------------------------


def det_map():
    return {
        0: (box(0, 0, 1, 1), box(0, 0, 2, 2)),        # north: 2 boxes, 5 px2
        1: (box(0, 0, 2, 2), box(2, 2, 4, 4), box(0, 0, 1, 1), box(1, 1, 2, 2)),
        2: (box(0, 0, 1, 3),),                         # south: 1 box, 3 px2
    }


def test_aggregate_count_example():
    assoc = NearestAssociation(yield_id=0, north=(0, 1), south=(2,))
    # north counts {2, 4} -> mean 3; south {3}... south has 1 box, so use areas
    assert aggregate_detections(assoc, det_map(), "count") == pytest.approx(3 + 1)


def test_aggregate_count_matches_quoted_rule():
    detections = {0: (box(0, 0, 1, 1),) * 2, 1: (box(0, 0, 1, 1),) * 4,
                  2: (box(0, 0, 1, 1),) * 3}
    assoc = NearestAssociation(yield_id=0, north=(0, 1), south=(2,))
    assert aggregate_detections(assoc, detections, "count") == 6.0


def test_aggregate_area_example():
    detections = {0: (box(0, 0, 10, 10),), 1: (box(0, 0, 10, 5),)}
    assoc = NearestAssociation(yield_id=0, north=(0,), south=(1,))
    assert aggregate_detections(assoc, detections, "area") == pytest.approx(150.0)


def test_aggregate_boxless_images_are_zero():
    assoc = NearestAssociation(yield_id=0, north=(7,), south=(8,))
    assert aggregate_detections(assoc, {}, "count") == 0.0


def test_aggregate_invariant_to_image_order():
    assoc_a = NearestAssociation(yield_id=0, north=(0, 1), south=(2,))
    assoc_b = NearestAssociation(yield_id=0, north=(1, 0), south=(2,))
    assert aggregate_detections(assoc_a, det_map(), "area") == pytest.approx(
        aggregate_detections(assoc_b, det_map(), "area")
    )


def test_aggregate_missing_side_skipped_with_diagnostic():
    bad = NearestAssociation(yield_id=3, north=(), south=(2,))
    good = NearestAssociation(yield_id=4, north=(0,), south=(2,))
    values, skipped = aggregate_for_points([bad, good], det_map(), "count")
    assert skipped == [3]
    assert 4 in values


def test_aggregate_rejects_unknown_mode():
    assoc = NearestAssociation(yield_id=0, north=(0,), south=(2,))
    with pytest.raises(ValidationError):
        aggregate_detections(assoc, det_map(), "pixels")


# --- origin fit -----------------------------------------------------------------------


def test_fit_exact_line():
    assert fit_origin_linear([1, 2], [2, 4]).slope == pytest.approx(2.0)


def test_fit_hand_value():
    assert fit_origin_linear([1, 2, 3], [1, 5, 6]).slope == pytest.approx(29 / 14)


def test_fit_degenerate_inputs():
    with pytest.raises(ValidationError):
        fit_origin_linear([0, 0], [1, 2])
    with pytest.raises(ValidationError):
        fit_origin_linear([], [])
    with pytest.raises(ValidationError):
        fit_origin_linear([1, 2], [1])


def test_fit_closed_form_and_minimality():
    rng = np.random.default_rng(9)
    for _ in range(50):
        x = rng.uniform(-5, 5, size=20)
        y = 3.0 * x + rng.standard_normal(20)
        fit = fit_origin_linear(x, y)
        closed = float(np.dot(x, y) / np.dot(x, x))
        assert abs(fit.slope - closed) <= 1e-12 * max(1.0, abs(closed))

        def residual(beta):
            return float(np.sum((y - beta * x) ** 2))

        base = residual(fit.slope)
        assert residual(fit.slope + 1e-3) >= base
        assert residual(fit.slope - 1e-3) >= base


def test_predict_from_detections():
    assoc = NearestAssociation(yield_id=0, north=(0,), south=(1,))
    detections = {0: (box(0, 0, 2, 2),), 1: (box(0, 0, 1, 1),)}
    fit = OriginFit(mode="area", slope=2.0)
    preds, skipped = predict_yield_from_detections([assoc], detections, fit)
    assert preds[0] == pytest.approx(2.0 * 5.0)
    assert skipped == []
    # zero aggregate -> zero prediction (origin constraint)
    empty_fit = predict_yield_from_detections([assoc], {}, fit)[0]
    assert empty_fit[0] == 0.0


# --- file formats -----------------------------------------------------------------------


def test_detections_jsonl_roundtrip(tmp_path):
    sets = {
        3: (box(0, 0, 2, 2, 0.75), box(1, 1, 4, 4, 0.5)),
        1: (box(0, 0, 1, 1),),
    }
    path = tmp_path / "det.jsonl"
    write_detections_jsonl(path, sets, provenance={"seed": 0})
    again = read_detections_jsonl(path)
    assert again == {1: sets[1], 3: sets[3]}


def test_fit_json_roundtrip(tmp_path):
    path = tmp_path / "fit.json"
    save_fit_json(path, OriginFit(mode="count", slope=0.123), {"seed": 0})
    fit = load_fit_json(path)
    assert fit.mode == "count" and fit.slope == 0.123
