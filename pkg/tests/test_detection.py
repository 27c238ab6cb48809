"""Detection geometry: IoU, target encoding/decoding, suppression."""

import numpy as np
import pytest

from capsyolo.detection import BBox, Detection, GridSpec, decode_predictions, encode_targets, iou, nms

from oracles import iou_by_pixel_counting, nms_by_simulation


def random_box(rng, max_size=1.0) -> BBox:
    w = rng.uniform(0.05, max_size)
    h = rng.uniform(0.05, max_size)
    x = rng.uniform(0, 1 - w)
    y = rng.uniform(0, 1 - h)
    return BBox(x, y, x + w, y + h)


class TestIou:
    def test_identical_boxes(self):
        box = BBox(0.1, 0.2, 0.5, 0.8)
        assert iou(box, box) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert iou(BBox(0.0, 0.0, 0.2, 0.2), BBox(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_sliding_overlap_example(self):
        # classic 2x2 squares offset by 1: overlap 1, union 7
        a = BBox(0.0, 0.0, 2.0, 2.0)
        b = BBox(1.0, 1.0, 3.0, 3.0)
        assert iou(a, b) == pytest.approx(1.0 / 7.0, abs=1e-12)

    def test_against_pixel_counting_oracle(self):
        a = (0.0, 0.0, 2.0, 2.0)
        b = (1.0, 1.0, 3.0, 3.0)
        oracle = iou_by_pixel_counting(a, b)
        assert iou(BBox(*a), BBox(*b)) == pytest.approx(oracle, abs=1e-3)

    def test_random_boxes_against_oracle(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            a, b = random_box(rng), random_box(rng)
            want = iou_by_pixel_counting((a.x_min, a.y_min, a.x_max, a.y_max),
                                         (b.x_min, b.y_min, b.x_max, b.y_max))
            assert iou(a, b) == pytest.approx(want, abs=2e-3)

    def test_symmetry(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)

    def test_zero_area_convention(self):
        degenerate = BBox(0.3, 0.3, 0.3, 0.3)
        assert iou(degenerate, degenerate) == 0.0

    def test_invalid_ordering_raises(self):
        with pytest.raises(ValueError):
            BBox(0.5, 0.0, 0.2, 1.0)


class TestEncodeTargets:
    GRID = GridSpec(S=2, B=2, K=3)

    def test_boundary_center_goes_to_higher_cell(self):
        box = BBox(0.3, 0.3, 0.7, 0.7)    # center (0.5, 0.5)
        target = encode_targets([(box, 1)], self.GRID).data
        assert target[1, 1, 4] == 1.0
        assert target[1, 1, 0] == pytest.approx(0.0)   # x offset
        assert target[1, 1, 1] == pytest.approx(0.0)   # y offset
        assert target.sum() == pytest.approx(1.0 + 0.4 + 0.4 + 1.0)  # obj + w + h + one-hot

    def test_quarter_center_cell_and_offsets(self):
        box = BBox(0.15, 0.15, 0.35, 0.35)   # center (0.25, 0.25)
        target = encode_targets([(box, 0)], self.GRID).data
        assert target[0, 0, 4] == 1.0
        assert target[0, 0, 0] == pytest.approx(0.5)
        assert target[0, 0, 1] == pytest.approx(0.5)

    def test_no_objects_gives_zero_tensor(self):
        target = encode_targets([], self.GRID).data
        np.testing.assert_array_equal(target, np.zeros_like(target))

    def test_one_hot_class_written(self):
        box = BBox(0.1, 0.6, 0.3, 0.9)
        target = encode_targets([(box, 2)], self.GRID).data
        row, col = 1, 0
        np.testing.assert_array_equal(target[row, col, self.GRID.B * 5:], [0.0, 0.0, 1.0])

    def test_same_cell_collision_warns_last_wins(self):
        first = BBox(0.1, 0.1, 0.3, 0.3)
        second = BBox(0.05, 0.05, 0.4, 0.4)
        with pytest.warns(UserWarning, match="multiple object centers"):
            target = encode_targets([(first, 0), (second, 1)], self.GRID).data
        assert target[0, 0, 2] == pytest.approx(second.width)
        np.testing.assert_array_equal(target[0, 0, self.GRID.B * 5:], [0.0, 1.0, 0.0])

    def test_unnormalized_box_raises(self):
        with pytest.raises(ValueError):
            encode_targets([(BBox(0.5, 0.5, 1.5, 1.5), 0)], self.GRID)

    def test_bad_class_raises(self):
        with pytest.raises(ValueError):
            encode_targets([(BBox(0.1, 0.1, 0.2, 0.2), 3)], self.GRID)


class TestDecodePredictions:
    GRID = GridSpec(S=2, B=2, K=3)

    def test_all_below_threshold_gives_empty(self):
        raw = np.zeros((2, 2, self.GRID.cell_depth))
        raw[:, :, self.GRID.B * 5] = 1.0     # valid class distribution
        assert decode_predictions(raw, self.GRID, conf_threshold=0.5) == []

    def test_single_cell_decodes_to_hand_box(self):
        raw = np.zeros((2, 2, self.GRID.cell_depth))
        raw[0, 1, 0:5] = (0.5, 0.25, 0.4, 0.2, 1.0)  # cell row 0 col 1
        raw[:, :, self.GRID.B * 5 + 2] = 1.0
        dets = decode_predictions(raw, self.GRID, conf_threshold=0.5)
        assert len(dets) == 1
        d = dets[0]
        # center x = (col + off)/S = (1 + 0.5)/2, y = (0 + 0.25)/2
        assert d.box.x_min == pytest.approx(0.75 - 0.2)
        assert d.box.x_max == pytest.approx(0.75 + 0.2)
        assert d.box.y_min == pytest.approx(0.125 - 0.1)
        assert d.box.y_max == pytest.approx(0.125 + 0.1)
        assert d.class_id == 2
        assert d.objectness == 1.0

    def test_decode_inverts_encode(self):
        box = BBox(0.1, 0.3, 0.5, 0.9)
        target = encode_targets([(box, 1)], self.GRID)
        dets = decode_predictions(target, self.GRID, conf_threshold=0.5)
        assert len(dets) == 1
        got = dets[0].box
        for a, b in zip((got.x_min, got.y_min, got.x_max, got.y_max),
                        (box.x_min, box.y_min, box.x_max, box.y_max)):
            assert a == pytest.approx(b, abs=1e-9)
        assert dets[0].class_id == 1

    def test_decoded_boxes_are_clipped_and_valid(self):
        rng = np.random.default_rng(26)
        raw = np.zeros((2, 2, self.GRID.cell_depth))
        raw[:, :, 0:5] = rng.uniform(0, 1, (2, 2, 5))
        raw[:, :, 5:10] = rng.uniform(0, 1, (2, 2, 5))
        raw[:, :, 10] = 1.0
        for det in decode_predictions(raw, self.GRID, conf_threshold=0.0):
            assert 0.0 <= det.box.x_min <= det.box.x_max <= 1.0
            assert 0.0 <= det.box.y_min <= det.box.y_max <= 1.0

    def test_bad_threshold_raises(self):
        with pytest.raises(ValueError):
            decode_predictions(np.zeros((2, 2, 13)), self.GRID, conf_threshold=1.5)

    def test_roundtrip_many_random_object_sets(self):
        rng = np.random.default_rng(27)
        grid = GridSpec(S=4, B=2, K=5)
        for _ in range(50):
            objects = []
            cells = set()
            for _ in range(rng.integers(1, 6)):
                box = random_box(rng, max_size=0.6)
                cx, cy = box.center
                cell = (int(min(cy * grid.S, grid.S - 1)), int(min(cx * grid.S, grid.S - 1)))
                if cell in cells:
                    continue
                cells.add(cell)
                objects.append((box, int(rng.integers(0, grid.K))))
            decoded = decode_predictions(encode_targets(objects, grid), grid, conf_threshold=0.5)
            assert len(decoded) == len(objects)
            decoded_sorted = sorted(decoded, key=lambda d: (d.box.x_min, d.box.y_min))
            objects_sorted = sorted(objects, key=lambda o: (o[0].x_min, o[0].y_min))
            for det, (box, class_id) in zip(decoded_sorted, objects_sorted):
                assert det.class_id == class_id
                assert det.box.x_min == pytest.approx(box.x_min, abs=1e-6)
                assert det.box.y_min == pytest.approx(box.y_min, abs=1e-6)
                assert det.box.x_max == pytest.approx(box.x_max, abs=1e-6)
                assert det.box.y_max == pytest.approx(box.y_max, abs=1e-6)


def make_detection(box, objectness, class_id, k=3):
    probs = np.full(k, (1.0 - 0.9) / (k - 1))
    probs[class_id] = 0.9
    return Detection(box=box, objectness=objectness, class_probs=probs)


class TestNms:
    def test_single_detection_kept(self):
        det = make_detection(BBox(0.1, 0.1, 0.4, 0.4), 0.8, 0)
        assert nms([det], 0.5) == [det]

    def test_empty_input(self):
        assert nms([], 0.5) == []

    def test_duplicate_boxes_keep_higher_score(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        strong = make_detection(box, 0.9, 1)
        weak = make_detection(box, 0.8, 1)
        kept = nms([weak, strong], 0.5)
        assert kept == [strong]

    def test_disjoint_boxes_both_kept(self):
        a = make_detection(BBox(0.0, 0.0, 0.2, 0.2), 0.9, 0)
        b = make_detection(BBox(0.7, 0.7, 0.9, 0.9), 0.8, 0)
        assert nms([a, b], 0.0) == [a, b]

    def test_different_classes_do_not_suppress(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        a = make_detection(box, 0.9, 0)
        b = make_detection(box, 0.8, 1)
        assert nms([a, b], 0.5) == [a, b]

    def test_output_is_score_sorted_subset(self):
        rng = np.random.default_rng(28)
        dets = [make_detection(random_box(rng), rng.uniform(0.1, 1.0), int(rng.integers(0, 3)))
                for _ in range(10)]
        kept = nms(dets, 0.4)
        assert all(k in dets for k in kept)
        scores = [k.score for k in kept]
        assert scores == sorted(scores, reverse=True)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                if a.class_id == b.class_id:
                    assert iou(a.box, b.box) < 0.4

    def test_matches_brute_force_simulation(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            n = int(rng.integers(1, 11))
            dets = [make_detection(random_box(rng), rng.uniform(0.1, 1.0),
                                   int(rng.integers(0, 3))) for _ in range(n)]
            threshold = rng.uniform(0.1, 0.9)
            kept = nms(dets, threshold)
            boxes = [d.box for d in dets]
            scores = [d.score for d in dets]
            classes = [d.class_id for d in dets]
            expected = nms_by_simulation(boxes, scores, classes, iou, threshold)
            assert [dets.index(k) for k in kept] == expected

    def test_bad_threshold_raises(self):
        with pytest.raises(ValueError):
            nms([], 1.2)


class TestDetectionType:
    def test_class_probs_must_sum_to_one(self):
        with pytest.raises(ValueError):
            Detection(box=BBox(0, 0, 1, 1), objectness=0.5, class_probs=[0.5, 0.1])

    def test_objectness_range_checked(self):
        with pytest.raises(ValueError):
            Detection(box=BBox(0, 0, 1, 1), objectness=1.5, class_probs=[1.0])

    def test_argmax_class_id(self):
        det = Detection(box=BBox(0, 0, 1, 1), objectness=0.5, class_probs=[0.2, 0.7, 0.1])
        assert det.class_id == 1
        assert det.score == pytest.approx(0.35)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(S=0, B=1, K=1)
    assert GridSpec(S=7, B=2, K=10).cell_depth == 20
