import numpy as np
import pytest

from wildkit.geometry import BinaryMask, BoundingBox
from wildkit.maskprop import (EdgeMap, RefineError, propagate_mask,
                              refine_with_edges)

from fixtures import random_blob_mask


def blob(rng, h, w, min_fill=0.25):
    return BinaryMask(random_blob_mask(rng, h, w, min_fill=min_fill))


class TestPropagate:
    def test_same_box_is_identity(self):
        rng = np.random.default_rng(0)
        m = blob(rng, 20, 30)
        box = BoundingBox(10, 10, 40, 30)
        assert propagate_mask(m, box, box) == m

    def test_pure_translation_preserves_content(self):
        rng = np.random.default_rng(1)
        m = blob(rng, 20, 30)
        prev = BoundingBox(10, 10, 40, 30)
        cur = prev.translated(10, 0)
        assert propagate_mask(m, prev, cur) == m

    def test_translation_inverse_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            h, w = (int(v) for v in rng.integers(8, 40, 2))
            m = blob(rng, h, w, min_fill=0.0)
            prev = BoundingBox(50, 50, 50 + w, 50 + h)
            dx, dy = (float(v) for v in rng.integers(-20, 20, 2))
            cur = prev.translated(dx, dy)
            forward = propagate_mask(m, prev, cur)
            back = propagate_mask(forward, cur, prev)
            assert back == m

    def test_area_scales_with_transform(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            h, w = (int(v) for v in rng.integers(40, 80, 2))
            m = blob(rng, h, w)
            prev = BoundingBox(100, 100, 100 + w, 100 + h)
            sx, sy = rng.uniform(0.6, 1.6, 2)
            dx, dy = rng.uniform(-30, 30, 2)
            cx, cy = prev.center
            nw, nh = w * sx, h * sy
            cur = BoundingBox(cx + dx - nw / 2, cy + dy - nh / 2,
                              cx + dx + nw / 2, cy + dy + nh / 2)
            out = propagate_mask(m, prev, cur)
            # output raster has round(nw) x round(nh) pixels, so compare
            # area fractions rather than absolute counts
            got = out.foreground_count / (out.width * out.height)
            want = m.foreground_count / (w * h)
            assert got == pytest.approx(want, rel=0.05)

    def test_empty_result_warns(self):
        m = BinaryMask(np.zeros((10, 10), dtype=bool))
        box = BoundingBox(0, 0, 10, 10)
        with pytest.warns(UserWarning, match="empty"):
            out = propagate_mask(m, box, box.translated(5, 5))
        assert out.foreground_count == 0


class TestRefineWithEdges:
    def rectangle_edges(self, h=60, w=80):
        """Clean rectangle outline in the middle of an otherwise flat
        edge map."""
        data = np.zeros((h, w))
        data[20, 20:61] = 1.0
        data[40, 20:61] = 1.0
        data[20:41, 20] = 1.0
        data[20:41, 60] = 1.0
        return EdgeMap(data)

    def test_rectangle_outline_fills(self):
        edges = self.rectangle_edges()
        box = BoundingBox(10, 10, 70, 50)
        out = refine_with_edges(edges, box, window=9, offset=0.05)
        expected = np.zeros((60, 80), dtype=bool)
        expected[20:41, 20:61] = True
        assert np.array_equal(out.data, expected)

    def test_uniform_map_has_no_boundary(self):
        edges = EdgeMap(np.full((30, 30), 0.5))
        with pytest.raises(RefineError, match="no boundary found"):
            refine_with_edges(edges, BoundingBox(2, 2, 28, 28),
                              window=5, offset=0.1)

    def test_foreground_confined_to_box(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            edges = EdgeMap(rng.random((40, 40)))
            box = BoundingBox(8, 8, 30, 30)
            try:
                out = refine_with_edges(edges, box, window=5, offset=0.0)
            except RefineError:
                continue
            ys, xs = np.nonzero(out.data)
            assert (xs >= 8).all() and (xs < 30).all()
            assert (ys >= 8).all() and (ys < 30).all()

    def test_single_filled_component(self):
        from scipy.ndimage import label, binary_fill_holes
        rng = np.random.default_rng(6)
        for _ in range(50):
            edges = EdgeMap(rng.random((40, 40)))
            try:
                out = refine_with_edges(edges, BoundingBox(4, 4, 36, 36),
                                        window=7, offset=0.02)
            except RefineError:
                continue
            _, n = label(out.data)
            assert n == 1
            assert np.array_equal(binary_fill_holes(out.data), out.data)

    def test_window_validation(self):
        edges = EdgeMap(np.zeros((10, 10)))
        with pytest.raises(ValueError, match="window"):
            refine_with_edges(edges, BoundingBox(1, 1, 9, 9), window=4)

    def test_box_outside_rejected(self):
        edges = EdgeMap(np.zeros((10, 10)))
        with pytest.raises(ValueError, match="outside"):
            refine_with_edges(edges, BoundingBox(1, 1, 20, 9), window=3)

    def test_deterministic(self):
        edges = self.rectangle_edges()
        box = BoundingBox(10, 10, 70, 50)
        a = refine_with_edges(edges, box)
        b = refine_with_edges(edges, box)
        assert a == b

    def test_edge_values_validated(self):
        with pytest.raises(ValueError):
            EdgeMap(np.full((5, 5), 2.0))
