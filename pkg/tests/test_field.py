import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from posefield.container import (BadMagic, ContainerDimensionMismatch, ModelOutputs, TruncatedPayload,
                                 VersionMismatch, from_bytes, load_container, save_container, to_bytes)
from posefield.field import DimensionMismatch, FieldGrid, bilinear_sample, sample


def _outputs(rng, k=3, h=4, w=5, stride=8):
    def grid(c, lo=-20, hi=20):
        return FieldGrid(rng.uniform(lo, hi, (h, w, c)).astype(np.float32), stride)

    return ModelOutputs(
        heatmaps=grid(k, 0, 1), short_offsets=grid(2 * k), mid_offsets=grid(4 * (k - 1)),
        long_offsets=grid(2 * k), seg_prob=grid(1, 0, 1), image_height=h * stride, image_width=w * stride)


class TestBilinearSample:
    def test_constant_field(self):
        grid = FieldGrid(np.full((6, 7, 1), 5.0), stride=8)
        assert bilinear_sample(grid, 0, (23.7, 17.2)) == pytest.approx(5.0)

    def test_cell_center_returns_cell_value(self, rng):
        data = rng.normal(size=(5, 6, 2))
        grid = FieldGrid(data, stride=16)
        for i, j in [(0, 0), (2, 3), (4, 5)]:
            p = ((j + 0.5) * 16, (i + 0.5) * 16)
            assert bilinear_sample(grid, 1, p) == pytest.approx(data[i, j, 1], abs=1e-12)

    def test_horizontal_midpoint(self):
        data = np.zeros((3, 3, 1))
        data[1, 1, 0] = 0.0
        data[1, 2, 0] = 1.0
        grid = FieldGrid(data, stride=8)
        assert bilinear_sample(grid, 0, (16.0, 12.0)) == pytest.approx(0.5)

    def test_outside_clamps_to_border(self):
        data = np.arange(12, dtype=float).reshape(3, 4, 1)
        grid = FieldGrid(data, stride=4)
        assert bilinear_sample(grid, 0, (-100, -100)) == data[0, 0, 0]
        assert bilinear_sample(grid, 0, (1000, 2.0)) == data[0, 3, 0]
        assert bilinear_sample(grid, 0, (1000, 1000)) == data[2, 3, 0]

    def test_bad_channel(self):
        grid = FieldGrid(np.zeros((2, 2, 3)))
        with pytest.raises(IndexError):
            bilinear_sample(grid, 3, (0.5, 0.5))

    @settings(max_examples=60, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-50, 50),
           u=st.floats(0, 1), v=st.floats(0, 1), stride=st.sampled_from([1, 8, 16, 32]))
    def test_exact_on_linear_functions(self, a, b, c, u, v, stride):
        h, w = 6, 7
        grid_proto = FieldGrid(np.zeros((h, w, 1)), stride)
        xs, ys = grid_proto.cell_centers()
        grid = FieldGrid((a * xs + b * ys + c)[:, :, None], stride)
        # interior: between the first and last cell centers
        x = (0.5 + u * (w - 1)) * stride
        y = (0.5 + v * (h - 1)) * stride
        expected = a * x + b * y + c
        got = bilinear_sample(grid, 0, (x, y))
        assert got == pytest.approx(expected, rel=1e-6, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(data=arrays(np.float64, (4, 5, 1), elements=st.floats(-100, 100)),
           x=st.floats(-10, 60), y=st.floats(-10, 50))
    def test_within_corner_range(self, data, x, y):
        grid = FieldGrid(data, stride=8)
        val = bilinear_sample(grid, 0, (x, y))
        u = min(max(x / 8 - 0.5, 0), 4)
        v = min(max(y / 8 - 0.5, 0), 3)
        r0, c0 = int(np.floor(v)), int(np.floor(u))
        block = data[r0:r0 + 2, c0:c0 + 2, 0]
        assert block.min() - 1e-9 <= val <= block.max() + 1e-9

    def test_vectorised_matches_scalar(self, rng):
        grid = FieldGrid(rng.normal(size=(5, 6, 3)), stride=8)
        xs = rng.uniform(-5, 60, 20)
        ys = rng.uniform(-5, 50, 20)
        vec = sample(grid, xs, ys)
        for n in range(20):
            for ch in range(3):
                assert vec[n, ch] == pytest.approx(bilinear_sample(grid, ch, (xs[n], ys[n])), abs=1e-12)


class TestFieldGrid:
    def test_immutable(self):
        grid = FieldGrid(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            FieldGrid(np.zeros((2, 2, 1)), stride=0)


class TestContainer:
    def test_round_trip(self, rng, tmp_path):
        out = _outputs(rng)
        path = tmp_path / "a.plfd"
        save_container(out, path)
        back = load_container(path)
        for name, grid in out.grids().items():
            np.testing.assert_array_equal(getattr(back, name).data, grid.data)
            assert getattr(back, name).stride == grid.stride
        assert (back.image_height, back.image_width) == (out.image_height, out.image_width)

    def test_deterministic_bytes(self, rng, tmp_path):
        out = _outputs(rng)
        save_container(out, tmp_path / "a.plfd")
        save_container(out, tmp_path / "b.plfd")
        assert (tmp_path / "a.plfd").read_bytes() == (tmp_path / "b.plfd").read_bytes()

    def test_all_zero_outputs_load(self, tmp_path):
        out = _outputs(np.random.default_rng(0))
        zero = ModelOutputs(**{name: FieldGrid(np.zeros_like(g.data), g.stride)
                               for name, g in out.grids().items()},
                            image_height=32, image_width=40)
        save_container(zero, tmp_path / "z.plfd")
        back = load_container(tmp_path / "z.plfd")
        assert not back.heatmaps.data.any()

    def test_hand_computed_layout(self):
        # K=2, 2x2 grid; value = block*100 + row*10 + col + channel/10
        k, h, w = 2, 2, 2
        counts = [2, 4, 4, 4, 1]
        grids = []
        for b, c in enumerate(counts):
            data = np.zeros((h, w, c), np.float32)
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        data[i, j, ch] = b * 100 + i * 10 + j + ch / 10
            grids.append(FieldGrid(data, 16))
        out = ModelOutputs(*grids, image_height=32, image_width=32)

        expected = b"PLFD" + struct.pack("<7I", 1, k, 32, 32, 16, h, w)
        for b, c in enumerate(counts):
            expected += struct.pack("<I", c)
            values = [b * 100 + 0 * 10 + 0 + ch / 10 for ch in range(c)]
            values += [b * 100 + 0 * 10 + 1 + ch / 10 for ch in range(c)]
            values += [b * 100 + 1 * 10 + 0 + ch / 10 for ch in range(c)]
            values += [b * 100 + 1 * 10 + 1 + ch / 10 for ch in range(c)]
            expected += struct.pack(f"<{len(values)}f", *values)
        assert to_bytes(out) == expected
        assert len(expected) == 32 + 5 * 4 + 4 * (2 + 4 + 4 + 4 + 1) * 4

    def test_bad_magic(self, rng):
        buf = bytearray(to_bytes(_outputs(rng)))
        buf[:4] = b"NOPE"
        with pytest.raises(BadMagic):
            from_bytes(bytes(buf))

    def test_version_mismatch(self, rng):
        buf = bytearray(to_bytes(_outputs(rng)))
        buf[4:8] = struct.pack("<I", 2)
        with pytest.raises(VersionMismatch):
            from_bytes(bytes(buf))

    def test_truncated(self, rng):
        buf = to_bytes(_outputs(rng))
        with pytest.raises(TruncatedPayload):
            from_bytes(buf[:-3])
        with pytest.raises(TruncatedPayload):
            from_bytes(buf[:20])

    def test_seg_channel_mismatch_in_file(self, rng):
        out = _outputs(rng, k=2, h=2, w=2)
        buf = bytearray(to_bytes(out))
        # seg block header sits right before the last 2*2*1 floats
        pos = len(buf) - 16 - 4
        assert struct.unpack_from("<I", buf, pos)[0] == 1
        buf[pos:pos + 4] = struct.pack("<I", 2)
        buf += b"\0" * 16
        with pytest.raises(ContainerDimensionMismatch):
            from_bytes(bytes(buf))

    def test_trailing_bytes(self, rng):
        with pytest.raises(ContainerDimensionMismatch):
            from_bytes(to_bytes(_outputs(rng)) + b"\0\0\0\0")

    def test_seg_width_mismatch_rejected(self, rng):
        out = _outputs(rng, h=4, w=5)
        bad = out.grids()
        bad["seg_prob"] = FieldGrid(np.zeros((4, 6, 1), np.float32), 8)
        with pytest.raises(DimensionMismatch):
            ModelOutputs(**bad, image_height=32, image_width=40)

    def test_errors_are_distinct(self):
        kinds = {BadMagic, VersionMismatch, TruncatedPayload, ContainerDimensionMismatch}
        assert len(kinds) == 4
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(1, 4), h=st.integers(1, 5), w=st.integers(1, 5),
           stride=st.sampled_from([1, 8, 16, 32]), seed=st.integers(0, 2 ** 31))
    def test_round_trip_property(self, k, h, w, stride, seed):
        gen = np.random.default_rng(seed)
        out = _outputs(gen, k, h, w, stride)
        back = from_bytes(to_bytes(out))
        for name, grid in out.grids().items():
            assert getattr(back, name).data.tobytes() == grid.data.tobytes()
