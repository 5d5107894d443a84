import numpy as np
import pytest

from anglekit.errors import FormatError, InvalidArgumentError
from anglekit.features import (
    Extractor,
    ExtractorSpec,
    avg_pool_2x2,
    conv2d_valid_same,
    extract,
    flatten,
    read_features,
    unflatten,
    write_features,
)


def brute_force_conv(x, kernels, bias):
    """Sliding-window oracle for same-padding cross-correlation."""
    n, h, w, c_in = x.shape
    kh, kw, _, c_out = kernels.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, h, w, c_out))
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for o in range(c_out):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            si, sj = i + di - ph, j + dj - pw
                            if 0 <= si < h and 0 <= sj < w:
                                acc += float(
                                    (x[b, si, sj] * kernels[di, dj, :, o]).sum()
                                )
                    out[b, i, j, o] = acc + bias[o]
    return out


class TestConv2d:
    def test_1x1_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.random((2, 5, 4, 1)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = conv2d_valid_same(x, k, np.zeros(1, dtype=np.float32))
        np.testing.assert_allclose(out, x, atol=1e-7)

    def test_impulse_spreads_to_3x3_block(self):
        x = np.zeros((1, 7, 7, 1), dtype=np.float32)
        x[0, 3, 3, 0] = 1.0
        k = np.ones((3, 3, 1, 1), dtype=np.float32)
        out = conv2d_valid_same(x, k, np.zeros(1, dtype=np.float32))[0, :, :, 0]
        want = np.zeros((7, 7))
        want[2:5, 2:5] = 1.0
        np.testing.assert_allclose(out, want, atol=1e-7)

    def test_zero_kernel_gives_bias(self):
        rng = np.random.default_rng(1)
        x = rng.random((3, 4, 4, 2)).astype(np.float32)
        k = np.zeros((3, 3, 2, 5), dtype=np.float32)
        b = np.arange(5, dtype=np.float32)
        out = conv2d_valid_same(x, k, b)
        np.testing.assert_allclose(out, np.broadcast_to(b, out.shape), atol=1e-7)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 6, 5, 3)).astype(np.float32)
        k = rng.normal(size=(3, 3, 3, 4)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        got = conv2d_valid_same(x, k, b)
        want = brute_force_conv(x.astype(float), k.astype(float), b.astype(float))
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            conv2d_valid_same(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))


class TestExtract:
    def test_default_output_shape(self):
        spec = ExtractorSpec()
        imgs = [np.zeros((128, 128)) for _ in range(3)]
        out = extract(imgs, spec)
        assert out.shape == (3, 8, 8, 64)
        assert out.dtype == np.float32

    def test_zero_input_zero_biases_zero_features(self):
        out = extract([np.zeros((128, 128))], ExtractorSpec())
        assert np.all(out == 0.0)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(3)
        imgs = [rng.random((64, 64)) for _ in range(2)]
        spec = ExtractorSpec(input_size=(64, 64), stage_channels=(4, 8), weight_seed=9)
        a = extract(imgs, spec)
        b = extract(imgs, spec)
        assert np.array_equal(a, b)

    def test_weights_frozen(self):
        ext = Extractor(ExtractorSpec(input_size=(32, 32), stage_channels=(4,)))
        with pytest.raises(ValueError):
            ext.stages[0][0][0, 0, 0, 0] = 1.0

    def test_wrong_input_size_rejected(self):
        with pytest.raises(InvalidArgumentError):
            extract([np.zeros((64, 64))], ExtractorSpec())

    def test_indivisible_input_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ExtractorSpec(input_size=(100, 100), stage_channels=(4, 8, 16))

    def test_translation_covariance_on_impulse(self):
        # shifting a pattern by 2 pixels moves the strongest response by 1
        # cell in the once-pooled map
        spec = ExtractorSpec(input_size=(32, 32), stage_channels=(6,), weight_seed=1)
        base = np.zeros((32, 32))
        base[12, 12] = 1.0
        shifted = np.zeros((32, 32))
        shifted[14, 14] = 1.0
        fa, fb = extract([base, shifted], spec)
        energy_a = (fa ** 2).sum(axis=2)
        energy_b = (fb ** 2).sum(axis=2)
        pa = np.unravel_index(np.argmax(energy_a), energy_a.shape)
        pb = np.unravel_index(np.argmax(energy_b), energy_b.shape)
        assert (pb[0] - pa[0], pb[1] - pa[1]) == (1, 1)


class TestAvgPool:
    def test_preserves_mean(self):
        rng = np.random.default_rng(4)
        x = rng.random((2, 8, 6, 3))
        pooled = avg_pool_2x2(x)
        assert pooled.shape == (2, 4, 3, 3)
        assert pooled.mean() == pytest.approx(x.mean(), rel=1e-12)

    def test_odd_dims_rejected(self):
        with pytest.raises(InvalidArgumentError):
            avg_pool_2x2(np.zeros((1, 5, 4, 1)))


class TestFlatten:
    def test_shape(self):
        t = np.zeros((2, 8, 8, 64), dtype=np.float32)
        assert flatten(t).shape == (2, 4096)

    def test_single_element_passthrough(self):
        t = np.full((1, 1, 1, 1), 3.5)
        assert flatten(t).shape == (1, 1)
        assert flatten(t)[0, 0] == 3.5

    def test_bijection_with_unflatten(self):
        rng = np.random.default_rng(5)
        t = rng.random((3, 4, 5, 6))
        assert np.array_equal(unflatten(flatten(t), (4, 5, 6)), t)

    def test_row_major_order(self):
        t = np.arange(2 * 2 * 2 * 2).reshape(2, 2, 2, 2)
        assert np.array_equal(flatten(t)[0], np.arange(8))


class TestFeatureFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(6)
        t = rng.random((3, 4, 4, 8)).astype(np.float32)
        p = tmp_path / "t.ft"
        write_features(t, p)
        back = read_features(p)
        assert back.dtype == np.float32
        assert np.array_equal(back, t)
        # and the file itself re-serializes identically
        p2 = tmp_path / "t2.ft"
        write_features(back, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ft"
        p.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(FormatError, match="magic"):
            read_features(p)

    def test_wrong_dim_count(self, tmp_path):
        import struct

        p = tmp_path / "d.ft"
        p.write_bytes(b"FT01" + struct.pack("<I", 3) + bytes(24))
        with pytest.raises(FormatError, match="dim count"):
            read_features(p)

    def test_truncated_payload_reports_offset(self, tmp_path):
        import struct

        p = tmp_path / "short.ft"
        header = b"FT01" + struct.pack("<I", 4) + struct.pack("<4I", 1, 2, 2, 2)
        p.write_bytes(header + b"\x00" * (4 * 8 - 4))  # one value short
        with pytest.raises(FormatError, match="truncated payload"):
            read_features(p)

    def test_dim_overflow(self, tmp_path):
        import struct

        p = tmp_path / "huge.ft"
        header = b"FT01" + struct.pack("<I", 4) + struct.pack(
            "<4I", 2**31, 2**31, 4, 4
        )
        p.write_bytes(header)
        with pytest.raises(FormatError, match="overflow"):
            read_features(p)

    def test_non_4d_write_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_features(np.zeros((2, 2)), tmp_path / "x.ft")

    def test_non_finite_write_rejected(self, tmp_path):
        t = np.zeros((1, 1, 1, 1), dtype=np.float32)
        t[0, 0, 0, 0] = np.nan
        with pytest.raises(InvalidArgumentError):
            write_features(t, tmp_path / "x.ft")


class TestExtractorKind:
    def test_imported_kind_skips_stage_validation(self):
        spec = ExtractorSpec(input_size=(100, 100), stage_channels=(),
                             kind="imported")
        assert spec.kind == "imported"

    def test_imported_kind_cannot_back_an_extractor(self):
        with pytest.raises(InvalidArgumentError):
            Extractor(ExtractorSpec(kind="imported"))

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ExtractorSpec(kind="magic")
