import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as nps

from tinbinn import kernels, oracle
from tinbinn.fxcore import (
    Accum16Plane,
    Accum32Plane,
    OverflowLog,
    PackedKernel3x3,
    Plane,
    pack_dense_row,
    pack_kernel,
)
from tinbinn.kernels import ColumnStrip, Pass

ALL_PLUS = pack_kernel([1] * 9)
ALL_MINUS = pack_kernel([-1] * 9)


def brute_force_pass(strip_bytes, kernel_bits, offsets):
    """Window sums straight from the definition, one output at a time."""
    rows = len(strip_bytes)
    cols = []
    for off in offsets:
        col = []
        for r in range(rows - 2):
            s = 0
            for dy in range(3):
                for dx in range(3):
                    a = int(strip_bytes[r + dy][off + dx])
                    s += a if (kernel_bits >> (3 * dy + dx)) & 1 else -a
            col.append(s)
        cols.append(col)
    return cols


# -- dual_conv_pass -------------------------------------------------------


def test_dual_pass_all_ones_first():
    res = kernels.dual_conv_pass(ColumnStrip(0, np.ones((6, 8))), ALL_PLUS, Pass.FIRST)
    assert res.columns.shape == (2, 4)
    assert (res.columns == 9).all()


def test_dual_pass_all_max_second():
    res = kernels.dual_conv_pass(ColumnStrip(4, np.full((5, 8), 255)), ALL_MINUS, Pass.SECOND)
    assert (res.columns == -2295).all()


def test_dual_pass_random_vs_brute_force(rng):
    for _ in range(200):
        rows = int(rng.integers(3, 20))
        data = rng.integers(0, 256, (rows, 8))
        bits = int(rng.integers(0, 512))
        for p in Pass:
            res = kernels.dual_conv_pass(ColumnStrip(0, data), PackedKernel3x3(bits), p)
            assert res.columns.tolist() == brute_force_pass(data.tolist(), bits, p.offsets)


def test_dual_pass_range_exhaustive_extremes():
    # the extreme sums are reached by all-max inputs under uniform kernels
    data = np.full((3, 8), 255)
    for bits in range(512):
        res = kernels.dual_conv_pass(ColumnStrip(0, data), PackedKernel3x3(bits), Pass.FIRST)
        assert np.abs(res.columns).max() <= 2295


def test_dual_pass_rejects_short_strip():
    with pytest.raises(ValueError):
        kernels.dual_conv_pass(ColumnStrip(0, np.zeros((2, 8))), ALL_PLUS, Pass.FIRST)


def test_strip_alignment_and_zero_fill():
    with pytest.raises(ValueError):
        ColumnStrip(2, np.zeros((3, 8)))
    plane = Plane.from_array(np.arange(36).reshape(3, 12) + 1)
    strip = ColumnStrip.from_plane(plane, 8)
    np.testing.assert_array_equal(strip.data[:, :4], plane.data[:, 8:])
    assert (strip.data[:, 4:] == 0).all()


# -- conv_plane -----------------------------------------------------------


def test_conv_plane_zero():
    out = kernels.conv_plane(Plane.zeros(8, 8), pack_kernel([1, -1] * 4 + [1]))
    assert out.shape == (6, 6) and not out.data.any()


def test_conv_plane_impulse():
    x = np.zeros((8, 8), dtype=np.uint8)
    x[3, 3] = 255
    out = kernels.conv_plane(Plane.from_array(x), ALL_PLUS).data
    # windows anchored at rows 1..3 and columns 1..3 contain (3, 3)
    expected = np.zeros((6, 6), dtype=np.int16)
    expected[1:4, 1:4] = 255
    np.testing.assert_array_equal(out, expected)


def test_conv_plane_rejects_unaligned_width():
    with pytest.raises(ValueError):
        kernels.conv_plane(Plane.zeros(6, 8), ALL_PLUS)


def test_conv_plane_random_32(rng):
    x = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    k = PackedKernel3x3(int(rng.integers(0, 512)))
    out = kernels.conv_plane(Plane.from_array(x), k)
    assert out.data.tolist() == oracle.scalar_conv3(x.tolist(), k.bits)


@given(
    width=st.sampled_from(range(4, 41, 4)),
    height=st.integers(3, 24),
    bits=st.integers(0, 511),
    seed=st.integers(0, 2**32 - 1),
)
def test_conv_plane_matches_naive(width, height, bits, seed):
    x = np.random.default_rng(seed).integers(0, 256, (height, width), dtype=np.uint8)
    plane, k = Plane.from_array(x), PackedKernel3x3(bits)
    assert kernels.conv_plane(plane, k) == oracle.naive_conv3(plane, k)


def test_conv_layer_matches_per_pair(rng):
    x = rng.integers(0, 256, (5, 10, 13), dtype=np.uint8)
    words = rng.integers(0, 512, (3, 5)).astype(np.uint16)
    out = kernels.conv_layer(x, words)
    assert out.shape == (3, 5, 8, 11)
    for o in range(3):
        for i in range(5):
            assert out[o, i].tolist() == oracle.scalar_conv3(x[i].tolist(), int(words[o, i]))


# -- quad add / accumulation ----------------------------------------------


def test_quad_add_examples():
    z32, z16 = Accum32Plane.zeros(4, 2), Accum16Plane(4, 2, np.zeros(8))
    assert kernels.quad_add_16_to_32(z32, z16) == z32
    acc = Accum32Plane(4, 2, np.full(8, 1000))
    out = kernels.quad_add_16_to_32(acc, Accum16Plane(4, 2, np.full(8, -2295)))
    assert (out.data == -1295).all()


def test_quad_add_random_vs_scalar(rng):
    a = rng.integers(-(2**31), 2**31, (6, 7))
    p = rng.integers(-(2**15), 2**15, (6, 7))
    out = kernels.quad_add_16_to_32(Accum32Plane.from_array(a), Accum16Plane.from_array(p))
    np.testing.assert_array_equal(out.data, oracle.naive_quad_add(a, p))


def test_quad_add_shape_mismatch():
    with pytest.raises(ValueError):
        kernels.quad_add_16_to_32(Accum32Plane.zeros(2, 2), Accum16Plane(2, 1, [0, 0]))


def test_accumulate_single_partial():
    p = Accum16Plane(3, 1, [-5, 0, 2295])
    out = kernels.accumulate_maps([p])
    assert out.data.dtype == np.int32 and out.data.tolist() == [[-5, 0, 2295]]


def test_accumulate_16_max_partials_wraps():
    log = OverflowLog()
    parts = [Accum16Plane(4, 4, np.full(16, 2295))] * 16
    out = kernels.accumulate_maps(parts, overflow=log)
    # 16 * 2295 = 36720 = 65536 - 28816
    assert (out.data == -28816).all()
    assert log.total == 16
    assert len(log.events) == 1


def test_accumulate_vs_pure_32b(rng):
    parts = rng.integers(-2295, 2296, (48, 5, 6))
    log = OverflowLog()
    out = kernels.accumulate_maps([Accum16Plane.from_array(p) for p in parts], overflow=log)
    assert log.total == 0
    np.testing.assert_array_equal(out.data, parts.sum(axis=0))


def test_accumulate_group_one_is_pure_32b(rng):
    parts = rng.integers(-(2**15), 2**15, (40, 3, 3))
    out = kernels.accumulate_array(parts, group_size=1)
    np.testing.assert_array_equal(out, parts.sum(axis=0))


def test_accumulate_matches_naive_with_wraps(rng):
    parts = rng.integers(1500, 2296, (37, 4, 4))
    log_a, log_b = OverflowLog(), OverflowLog()
    a = kernels.accumulate_array(parts, overflow=log_a)
    b = oracle.naive_accumulate(parts, overflow=log_b)
    np.testing.assert_array_equal(a, b)
    assert log_a.total == log_b.total > 0


def test_accumulate_errors():
    with pytest.raises(ValueError):
        kernels.accumulate_maps([])
    with pytest.raises(ValueError):
        kernels.accumulate_maps([Accum16Plane(2, 2, np.zeros(4)), Accum16Plane(4, 1, np.zeros(4))])
    with pytest.raises(ValueError):
        kernels.accumulate_array(np.zeros((2, 2), dtype=np.int16), group_size=0)


def test_overflow_log_does_not_change_results(rng):
    parts = rng.integers(-(2**15), 2**15, (33, 3, 3))
    np.testing.assert_array_equal(
        kernels.accumulate_array(parts), kernels.accumulate_array(parts, overflow=OverflowLog())
    )


# -- activation -----------------------------------------------------------


def test_activate_examples():
    assert kernels.activate_32_to_8(Accum32Plane.zeros(1, 1), 0, 0).data[0, 0] == 0
    for shift in (0, 5, 31):
        assert kernels.activate_32_to_8(Accum32Plane(1, 1, [-5000]), 0, shift).data[0, 0] == 0
    # 1_000_000 >> 8 = 3906, saturates
    assert kernels.activate_32_to_8(Accum32Plane(1, 1, [1_000_000]), 0, 8).data[0, 0] == 255


def test_activate_floor_rounding():
    out = kernels.activate_array(np.array([[7, 8, -1, 300]]), [1], [2])
    assert out.tolist() == [[2, 2, 0, 75]]


def test_activate_rejects_big_shift():
    with pytest.raises(ValueError):
        kernels.activate_32_to_8(Accum32Plane.zeros(1, 1), 0, 32)


@given(
    st.lists(st.integers(-(2**31), 2**31 - 1), min_size=2, max_size=30),
    st.integers(-(2**31), 2**31 - 1),
    st.integers(0, 31),
)
def test_activate_monotone(accs, bias, shift):
    accs = np.sort(np.array(accs, dtype=np.int64))
    out = kernels.activate_array(accs[None], [bias], [shift])[0]
    assert (np.diff(out.astype(int)) >= 0).all()
    np.testing.assert_array_equal(out, oracle.naive_activate(accs[None], [bias], [shift])[0])


# -- pooling --------------------------------------------------------------


def test_maxpool_examples():
    assert kernels.maxpool2(Plane.from_array(np.full((4, 6), 7))) == Plane.from_array(np.full((2, 3), 7))
    assert kernels.maxpool2(Plane.from_array([[1, 2], [3, 4]])).data.tolist() == [[4]]
    with pytest.raises(ValueError):
        kernels.maxpool2(Plane.zeros(3, 2))


def test_maxpool_random_32(rng):
    x = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    expected = [[max(x[2 * i, 2 * j], x[2 * i, 2 * j + 1], x[2 * i + 1, 2 * j], x[2 * i + 1, 2 * j + 1]) for j in range(16)] for i in range(16)]
    assert kernels.maxpool2(Plane.from_array(x)).data.tolist() == expected


@given(nps.arrays(np.uint8, st.tuples(st.integers(1, 8).map(lambda n: 2 * n), st.integers(1, 8).map(lambda n: 2 * n))))
def test_maxpool_dominates_block(x):
    out = kernels.maxpool2(Plane.from_array(x)).data
    blocks = x.reshape(x.shape[0] // 2, 2, x.shape[1] // 2, 2).transpose(0, 2, 1, 3).reshape(out.shape + (4,))
    assert (out[..., None] >= blocks).all()
    assert (out[..., None] == blocks).any(axis=-1).all()


# -- dense / SVM ----------------------------------------------------------


def _random_rows(rng, n, length):
    return [pack_dense_row(rng.choice([-1, 1], size=length)) for _ in range(n)]


def test_dense_zero_input_is_bias_activation(rng):
    rows = _random_rows(rng, 4, 20)
    out = kernels.dense(np.zeros(20, dtype=np.uint8), rows, [-3, 0, 9, 600], [0, 0, 1, 1])
    assert out.data.tolist() == [[0, 0, 4, 255]]


def test_dense_saturates():
    row = pack_dense_row([1] * 2048)
    # 2048 >> 3 = 256, saturates
    assert kernels.dense(np.ones(2048, dtype=np.uint8), [row], [0], [3]).data.tolist() == [[255]]


def test_dense_random_vs_scalar(rng):
    x = rng.integers(0, 256, 77, dtype=np.uint8)
    rows = _random_rows(rng, 9, 77)
    biases = rng.integers(-1000, 1000, 9)
    shifts = rng.integers(0, 8, 9)
    sums = [sum(int(a) if s == 1 else -int(a) for a, s in zip(x, r.mask() * 2 - 1)) for r in rows]
    expected = [min(255, max(0, (s + int(b)) >> int(sh))) for s, b, sh in zip(sums, biases, shifts)]
    assert kernels.dense(x, rows, biases, shifts).data[0].tolist() == expected


def test_dense_length_mismatch(rng):
    with pytest.raises(ValueError):
        kernels.dense(np.zeros(10, dtype=np.uint8), _random_rows(rng, 2, 11), [0, 0], [0, 0])


def test_svm_examples(rng):
    rows = _random_rows(rng, 10, 30)
    biases = list(range(-5, 5))
    assert kernels.svm_scores(np.zeros(30, dtype=np.uint8), rows, biases).tolist() == biases
    twin = rows[3]
    scores = kernels.svm_scores(np.full(30, 9, dtype=np.uint8), [twin, twin], [0, 0])
    assert scores[0] == scores[1]
    assert kernels.argmax_label(scores) == 0


def test_svm_random_vs_scalar(rng):
    x = rng.integers(0, 256, 50, dtype=np.uint8)
    rows = _random_rows(rng, 10, 50)
    biases = rng.integers(-(10**6), 10**6, 10)
    expected = [sum(int(a) if s else -int(a) for a, s in zip(x, r.mask())) + int(b) for r, b in zip(rows, biases)]
    scores = kernels.svm_scores(x, rows, biases)
    assert scores.tolist() == expected
    assert kernels.argmax_label(scores) == expected.index(max(expected))


@given(st.integers(-(10**6), 10**6), st.integers(0, 2**32 - 1))
def test_svm_argmax_invariant_to_common_bias(offset, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 256, 24, dtype=np.uint8)
    rows = _random_rows(rng, 10, 24)
    biases = rng.integers(-1000, 1000, 10)
    a = kernels.svm_scores(x, rows, biases)
    b = kernels.svm_scores(x, rows, biases + offset)
    assert kernels.argmax_label(a) == kernels.argmax_label(b)
