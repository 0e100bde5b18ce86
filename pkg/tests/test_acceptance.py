"""Acceptance gate: one test per criterion, each reporting PASS/FAIL in the terminal summary."""

import contextlib
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from tinbinn import engine, kernels, oracle
from tinbinn.cli import main
from tinbinn.fxcore import Accum16Plane, Accum32Plane, OverflowLog, PackedDenseRow, PackedKernel3x3, Plane, pack_row_bits
from tinbinn.model_io import (
    QUOTED_WEIGHT_IMAGE_BYTES,
    ChecksumError,
    LayerParams,
    Model,
    ModelFormatError,
    RawFrame,
    center_crop32,
    encode_ppm,
    gen_random_model,
    model_from_bytes,
    model_to_bytes,
    preprocess,
    save_model,
)
from tinbinn.netgraph import (
    ORIGINAL_NOTATION,
    REDUCED_NOTATION,
    LayerKind,
    NotationError,
    builtin_network,
    fan_in,
    infer_shapes,
    layer_inputs,
    parse_network,
    pre_dense_shape,
    render_network,
    total_sign_bits,
)

ROOT = Path(__file__).resolve().parents[1]


@contextlib.contextmanager
def criterion(n, what):
    ACCEPTANCE[n] = (False, what)
    yield
    ACCEPTANCE[n] = (True, what)


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def test_criterion_1_opcount_reduction():
    with criterion(1, "opcount reduction 89% +/- 1 point, < 1 s, frozen totals"):
        t0 = time.perf_counter()
        code, out, _ = run_cli(["opcount", "--builtin", "original", "--builtin", "reduced", "--json"])
        elapsed = time.perf_counter() - t0
        assert code == 0
        report = json.loads(out)
        assert [n["total"] for n in report["networks"]] == [616_966_144, 71_518_720]
        assert abs(report["reduction"] * 100 - 89) <= 1
        assert elapsed < 1.0


def test_criterion_2_kernel_bit_exactness():
    with criterion(2, "kernels == oracles on 10,000 random planes plus helpers, < 60 s"):
        rng = np.random.default_rng(2)
        t0 = time.perf_counter()
        mismatches = 0
        for _ in range(10_000):
            w = int(rng.integers(1, 17)) * 4
            h = int(rng.integers(3, 65))
            plane = Plane.from_array(rng.integers(0, 256, (h, w), dtype=np.uint8))
            kernel = PackedKernel3x3(int(rng.integers(0, 512)))
            mismatches += not np.array_equal(kernels.conv_plane(plane, kernel).data, oracle.naive_conv3(plane, kernel).data)
        assert mismatches == 0

        for _ in range(200):
            h, w = (int(v) for v in rng.integers(1, 20, 2))
            acc = rng.integers(-(2**31), 2**31, (h, w))
            part = rng.integers(-(2**15), 2**15, (h, w))
            got = kernels.quad_add_16_to_32(Accum32Plane.from_array(acc), Accum16Plane.from_array(part))
            np.testing.assert_array_equal(got.data, oracle.naive_quad_add(acc, part))

        for _ in range(200):
            n = int(rng.integers(1, 64))
            parts = rng.integers(-2295, 2296, (n, 6, 7))
            log = OverflowLog()
            got = kernels.accumulate_maps([Accum16Plane.from_array(p) for p in parts], overflow=log)
            np.testing.assert_array_equal(got.data, oracle.naive_accumulate(parts))
            if log.total == 0:
                np.testing.assert_array_equal(got.data, parts.sum(axis=0))

        for _ in range(200):
            h, w = (int(v) * 2 for v in rng.integers(1, 33, 2))
            x = rng.integers(0, 256, (h, w), dtype=np.uint8)
            np.testing.assert_array_equal(kernels.maxpool2(Plane.from_array(x)).data, oracle.naive_maxpool(x))

        for _ in range(200):
            length, units = int(rng.integers(1, 3000)), int(rng.integers(1, 12))
            x = rng.integers(0, 256, length, dtype=np.uint8)
            signs = rng.integers(0, 2, (units, length)).astype(bool)
            packed = pack_row_bits(signs)
            rows = [PackedDenseRow(length, r.tobytes()) for r in packed]
            biases = rng.integers(-1024, 1025, units)
            shifts = rng.integers(0, 12, units)
            sums = oracle.naive_dense_sums(x, packed, length)
            np.testing.assert_array_equal(
                kernels.dense(x, rows, biases, shifts).data[0], oracle.naive_activate(sums, biases, shifts)
            )
            np.testing.assert_array_equal(kernels.svm_scores(x, rows, biases), oracle.naive_svm(x, packed, length, biases))
        assert time.perf_counter() - t0 < 60


@pytest.mark.slow
def test_criterion_3_end_to_end_bit_exactness():
    with criterion(3, "pipeline == naive forward on 1000 reduced-topology pairs, < 10 min"):
        spec = builtin_network("reduced")
        rng = np.random.default_rng(3)
        t0 = time.perf_counter()
        seeds = rng.choice(2**62, size=1000, replace=False)
        for seed in seeds:
            model = gen_random_model(spec, int(seed))
            image = rng.integers(0, 256, (3, 32, 32), dtype=np.uint8)
            fast = engine.forward(model, image, keep_trace=False)
            slow = oracle.fixed_forward_naive(model, image)
            assert np.array_equal(fast.scores, slow.scores), f"model seed {seed}"
        assert time.perf_counter() - t0 < 600


def test_criterion_4_shapes_and_geometry():
    with criterion(4, "pre-dense (128,4,4), dense input 2048, camera pixel placement"):
        spec = builtin_network("reduced")
        assert pre_dense_shape(spec) == (128, 4, 4)
        layers = spec.expanded()
        first_dense = next(i for i, l in enumerate(layers) if l.kind is LayerKind.DENSE)
        assert fan_in(layers[first_dense], layer_inputs(spec)[first_dense]) == 2048
        assert infer_shapes(spec)[-1] == (10, 1, 1)

        for y in range(30):
            for x in range(3, 37):
                rgb = np.zeros((30, 40, 3), dtype=np.uint8)
                rgb[y, x, 1] = 99
                planes, window = preprocess(RawFrame.from_rgb(rgb))
                assert planes[1].data[y + 2, x] == 99 and planes[1].data.sum() == 99
                crop = center_crop32(planes, window)[1].data
                assert crop.shape == (34, 34)
                assert crop[y + 2, x - 3] == 99 and crop.sum() == 99
                # same padding: conv output pixel (x - 4, y + 1) is centred on it
                if 4 <= x < 36 and y + 1 < 32:
                    assert (window.x0 + (x - 4), window.y0 + (y + 1)) == (x, y + 2)


def test_criterion_5_format_integrity(small_model):
    with criterion(5, "100 round trips, byte corruption detected, 996,880 sign bits"):
        rng = np.random.default_rng(5)
        spec = builtin_network("reduced")
        notations = [REDUCED_NOTATION, "(2x8C3)-MP2-20C3-MP2-(2x24FC)-10SVM", "10SVM", "MP2-17C3-(3x5FC)-4SVM"]
        for i in range(100):
            model = gen_random_model(parse_network(notations[i % len(notations)]), int(rng.integers(0, 2**63)))
            data = model_to_bytes(model)
            assert model_from_bytes(data) == model
            assert model_to_bytes(model_from_bytes(data)) == data

        data = model_to_bytes(small_model)
        for pos in range(len(data)):
            for value in range(256):
                if value == data[pos]:
                    continue
                bad = bytearray(data)
                bad[pos] = value
                with pytest.raises(ModelFormatError):
                    model_from_bytes(bytes(bad))

        data = model_to_bytes(gen_random_model(spec, 5))
        for pos in rng.choice(len(data), 300, replace=False):
            bad = bytearray(data)
            bad[pos] ^= int(rng.integers(1, 256))
            with pytest.raises(ModelFormatError):
                model_from_bytes(bytes(bad))
        bad = bytearray(data)
        bad[len(data) // 2] ^= 0xFF
        with pytest.raises(ChecksumError):
            model_from_bytes(bytes(bad))

        assert total_sign_bits(spec) == 996_880
        assert gen_random_model(spec, 0).sign_bits == 996_880
        # the quoted weight image size does not follow from the topology; kept as a recorded figure
        assert QUOTED_WEIGHT_IMAGE_BYTES == 270_000 and 996_880 // 8 != QUOTED_WEIGHT_IMAGE_BYTES


MALFORMED = [
    ("2y48C3", 0),
    ("(0x48C3)-10SVM", 1),
    ("10SVM-MP2", 0),
    ("48C3--10SVM", 5),
    ("(2x10SVM)", 0),
    ("048C3", 0),
    ("MP2-0FC", 4),
    ("MP3", 0),
    ("48FC-MP2", 5),
    ("(2x48C3", 0),
]


def test_criterion_6_parser():
    with criterion(6, "both topologies round-trip, 10 malformed strings carry positions"):
        for notation in (ORIGINAL_NOTATION, REDUCED_NOTATION):
            spec = parse_network(notation)
            assert render_network(spec) == notation
            assert parse_network(render_network(spec)) == spec
        assert len(MALFORMED) == 10
        for notation, position in MALFORMED:
            with pytest.raises(NotationError) as err:
                parse_network(notation)
            assert err.value.position == position
            assert f"position {position}" in str(err.value)


def test_criterion_7_overflow_observability():
    with criterion(7, "16 all-max maps wrap to -28816 with one event per element group"):
        ones = PackedKernel3x3(0x1FF)
        plane = Plane.from_array(np.full((10, 12), 255, dtype=np.uint8))
        partials = [kernels.conv_plane(plane, ones) for _ in range(16)]
        assert all((p.data == 2295).all() for p in partials)
        log = OverflowLog()
        acc = kernels.accumulate_maps(partials, overflow=log)
        assert (acc.data == -28816).all()
        elements = acc.data.size
        assert log.total == elements and len(log.events) == 1

        ref_log = OverflowLog()
        np.testing.assert_array_equal(oracle.naive_accumulate(np.stack([p.data for p in partials]), overflow=ref_log), acc.data)
        assert ref_log.total == elements

        # 32 maps form two groups, each wrapping once per element
        log = OverflowLog()
        acc = kernels.accumulate_maps(partials * 2, overflow=log)
        assert (acc.data == -57632).all()
        assert log.total == 2 * elements and len(log.events) == 2


def test_criterion_8_external_weights_via_cli(tmp_path):
    with criterion(8, "externally built model file runs through the CLI; unreproducible items documented"):
        # weights built by hand, not by the random generator, stand in for a trained drop
        spec = parse_network("(2x8C3)-MP2-16FC-10SVM")
        rng = np.random.default_rng(8)
        conv1 = LayerParams(LayerKind.CONV3, 27, rng.integers(0, 512, (8, 3)).astype(np.uint16), rng.integers(-50, 50, 8), np.full(8, 3))
        conv2 = LayerParams(LayerKind.CONV3, 72, rng.integers(0, 512, (8, 8)).astype(np.uint16), rng.integers(-50, 50, 8), np.full(8, 4))
        fc_rows = pack_row_bits(rng.integers(0, 2, (16, 2048)))
        fc = LayerParams(LayerKind.DENSE, 2048, fc_rows, rng.integers(-50, 50, 16), np.full(16, 6))
        svm_rows = pack_row_bits(rng.integers(0, 2, (10, 16)))
        svm = LayerParams(LayerKind.SVM, 16, svm_rows, rng.integers(-50, 50, 10), np.zeros(10))
        model = Model(spec, [conv1, conv2, fc, svm])
        model_path = tmp_path / "external.tbnn"
        save_model(model, model_path)

        rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        image_path = tmp_path / "x.ppm"
        image_path.write_bytes(encode_ppm(rgb))
        code, out, _ = run_cli(["classify", "--model", str(model_path), "--image", str(image_path), "--json"])
        assert code == 0
        report = json.loads(out)
        expected = oracle.fixed_forward_naive(model, np.moveaxis(rgb, -1, 0)).scores
        assert report["scores"] == expected.tolist()
        assert report["label"] == int(np.argmax(expected))

        readme = (ROOT / "README.md").read_text()
        assert "## Not reproduced here" in readme
        for figure in ("CIFAR-10", "1 315 ms", "195 ms", "73x"):
            assert figure in readme
