import struct

import numpy as np
import pytest

from anomalyhop import engine
from anomalyhop.bundle import MAGIC, dumps_bundle, load_bundle, loads_bundle, read_header, save_bundle
from anomalyhop.errors import CorruptBundleError, UnsupportedBundleError


def test_round_trip_byte_stable(tiny_bundle, tmp_path):
    a = tmp_path / "a.ahop"
    b = tmp_path / "b.ahop"
    save_bundle(tiny_bundle, a)
    save_bundle(load_bundle(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_inference_bit_identical(tiny_bundle, tiny_split):
    reloaded = loads_bundle(dumps_bundle(tiny_bundle))
    for s in tiny_split.test:
        a = engine.predict(tiny_bundle, s.image)
        b = engine.predict(reloaded, s.image)
        assert np.array_equal(a.fused.scores, b.fused.scores)
        for x, y in zip(a.hop_maps, b.hop_maps):
            assert np.array_equal(x.scores, y.scores)


def test_contents_survive(tiny_bundle):
    back = loads_bundle(dumps_bundle(tiny_bundle))
    assert back.config == tiny_bundle.config
    assert back.config_text == tiny_bundle.config_text
    assert back.hop_scales == tiny_bundle.hop_scales
    assert back.train_quantiles == tiny_bundle.train_quantiles
    assert back.parameter_count == tiny_bundle.parameter_count
    for la, lb in zip(tiny_bundle.pipeline.layers, back.pipeline.layers):
        assert np.array_equal(la.filters, lb.filters)
        assert np.array_equal(la.keep, lb.keep)


def test_header(tiny_bundle):
    data = dumps_bundle(tiny_bundle)
    assert data[:8] == MAGIC
    header, _ = read_header(data)
    assert header["parameter_count"] == tiny_bundle.parameter_count
    assert [h["window"] for h in header["pipeline"]["hops"]] == [3, 3, 2]


@pytest.mark.parametrize("cut", [0, 5, 20, 100, -1])
def test_truncated(tiny_bundle, cut):
    data = dumps_bundle(tiny_bundle)
    with pytest.raises(CorruptBundleError):
        loads_bundle(data[:cut])


def test_flipped_byte(tiny_bundle):
    data = bytearray(dumps_bundle(tiny_bundle))
    for pos in (30, len(data) // 2, len(data) - 12):
        bad = bytearray(data)
        bad[pos] ^= 0x40
        with pytest.raises(CorruptBundleError):
            loads_bundle(bytes(bad))


def test_bad_magic(tiny_bundle):
    data = dumps_bundle(tiny_bundle)
    with pytest.raises(CorruptBundleError):
        loads_bundle(b"XXXXXXXX" + data[8:])


def test_unknown_version(tiny_bundle):
    data = bytearray(dumps_bundle(tiny_bundle))
    data[8:12] = struct.pack("<I", 99)
    with pytest.raises(UnsupportedBundleError):
        loads_bundle(bytes(data))
