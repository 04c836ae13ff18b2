import numpy as np
import pytest

from ftgemm.faults import (
    FaultConfig,
    FaultRecord,
    RngStream,
    faulty_gemm,
    flip_bits,
    flip_bits_batch,
    inject_single,
)
from ftgemm.tensor_core import OpCounter, gemm


def test_flip_bits_ber_zero():
    s = RngStream(1)
    assert flip_bits(np.float32(3.75), 0.0, s) == np.float32(3.75)


def test_flip_bits_ber_one_is_complement():
    s = RngStream(2)
    v = np.float32(1.5)
    out = flip_bits(v, 1.0, s)
    u = np.array([v], np.float32).view(np.uint32)[0]
    expected = np.array([u ^ np.uint32(0xFFFFFFFF)], np.uint32).view(np.float32)[0]
    np.testing.assert_array_equal(np.float32(out).view(np.uint32), np.float32(expected).view(np.uint32))


def test_flip_bits_consumes_32_draws():
    a = RngStream(3)
    b = RngStream(3)
    flip_bits(np.float32(1.0), 0.5, a)
    b.gen.random(32)
    # both streams must now be in the same state
    assert a.gen.random() == b.gen.random()


def test_flip_bits_invalid_ber():
    with pytest.raises(ValueError):
        flip_bits(np.float32(1.0), 1.5, RngStream(0))


def test_flip_bits_batch_mean_flip_count():
    # 1e6 values at ber=0.01: mean flipped bits per value ~ Binomial(32, ber)
    s = RngStream(4)
    vals = np.zeros(1_000_000, np.float32)
    out = flip_bits_batch(vals, 0.01, s)
    bits = np.unpackbits(out.view(np.uint8)).sum()
    mean = bits / vals.size
    sigma = np.sqrt(32 * 0.01 * 0.99 / vals.size)
    assert abs(mean - 0.32) <= 3 * sigma


def test_flip_bits_batch_sparse_statistics():
    # >= 1e7 Bernoulli draws through the sparse path, within 5% of ber
    s = RngStream(5)
    vals = np.zeros(400_000, np.float32)
    total_bits = vals.size * 32
    ber = 1e-4
    flipped = 0
    for _ in range(4):
        out = flip_bits_batch(vals, ber, s)
        flipped += int(np.unpackbits(out.view(np.uint8)).sum())
    freq = flipped / (4 * total_bits)
    assert abs(freq - ber) / ber < 0.05


def test_stream_determinism_and_key_separation():
    a = RngStream(9, "layer0.attn.q", trial=3, sample=1)
    b = RngStream(9, "layer0.attn.q", trial=3, sample=1)
    c = RngStream(9, "layer0.attn.k", trial=3, sample=1)
    assert a.gen.random(8).tolist() == b.gen.random(8).tolist()
    assert a.key != c.key


def test_faulty_gemm_ber_zero_bit_identical():
    rng = np.random.default_rng(0)
    A = rng.uniform(-1, 1, (5, 7)).astype(np.float32)
    B = rng.uniform(-1, 1, (7, 4)).astype(np.float32)
    out = faulty_gemm(A, B, FaultConfig(0.0, 123), RngStream(123))
    np.testing.assert_array_equal(out.view(np.uint32), gemm(A, B).view(np.uint32))


def test_faulty_gemm_seed_determinism():
    rng = np.random.default_rng(1)
    A = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    B = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    cfg = FaultConfig(0.01, 77)
    out1 = faulty_gemm(A, B, cfg, RngStream(77, "g", 2, 3))
    out2 = faulty_gemm(A, B, cfg, RngStream(77, "g", 2, 3))
    np.testing.assert_array_equal(out1.view(np.uint32), out2.view(np.uint32))


def test_faulty_gemm_single_forced_mantissa_flip():
    rng = np.random.default_rng(2)
    A = rng.uniform(0.5, 1, (2, 2)).astype(np.float32)
    B = rng.uniform(0.5, 1, (2, 2)).astype(np.float32)
    clean = gemm(A, B)
    rec = FaultRecord()
    out = faulty_gemm(
        A, B, FaultConfig(0.0, 0), RngStream(0), record=rec,
        forced=[("mul", 0, 0, 1, 10)],
    )
    diff = out != clean
    assert diff.sum() == 1 and diff[0, 1]
    assert rec.error_cells[0, 1] and rec.error_cells.sum() == 1
    assert rec.flips == 1


def test_faulty_gemm_counts_like_gemm():
    c = OpCounter()
    A = np.ones((3, 4), np.float32)
    B = np.ones((4, 5), np.float32)
    faulty_gemm(A, B, FaultConfig(0.5, 1), RngStream(1), c)
    assert c.workload_mults == 60 and c.workload_adds == 45


def test_faulty_gemm_record_tracks_cells():
    rng = np.random.default_rng(3)
    A = rng.uniform(-1, 1, (6, 6)).astype(np.float32)
    B = rng.uniform(-1, 1, (6, 6)).astype(np.float32)
    rec = FaultRecord()
    out = faulty_gemm(A, B, FaultConfig(0.002, 5), RngStream(5), record=rec)
    clean = gemm(A, B)
    changed = out.view(np.uint32) != clean.view(np.uint32)
    # every changed cell must have been recorded (flips may cancel, not appear)
    assert (~rec.error_cells[changed]).sum() == 0
    assert rec.flips >= changed.sum()


def test_inject_single():
    C = np.array([[19.0, 22.0], [43.0, 50.0]], np.float32)
    out = inject_single(C, 0, 1, 8.0)
    np.testing.assert_array_equal(out, [[19, 30], [43, 50]])
    np.testing.assert_array_equal(inject_single(C, 1, 0, 0.0), C)
    a = inject_single(inject_single(C, 0, 0, 2.0), 1, 1, -3.0)
    b = inject_single(inject_single(C, 1, 1, -3.0), 0, 0, 2.0)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(IndexError):
        inject_single(C, 2, 0, 1.0)


def test_fault_config_validation_and_scope():
    with pytest.raises(ValueError):
        FaultConfig(-0.1, 0)
    cfg = FaultConfig(0.5, 0, scope=frozenset({"a"}))
    assert cfg.in_scope("a") and not cfg.in_scope("b")
    assert cfg.restricted("b").ber == 0.0
    assert cfg.restricted("a").ber == 0.5
    assert FaultConfig(0.5, 0).in_scope("anything")
