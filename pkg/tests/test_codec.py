import threading

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from spinal_recon import (
    CodecConfig, PassBlock, bubble_decode, compute_spine, encode_passes, hash_state, map_symbol,
    rng_bits,
)
from spinal_recon.codec import decode_matrix, encode_matrix, path_cost

u32 = st.integers(0, 2**32 - 1)


def random_message(rng, n):
    return rng.integers(0, 2, n, dtype=np.uint8)


# -- hash -------------------------------------------------------------------


def test_hash_deterministic():
    assert hash_state(0xDEADBEEF, 5) == hash_state(0xDEADBEEF, 5)


def test_hash_zero_input_matches_byte_oracle():
    # all-zero bytes keep the one-at-a-time accumulator at zero
    assert oracles.oaat(bytes(5)) == 0
    assert hash_state(0, 0) == oracles.oaat(bytes(5))


@given(u32, st.integers(0, 15))
def test_hash_matches_byte_oracle(state, block):
    assert hash_state(state, block) == oracles.hash_state(state, block)


@given(u32, st.integers(0, 255))
def test_hash_matches_byte_oracle_k8(state, block):
    assert hash_state(state, block, k=8) == oracles.hash_state(state, block)


def test_hash_collisions_rare():
    rng = np.random.default_rng(1)
    trials, differ = 10_000, 0
    for s in rng.integers(0, 2**32, trials):
        m1, m2 = rng.choice(16, 2, replace=False)
        differ += hash_state(int(s), int(m1)) != hash_state(int(s), int(m2))
    assert differ / trials >= 0.999


@pytest.mark.parametrize("state, block", [(0, 16), (0, -1), (-1, 0), (2**32, 0)])
def test_hash_rejects_out_of_range(state, block):
    with pytest.raises(ValueError):
        hash_state(state, block, k=4)


# -- spine --------------------------------------------------------------------


def test_spine_length():
    cfg = CodecConfig(n=8, k=4)
    assert len(compute_spine(np.zeros(8, np.uint8), cfg)) == 2


def test_spine_composition():
    cfg = CodecConfig(n=8, k=4, s0=0x1234)
    msg = np.array([1, 0, 1, 1, 0, 1, 1, 0], np.uint8)
    s1 = hash_state(0x1234, 0b1011)
    assert compute_spine(msg, cfg).states == (s1, hash_state(s1, 0b0110))


@given(st.integers(0, 2**31), st.integers(1, 16))
def test_spine_prefix_property(seed, d):
    rng = np.random.default_rng(seed)
    msg = random_message(rng, 64)
    full = compute_spine(msg, CodecConfig(n=64, k=4, s0=seed)).states
    prefix = compute_spine(msg[: 4 * d], CodecConfig(n=4 * d, k=4, s0=seed)).states
    assert prefix == full[:d]


def test_spine_shared_prefix():
    rng = np.random.default_rng(3)
    cfg = CodecConfig(n=64, k=4)
    a = random_message(rng, 64)
    b = a.copy()
    b[40:] ^= 1
    assert compute_spine(a, cfg).states[:10] == compute_spine(b, cfg).states[:10]


@given(st.integers(0, 2**31))
def test_spine_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    cfg = CodecConfig(n=32, k=4, s0=seed)
    msg = random_message(rng, 32)
    assert list(compute_spine(msg, cfg).states) == oracles.spine(msg, 4, seed)


@pytest.mark.parametrize("bad", [np.zeros(7, np.uint8), np.zeros(12, np.uint8), np.full(8, 2)])
def test_spine_rejects_bad_message(bad):
    with pytest.raises(ValueError):
        compute_spine(bad, CodecConfig(n=8, k=4))


# -- rng --------------------------------------------------------------------


def test_rng_bits_length():
    cfg = CodecConfig()
    assert rng_bits(123, 1, cfg.c, cfg).shape == (6,)


@given(u32, st.integers(1, 50))
def test_rng_stream_concatenates(spine, pass_index):
    cfg = CodecConfig(c=16)
    whole = rng_bits(spine, pass_index, 64, cfg)
    first = rng_bits(spine, pass_index, 32, cfg)
    second = rng_bits(spine, pass_index + 2, 32, cfg)  # 2 passes of 16 bits later
    np.testing.assert_array_equal(whole, np.concatenate([first, second]))


@given(u32, u32, st.integers(1, 200), st.integers(1, 70))
def test_rng_matches_oracle(spine, seed, pass_index, count):
    cfg = CodecConfig(rng_seed=seed)
    got = rng_bits(spine, pass_index, count, cfg)
    assert list(got) == oracles.stream_bits(spine, seed, (pass_index - 1) * 6, count)


def test_rng_passes_differ():
    cfg = CodecConfig(c=32)
    assert not np.array_equal(rng_bits(99, 1, 32, cfg), rng_bits(99, 2, 32, cfg))


@pytest.mark.parametrize("p, n", [(0, 6), (1, 0)])
def test_rng_rejects(p, n):
    with pytest.raises(ValueError):
        rng_bits(1, p, n, CodecConfig())


# -- mapper -------------------------------------------------------------------


def test_map_antisymmetric():
    cfg = CodecConfig()
    for b in range(64):
        assert abs(map_symbol(b, cfg) + map_symbol(63 - b, cfg)) < 1e-10


def test_map_b0_high_precision():
    mpmath.mp.dps = 40
    gamma = mpmath.ncdf(-3)
    p = gamma + (1 - 2 * gamma) * mpmath.mpf(1) / 128
    expected = float(-mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * p))
    assert abs(map_symbol(0, CodecConfig()) - expected) < 1e-8


def test_map_variance_near_p_star():
    cfg = CodecConfig(p_star=2.5)
    levels = np.array([map_symbol(b, cfg) for b in range(64)])
    var = np.mean(levels**2) - np.mean(levels) ** 2
    assert abs(var - 2.5) / 2.5 < 0.10
    # the truncated, quantized constellation carries about 96.2% of P*
    assert var / 2.5 == pytest.approx(0.96204, abs=1e-4)


def test_map_monotone_and_bounded():
    cfg = CodecConfig()
    levels = cfg.constellation
    assert np.all(np.diff(levels) > 0)
    assert np.all(np.abs(levels) < 3.0)


def test_map_matches_oracle_table():
    cfg = CodecConfig(c=5, beta_trunc=2.5, p_star=0.7)
    np.testing.assert_allclose(cfg.constellation, oracles.constellation(5, 2.5, 0.7), rtol=0, atol=1e-12)


@pytest.mark.parametrize("b", [-1, 64])
def test_map_rejects(b):
    with pytest.raises(ValueError):
        map_symbol(b, CodecConfig())


# -- encoder ----------------------------------------------------------------


def test_encode_shapes():
    cfg = CodecConfig()
    msg = random_message(np.random.default_rng(0), 1024)
    blocks = encode_passes(msg, (1, 3), cfg)
    assert [b.pass_index for b in blocks] == [1, 2, 3]
    assert all(b.symbols.shape == (256,) for b in blocks)


def test_encode_pass_ranges_compose():
    cfg = CodecConfig(s0=7, rng_seed=11)
    msg = random_message(np.random.default_rng(1), 1024)
    both = encode_passes(msg, (1, 2), cfg)
    np.testing.assert_array_equal(both[0].symbols, encode_passes(msg, (1, 1), cfg)[0].symbols)
    np.testing.assert_array_equal(both[1].symbols, encode_passes(msg, (2, 2), cfg)[0].symbols)


def test_encode_any_pass_standalone():
    cfg = CodecConfig(rng_seed=5)
    msg = random_message(np.random.default_rng(2), 1024)
    many = encode_passes(msg, (1, 40), cfg)
    np.testing.assert_array_equal(many[36].symbols, encode_passes(msg, (37, 37), cfg)[0].symbols)


@given(st.integers(0, 2**31), st.lists(st.integers(1, 30), min_size=1, max_size=4, unique=True))
def test_encode_matches_oracle(seed, passes):
    rng = np.random.default_rng(seed)
    s0, t = (int(v) for v in rng.integers(0, 2**32, 2))
    cfg = CodecConfig(n=16, k=4, c=6, p_star=1.7, s0=s0, rng_seed=t)
    msg = random_message(rng, 16)
    got = encode_matrix(msg, passes, cfg)
    want = oracles.encode(msg, passes, 16, 4, 6, 3.0, 1.7, s0, t)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_encode_avalanche():
    # Per-spine symbol vectors over 4 passes: a flipped bit must change the vector of
    # its spine position and of every later one, and leave earlier ones untouched.
    rng = np.random.default_rng(4)
    cfg = CodecConfig(n=64, k=4)
    passes = [1, 2, 3, 4]
    hits = 0
    for _ in range(1000):
        cfg = CodecConfig(n=64, k=4, s0=int(rng.integers(2**32)), rng_seed=int(rng.integers(2**32)))
        msg = random_message(rng, 64)
        bit = int(rng.integers(64))
        flipped = msg.copy()
        flipped[bit] ^= 1
        a, b = encode_matrix(msg, passes, cfg), encode_matrix(flipped, passes, cfg)
        pos = bit // 4
        assert np.array_equal(a[:pos], b[:pos])
        hits += bool(np.all(np.any(a[pos:] != b[pos:], axis=1)))
    assert hits / 1000 >= 0.99


def test_encode_rejects_bad_range():
    with pytest.raises(ValueError):
        encode_passes(np.zeros(1024, np.uint8), (0, 2), CodecConfig())
    with pytest.raises(ValueError):
        encode_passes(np.zeros(1024, np.uint8), (3, 2), CodecConfig())


# -- decoder ----------------------------------------------------------------


def noisy_passes(msg, passes, cfg, sigma, rng):
    x = encode_matrix(msg, passes, cfg)
    return x + rng.normal(0, sigma, x.shape)


def test_decode_noiseless_default_size():
    cfg = CodecConfig(p_star=1.196, s0=17, rng_seed=99)
    msg = random_message(np.random.default_rng(5), 1024)
    result = bubble_decode(encode_passes(msg, (1, 14), cfg), cfg)
    np.testing.assert_array_equal(result.message, msg)
    assert result.cost == 0.0


def test_decode_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(10):
        s0, t = (int(v) for v in rng.integers(0, 2**32, 2))
        cfg = CodecConfig(n=8, k=2, B=64, s0=s0, rng_seed=t)
        msg = random_message(rng, 8)
        y = noisy_passes(msg, [1, 2], cfg, 1.2, rng)
        got = decode_matrix(y, [1, 2], cfg)
        want, want_cost = oracles.brute_force_ml(y.tolist(), [1, 2], 8, 2, 6, 3.0, 1.0, s0, t)
        np.testing.assert_array_equal(got.message, want)
        assert got.cost == pytest.approx(want_cost, rel=1e-12)


def test_decode_full_width_k_equals_n():
    rng = np.random.default_rng(7)
    cfg = CodecConfig(n=8, k=8, B=256, rng_seed=3)
    msg = random_message(rng, 8)
    y = noisy_passes(msg, [1, 2, 3], cfg, 1.0, rng)
    want, _ = oracles.brute_force_ml(y.tolist(), [1, 2, 3], 8, 8, 6, 3.0, 1.0, 0, 3)
    np.testing.assert_array_equal(decode_matrix(y, [1, 2, 3], cfg).message, want)


def test_wider_beam_never_costs_more():
    rng = np.random.default_rng(8)
    for _ in range(5):
        msg = random_message(rng, 256)
        narrow = CodecConfig(n=256, B=1, p_star=0.2)
        y = noisy_passes(msg, list(range(1, 9)), narrow, 1.0, rng)
        wide = CodecConfig(n=256, B=256, p_star=0.2)
        assert decode_matrix(y, range(1, 9), wide).cost <= decode_matrix(y, range(1, 9), narrow).cost


def test_decode_cost_consistent():
    rng = np.random.default_rng(9)
    cfg = CodecConfig(n=256, B=32, p_star=0.5, s0=5, rng_seed=8)
    msg = random_message(rng, 256)
    passes = [1, 2, 3, 5]
    y = noisy_passes(msg, passes, cfg, 1.0, rng)
    result = decode_matrix(y, passes, cfg)
    want = float(((y - np.array(oracles.encode(result.message, passes, 256, 4, 6, 3.0, 0.5, 5, 8))) ** 2).sum())
    assert result.cost == pytest.approx(want, rel=1e-9)
    assert result.cost == pytest.approx(path_cost(result.message, y, passes, cfg), rel=1e-9)


def test_decode_counts_nodes():
    cfg = CodecConfig(n=64, B=8)
    y = np.zeros((16, 2))
    result = decode_matrix(y, [1, 2], cfg)
    assert result.levels_expanded == 16
    # depth 1: 16 children, depth 2..16: at most B parents x 16
    assert result.nodes_visited == 16 + 15 * 8 * 16


def test_decode_pass_order_irrelevant():
    rng = np.random.default_rng(10)
    cfg = CodecConfig(n=64, B=16)
    msg = random_message(rng, 64)
    blocks = encode_passes(msg, (1, 3), cfg)
    noisy = [PassBlock(b.pass_index, b.symbols + rng.normal(0, 0.8, 16)) for b in blocks]
    a = bubble_decode(noisy, cfg)
    b = bubble_decode(noisy[::-1], cfg)
    np.testing.assert_array_equal(a.message, b.message)
    assert a.cost == b.cost


def test_decode_deterministic_across_threads():
    rng = np.random.default_rng(11)
    cfg = CodecConfig(n=256, B=64, p_star=0.3)
    msg = random_message(rng, 256)
    y = noisy_passes(msg, list(range(1, 11)), cfg, 1.0, rng)
    ref = decode_matrix(y, range(1, 11), cfg)
    out = [None] * 4

    def work(i):
        out[i] = decode_matrix(y, range(1, 11), cfg)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in out:
        np.testing.assert_array_equal(r.message, ref.message)
        assert r.cost == ref.cost


def test_decode_errors():
    cfg = CodecConfig(n=64)
    with pytest.raises(ValueError):
        bubble_decode([], cfg)
    with pytest.raises(ValueError):
        bubble_decode([PassBlock(1, np.zeros(15))], cfg)
    with pytest.raises(ValueError):
        bubble_decode([PassBlock(1, np.zeros(16)), PassBlock(1, np.zeros(16))], cfg)


@pytest.mark.parametrize("kwargs", [
    dict(n=10, k=4), dict(k=9, n=1026), dict(v=64), dict(w=12), dict(c=33), dict(B=0),
    dict(p_star=0.0), dict(s0=2**32), dict(rng_seed=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CodecConfig(**kwargs)
