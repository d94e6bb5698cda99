import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from coverless.errors import PayloadTooLarge, TooSmall
from coverless.imaging import ImageBuffer
from coverless.stegbench import (BENCH_HEADER, CHI_SQUARE, CLEAN, MONOBIT, SUSPICIOUS, BenchSummary,
                                 bench_contrast, chi2_cdf, chi2_sf, chi_square_attack,
                                 chi_square_from_histogram, full_capacity_stego, gammainc_lower,
                                 gammainc_upper, lsb_embed, lsb_extract, lsb_monobit_test,
                                 random_payload)


@pytest.mark.parametrize("a", [0.5, 1.0, 3.5, 10.0, 63.5, 127.0])
@pytest.mark.parametrize("x", [0.0, 1e-3, 0.5, 2.0, 9.0, 40.0, 130.0, 400.0])
def test_incomplete_gamma_vs_scipy(a, x):
    assert gammainc_lower(a, x) == pytest.approx(special.gammainc(a, x), abs=1e-12)
    assert gammainc_upper(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-9, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 500), st.integers(1, 127))
def test_chi2_tail_vs_scipy(x, df):
    assert chi2_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-8, abs=1e-300)
    assert chi2_cdf(x, df) == pytest.approx(stats.chi2.cdf(x, df), abs=1e-12)


def test_tail_monotone():
    xs = np.linspace(0, 200, 400)
    ps = [chi2_sf(x, 20) for x in xs]
    assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_two_bin_hand_case():
    hist = np.zeros(256)
    hist[0], hist[1] = 10, 2
    stat, df = chi_square_from_histogram(hist)
    # only the even member of each pair enters the statistic
    assert stat == pytest.approx((10 - 6) ** 2 / 6)
    # summing both members gives (10-6)^2/6 + (2-6)^2/6 = 5.333..., exactly twice the above
    both = (10 - 6) ** 2 / 6 + (2 - 6) ** 2 / 6
    assert both == pytest.approx(5.3333, abs=1e-4) and both == pytest.approx(2 * stat)
    assert df == 1
    assert chi2_sf(stat, df) == pytest.approx(stats.chi2.sf(8 / 3, 1))


def test_even_member_statistic_is_what_detects_full_embedding():
    """Under full embedding each pair splits binomially, so the even-member sum is about
    half a chi-square variate and sits deep in the lower tail; the both-member sum would
    be an exact chi-square variate and give uniform p-values."""
    rng = np.random.default_rng(9)
    totals = rng.integers(20, 200, 100)
    even_p, both_p = [], []
    for _ in range(200):
        evens = rng.binomial(totals, 0.5)
        hist = np.zeros(256)
        hist[0:200:2], hist[1:200:2] = evens, totals - evens
        stat, df = chi_square_from_histogram(hist)
        even_p.append(chi2_sf(stat, df))
        both_p.append(chi2_sf(2 * stat, df))
    assert np.mean(np.array(even_p) > 0.95) > 0.99
    assert np.mean(np.array(both_p) > 0.95) < 0.15


def test_equal_pairs_flagged():
    px = np.repeat(np.arange(256, dtype=np.uint8), 4).reshape(32, 32)
    rep = chi_square_attack(ImageBuffer(px))
    assert rep.statistic == 0 and rep.p_value == 1.0 and rep.verdict == SUSPICIOUS


def test_ramp_with_noise_clean():
    rng = np.random.default_rng(3)
    ramp = np.tile(np.linspace(40, 200, 64), (64, 1)) + rng.normal(0, 2, (64, 64))
    # even-valued pixels dominate, as in a coarsely quantised natural gradient
    px = (np.floor(ramp / 2) * 2).astype(np.uint8)
    rep = chi_square_attack(ImageBuffer(px))
    assert rep.p_value < 0.5 and rep.verdict == CLEAN


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_chi_square_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    perm = rng.permutation(px.size)
    a = chi_square_attack(ImageBuffer(px))
    b = chi_square_attack(ImageBuffer(px.ravel()[perm].reshape(16, 16)))
    assert (a.statistic, a.p_value, a.verdict) == (b.statistic, b.p_value, b.verdict)


def test_too_small():
    with pytest.raises(TooSmall):
        chi_square_attack(ImageBuffer(np.zeros((7, 9))))
    with pytest.raises(TooSmall):
        lsb_monobit_test(ImageBuffer(np.zeros((1, 63))))


def test_monobit_examples():
    zero = ImageBuffer(np.zeros((64, 64), np.uint8))
    rep = lsb_monobit_test(zero)
    assert abs(rep.statistic) == 64 and rep.p_value < 1e-300 and rep.verdict == CLEAN
    bal = ImageBuffer(np.tile([0, 1], 2048).reshape(64, 64).astype(np.uint8))
    rep = lsb_monobit_test(bal)
    assert rep.statistic == 0 and rep.p_value == 1.0
    # also chi-square suspicious (pairs exactly equal) so the combined rule fires
    assert chi_square_attack(bal).verdict == SUSPICIOUS and rep.verdict == SUSPICIOUS


def test_lsb_embed_examples():
    carrier = ImageBuffer(np.zeros((4, 4), np.uint8))
    assert lsb_embed(carrier, b"") == carrier
    out = lsb_embed(carrier, b"\xff")
    assert out.pixels.ravel().tolist() == [1] * 8 + [0] * 8
    out = lsb_embed(carrier, b"\x80")
    assert out.pixels.ravel()[:8].tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    with pytest.raises(PayloadTooLarge):
        lsb_embed(carrier, b"abc")


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=32), st.integers(0, 2 ** 32 - 1))
def test_embed_extract_inverse(payload, seed):
    rng = np.random.default_rng(seed)
    carrier = ImageBuffer(rng.integers(0, 256, (16, 16)).astype(np.uint8))
    out = lsb_embed(carrier, payload)
    assert lsb_extract(out, len(payload)) == payload
    assert set(np.unique(out.pixels ^ carrier.pixels)) <= {0, 1}
    assert np.array_equal(out.pixels.ravel()[8 * len(payload):], carrier.pixels.ravel()[8 * len(payload):])


def test_full_capacity_stego_flagged_monte_carlo():
    """Random full-capacity payloads on a smooth carrier: the attack fires on nearly every seed."""
    rng = np.random.default_rng(0)
    ramp = np.tile(np.linspace(20, 230, 64), (64, 1)) + rng.normal(0, 3, (64, 64))
    carrier = ImageBuffer(np.clip(np.floor(ramp / 2) * 2, 0, 255).astype(np.uint8))
    hits = [chi_square_attack(full_capacity_stego(carrier, s)).p_value > 0.9 for s in range(100)]
    assert np.mean(hits) >= 0.95


def test_random_payload_deterministic():
    assert random_payload(100, 1) == random_payload(100, 1)
    assert random_payload(100, 1) != random_payload(100, 2)


def test_empty_bench(tmp_path):
    from coverless.modeldb import ModelDatabase
    summary = bench_contrast(ModelDatabase(tmp_path), [])
    assert summary.rows == [] and summary.to_tsv() == BENCH_HEADER
    assert math.isnan(summary.detection_rate("cover"))


def test_report_invariants(rng):
    for _ in range(50):
        img = ImageBuffer(rng.integers(0, 256, (12, 12)).astype(np.uint8))
        for rep in (chi_square_attack(img), lsb_monobit_test(img)):
            assert 0 <= rep.p_value <= 1
            if rep.attack == CHI_SQUARE:
                assert (rep.verdict == SUSPICIOUS) == (rep.p_value > rep.threshold)
