import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advden import signals as S
from advden.errors import ConfigError, DataError
from advden.signals import NoiseSpec, SignalPair


def test_sine_bounded_and_deterministic():
    x = S.gen_clean("sine", 5000, seed=3)
    assert np.abs(x).max() <= 1.0
    np.testing.assert_array_equal(x, S.gen_clean("sine", 5000, seed=3))


@pytest.mark.parametrize("kind", S.CLEAN_KINDS)
def test_clean_kinds_deterministic(kind):
    a, b = S.gen_clean(kind, 800, seed=11), S.gen_clean(kind, 800, seed=11)
    assert a.tobytes() == b.tobytes()
    assert np.isfinite(a).all() and np.any(a != 0)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        S.gen_clean("square", 10)
    with pytest.raises(ConfigError):
        S.default_noise("pink")


def test_zero_noise_is_identity():
    clean = S.gen_clean("multisine", 300, seed=1)
    spec = NoiseSpec("composite", components=[NoiseSpec("gaussian", sigma=0.0),
                                              NoiseSpec("powerline", amplitude=0.0)])
    np.testing.assert_array_equal(S.corrupt(clean, spec), clean)


def test_random_walk_is_cumsum_of_gaussian_steps():
    g = S.noise_only(1000, NoiseSpec("gaussian", sigma=0.3, seed=4))
    rw = S.noise_only(1000, NoiseSpec("random_walk", sigma=0.3, seed=4))
    np.testing.assert_allclose(rw, np.cumsum(g), rtol=0, atol=1e-12)


def test_powerline_formula():
    n = S.noise_only(400, NoiseSpec("powerline", amplitude=0.7, line_freq_hz=60.0), sample_rate_hz=500.0)
    t = np.arange(400)
    np.testing.assert_allclose(n, 0.7 * np.sin(2 * np.pi * 60.0 * t / 500.0), atol=1e-15)


def test_gaussian_at_equal_power_is_zero_db():
    clean = S.gen_clean("multisine", 20_000, seed=5)
    sigma = np.sqrt(np.mean(clean**2))
    noisy = S.corrupt(clean, NoiseSpec("gaussian", sigma=sigma, seed=9))
    assert abs(S.snr_db(clean, noisy)) <= 0.5


@pytest.mark.parametrize("kind", S.NOISE_KINDS)
def test_noise_for_snr_is_exact(kind):
    clean = S.gen_clean("synthetic_ecg", 3000, seed=2)
    spec = S.noise_for_snr(clean, S.default_noise(kind, 7), 10.0)
    assert S.snr_db(clean, S.corrupt(clean, spec)) == pytest.approx(10.0, abs=1e-9)


@settings(max_examples=30)
@given(seed=st.integers(0, 1000), kind=st.sampled_from(S.NOISE_KINDS))
def test_corruption_independent_of_clean(seed, kind):
    spec = S.default_noise(kind, seed)
    a = S.gen_clean("sine", 200, seed=seed)
    b = S.gen_clean("synthetic_ecg", 200, seed=seed + 1)
    np.testing.assert_allclose(S.corrupt(a, spec) - a, S.corrupt(b, spec) - b, atol=1e-12)


def test_snr_examples():
    clean = np.array([1.0, -2.0, 3.0])
    assert S.snr_db(clean, clean) == np.inf
    assert S.format_snr(S.snr_db(clean, clean)) == "inf"
    assert S.snr_db(clean, np.zeros(3)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DataError):
        S.snr_db(np.zeros(3), clean)


@given(c=st.floats(0.01, 100).flatmap(lambda v: st.sampled_from([v, -v])), seed=st.integers(0, 100))
def test_snr_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    clean, e = rng.normal(size=50), rng.normal(size=50)
    assert S.snr_db(c * clean, c * clean + c * e) == pytest.approx(S.snr_db(clean, clean + e), abs=1e-9)


def test_window_split_examples(caplog):
    pair = SignalPair(np.arange(25.0), np.arange(25.0) + 1)
    wins = S.window_split(pair, 10)
    assert len(wins) == 2
    np.testing.assert_array_equal(wins[1][1], np.arange(10.0, 20.0))
    np.testing.assert_array_equal(wins[0][0], np.arange(10.0) + 1)
    assert len(S.window_split(SignalPair(np.ones(10), np.ones(10)), 10)) == 1
    with caplog.at_level(logging.WARNING):
        assert S.window_split(SignalPair(np.ones(9), np.ones(9)), 10) == []
    assert "shorter" in caplog.text


def test_stack_windows_shape():
    pairs = [SignalPair(np.ones(25), np.zeros(25)), SignalPair(np.ones(31), np.zeros(31))]
    x, y = S.stack_windows(pairs, 10)
    assert x.shape == y.shape == (5, 1, 10)


def test_pair_validation():
    with pytest.raises(DataError):
        SignalPair(np.ones(3), np.ones(4))
    with pytest.raises(DataError):
        SignalPair(np.ones(3), np.array([1.0, np.nan, 0.0]))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60))
def test_csv_round_trip_bit_equal(tmp_path_factory, seed, n):
    rng = np.random.default_rng(seed)
    pair = SignalPair(rng.normal(size=n) * 1e3, rng.normal(size=n) * 1e-3, 250.0, "p")
    d = tmp_path_factory.mktemp("rt")
    S.save_csv([pair], d)
    back = S.load_csv(d)[0]
    assert back.clean.tobytes() == pair.clean.tobytes()
    assert back.noisy.tobytes() == pair.noisy.tobytes()
    if n > 1:
        assert back.sample_rate_hz == 250.0


def test_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="empty"):
        S.load_csv(empty)
    header = tmp_path / "header.csv"
    header.write_text("t,noisy,clean\n")
    assert S.load_csv(header) == []
    missing = tmp_path / "missing.csv"
    missing.write_text("t,noisy\n0,1\n")
    with pytest.raises(DataError, match="clean") as exc:
        S.load_csv(missing)
    assert exc.value.line == 1
    assert S.load_csv(missing, require_clean=False)[0].clean is None
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("t,noisy,clean\n0,1,2\n0.005,1\n")
    with pytest.raises(DataError) as exc:
        S.load_csv(ragged)
    assert exc.value.line == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("t,noisy,clean\n0,1,2\n0.005,x,2\n")
    with pytest.raises(DataError, match="non-numeric") as exc:
        S.load_csv(bad)
    assert exc.value.line == 3


def test_pca_recovers_axis_aligned():
    # sign-symmetric grid: zero mean, zero covariance, larger spread on the first axis
    pts = np.array([(sx * a, sy * b) for a in (5.0, 3.0) for b in (1.0, 0.5)
                    for sx in (1, -1) for sy in (1, -1)])
    coords = S.pca_2d(pts)
    for k in range(2):
        sign = np.sign(coords[0, k] * pts[0, k])
        np.testing.assert_allclose(coords[:, k] * sign, pts[:, k], atol=1e-10)
    assert coords[:, 0].var() >= coords[:, 1].var()


def test_export_latents(tmp_path):
    rng = np.random.default_rng(1)
    lat = [rng.normal(size=(4, 10)) for _ in range(5)]
    coords = S.export_latents_2d(lat + lat, ["clean"] * 5 + ["noisy"] * 5, tmp_path / "lat.csv")
    np.testing.assert_allclose(coords[:5], coords[5:], atol=1e-12)
    lines = (tmp_path / "lat.csv").read_text().splitlines()
    assert lines[0] == "pc1,pc2,label" and len(lines) == 11
    with pytest.raises(DataError):
        S.export_latents_2d(lat[:2], ["clean", "noisy"], tmp_path / "x.csv")
