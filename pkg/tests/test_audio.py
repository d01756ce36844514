"""Queue construction, toy encoder, and condition-window tests."""

import numpy as np
import pytest

from headflow.audio import (
    AudioConfig,
    RollingAudioCache,
    build_queue,
    encode,
    extract_condition,
    read_audio,
    write_audio,
)
from headflow.errors import ContractError

CFG = AudioConfig()


class TestBuildQueue:
    def test_empty_raw_all_silence(self):
        cfg = AudioConfig(sample_rate=1000, feature_rate=25)
        q = build_queue(np.zeros(0), cfg)
        assert q.samples.shape[0] == 8000
        assert q.pad_len == 8000
        assert np.all(q.samples == 0.0)

    def test_short_raw_left_padded(self):
        cfg = AudioConfig(sample_rate=1000, feature_rate=25)
        raw = np.random.default_rng(0).normal(size=3000)
        q = build_queue(raw, cfg)
        assert q.samples.shape[0] == 8000
        assert q.pad_len == 5000
        assert np.all(q.samples[:5000] == 0.0)
        np.testing.assert_array_equal(q.samples[5000:], raw)

    def test_long_raw_keeps_tail(self):
        cfg = AudioConfig(sample_rate=1000, feature_rate=25)
        raw = np.random.default_rng(1).normal(size=10_000)
        q = build_queue(raw, cfg)
        assert q.pad_len == 0
        np.testing.assert_array_equal(q.samples, raw[-8000:])

    def test_exact_window_boundary(self):
        rng = np.random.default_rng(2)
        raw = rng.normal(size=CFG.queue_len)
        q = build_queue(raw, CFG)
        assert q.pad_len == 0
        np.testing.assert_array_equal(q.samples, raw)

    def test_property_random_lengths_and_rates(self):
        # Compact version of the acceptance sweep: length/pad/tail invariants.
        rng = np.random.default_rng(42)
        rates = [25, 50, 1000, 4000, 8000, 16000]
        for _ in range(200):
            rate = int(rng.choice(rates))
            t_max = int(rng.integers(1, 10))
            cfg = AudioConfig(sample_rate=rate, t_max=t_max)
            n = int(rng.integers(0, int(1.5 * cfg.queue_len) + 1))
            raw = rng.normal(size=n)
            q = build_queue(raw, cfg)
            assert q.samples.shape[0] == cfg.queue_len
            expect_pad = max(cfg.queue_len - n, 0)
            assert q.pad_len == expect_pad
            assert np.all(q.samples[:expect_pad] == 0.0)
            tail = min(n, cfg.queue_len)
            if tail:
                np.testing.assert_array_equal(q.samples[-tail:], raw[-tail:])


class TestEncoder:
    def test_silence_maps_to_zero(self):
        q = build_queue(np.zeros(0), CFG)
        feats = encode(q, CFG)
        assert feats.shape == (200, 3, 8)
        assert np.all(feats == 0.0)

    def test_sine_rms_close_to_a_over_sqrt2(self):
        # 1 kHz sine, amplitude 0.5, filling the whole window.
        a = 0.5
        t = np.arange(CFG.queue_len) / CFG.sample_rate
        raw = a * np.sin(2 * np.pi * 1000.0 * t)
        feats = encode(build_queue(raw, CFG), CFG)
        rms = feats[:, 0, :]
        np.testing.assert_allclose(rms, a / np.sqrt(2.0), rtol=0.02)

    def test_rms_matches_direct_oracle(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=CFG.queue_len)
        feats = encode(build_queue(raw, CFG), CFG)
        # independent per-sub-window RMS recomputation
        hop, d = CFG.hop, CFG.feat_dim
        for i in (0, 57, 199):
            w = raw[i * hop : (i + 1) * hop]
            for j in range(d):
                piece = w[j * (hop // d) : (j + 1) * (hop // d)]
                assert feats[i, 0, j] == pytest.approx(np.sqrt(np.mean(piece**2)))

    def test_shape_for_any_input(self):
        for n in (0, 1, 12345, CFG.queue_len + 999):
            feats = encode(build_queue(np.ones(n), CFG), CFG)
            assert feats.shape == (CFG.frames, CFG.layers, CFG.feat_dim)

    def test_translation_by_one_hop_shifts_rows(self):
        rng = np.random.default_rng(8)
        raw = rng.normal(size=CFG.queue_len)
        shifted = np.concatenate([raw, rng.normal(size=CFG.hop)])
        f0 = encode(build_queue(raw, CFG), CFG)
        f1 = encode(build_queue(shifted, CFG), CFG)
        np.testing.assert_array_equal(f1[:-1], f0[1:])

    def test_spectral_band_picks_up_tone(self):
        t = np.arange(CFG.queue_len) / CFG.sample_rate
        raw = 0.8 * np.sin(2 * np.pi * 440.0 * t)
        feats = encode(build_queue(raw, CFG), CFG)
        # 440 Hz lives in the lowest of 8 bands over 0..8 kHz
        band = feats[:, 2, :]
        assert np.argmax(band.mean(axis=0)) == 0
        assert band.mean(axis=0)[0] > 0.1


class TestConditionWindow:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.E = rng.normal(size=(200, 3, 8))

    def test_full_window_identity(self):
        np.testing.assert_array_equal(extract_condition(self.E, 200), self.E)

    def test_single_frame(self):
        np.testing.assert_array_equal(extract_condition(self.E, 1), self.E[-1:])

    def test_slice_matches_index_arithmetic(self):
        got = extract_condition(self.E, 33)
        for r in range(33):
            np.testing.assert_array_equal(got[r], self.E[167 + r])

    def test_out_of_range_raises(self):
        with pytest.raises(ContractError):
            extract_condition(self.E, 0)
        with pytest.raises(ContractError):
            extract_condition(self.E, 201)


class TestRollingCache:
    def test_stream_equivalence_sample_by_sample(self):
        cfg = AudioConfig(sample_rate=1000)
        rng = np.random.default_rng(5)
        history = rng.normal(size=2500)
        cache = RollingAudioCache(cfg)
        step = 50
        for i in range(0, history.shape[0], step):
            cache.push(history[i : i + step])
            expect = build_queue(history[: i + step], cfg)
            got = cache.queue()
            np.testing.assert_array_equal(got.samples, expect.samples)
            assert got.pad_len == expect.pad_len

    def test_cache_bounded_to_window(self):
        cfg = AudioConfig(sample_rate=1000)
        cache = RollingAudioCache(cfg)
        rng = np.random.default_rng(6)
        full = []
        for _ in range(80):  # 20 s in 0.25 s slices
            block = rng.normal(size=250)
            full.append(block)
            cache.push(block)
        history = np.concatenate(full)
        assert cache._buf.shape[0] == cfg.queue_len
        np.testing.assert_array_equal(cache.queue().samples, build_queue(history, cfg).samples)
        assert cache.total_pushed == 20_000

    def test_sync_alignment_last_frame_is_newest_hop(self):
        # last condition row corresponds to the newest real audio hop
        cache = RollingAudioCache(CFG)
        rng = np.random.default_rng(7)
        block = rng.normal(size=CFG.hop * 3)
        cache.push(block)
        feats = encode(cache.queue(), CFG)
        cond = extract_condition(feats, 1)
        direct = encode(build_queue(block, CFG), CFG)
        np.testing.assert_array_equal(cond[0], direct[-1])
        assert np.any(cond[0] != 0.0)


def test_audio_file_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    samples = rng.normal(size=4000).astype(np.float32).astype(np.float64)
    p = tmp_path / "clip.f32"
    write_audio(p, samples, 16000)
    got, rate = read_audio(p)
    assert rate == 16000
    np.testing.assert_array_equal(got, samples)
    assert (tmp_path / "clip.f32.desc").read_text().startswith("sample_rate=16000")


def test_bad_config_rejected():
    with pytest.raises(ContractError):
        AudioConfig(sample_rate=16001)
