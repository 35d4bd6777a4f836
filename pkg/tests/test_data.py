import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from dbmif.audio import Waveform
from dbmif.data import (
    BC_LOWPASS_SOS,
    MixSpec,
    make_synthetic_corpus,
    mix_at_snr,
    mix_components,
    read_manifest,
    forge,
    scale_noise,
    simulate_bc,
    slice_and_fade,
)
from dbmif.errors import PreconditionError


def tone(freq, seconds=1.0, rate=16000):
    return Waveform(np.sin(2 * np.pi * freq * np.arange(int(seconds * rate)) / rate))


def snr_db(clean, noise):
    return 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))


class TestSimulateBc:
    def test_coefficients_match_butterworth_design(self):
        np.testing.assert_allclose(BC_LOWPASS_SOS, signal.butter(6, 1000, fs=16000, output="sos"), rtol=1e-12, atol=1e-15)

    def test_passband_tone(self):
        y = tone(200.0)
        out = simulate_bc(y)
        assert abs(20 * np.log10(out.rms / y.rms)) <= 1.0

    def test_stopband_tone(self):
        y = tone(4000.0)
        out = simulate_bc(y)
        # skip the filter's start-up transient
        assert 20 * np.log10(out.samples[4000:].std() / y.samples[4000:].std()) <= -30.0

    def test_zero(self):
        assert not simulate_bc(Waveform(np.zeros(100))).samples.any()


class TestMixing:
    def test_noise_scale_arithmetic(self):
        y = np.ones(100)
        n = 2.0 * np.ones(100)
        np.testing.assert_allclose(scale_noise(y, n, 0.0), np.ones(100))

    def test_collinear_noise(self, rng):
        y = Waveform(rng.standard_normal(1000))
        out = mix_at_snr(y, y, 0.0)
        np.testing.assert_allclose(out.samples, y.samples, rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(snr=st.floats(-15, 5), seed=st.integers(0, 2**16))
    def test_snr_and_rms(self, snr, seed):
        rng = np.random.default_rng(seed)
        y = Waveform(rng.standard_normal(2000) * rng.uniform(0.01, 2))
        noise = Waveform(rng.standard_normal(2000) * rng.uniform(0.01, 2))
        mixture, scaled = mix_components(y, noise, snr)
        assert abs(snr_db(y.samples, scaled) - snr) <= 0.01
        assert abs(mixture.rms / y.rms - 1) <= 1e-6

    def test_silent_inputs(self, rng):
        with pytest.raises(PreconditionError):
            mix_at_snr(Waveform(np.zeros(10)), Waveform(rng.standard_normal(10)), 0.0)
        with pytest.raises(PreconditionError):
            mix_at_snr(Waveform(rng.standard_normal(10)), Waveform(np.zeros(10)), 0.0)

    def test_short_noise(self, rng):
        with pytest.raises(PreconditionError):
            mix_at_snr(Waveform(rng.standard_normal(10)), Waveform(rng.standard_normal(9)), 0.0)


class TestSliceAndFade:
    def test_constant_signal_ramps(self):
        out = slice_and_fade(Waveform(np.ones(20000)), MixSpec(), 100).samples
        assert out.shape == (16000,)
        assert out[0] == pytest.approx(0.0, abs=1e-3)
        assert out[800] == 1.0
        np.testing.assert_allclose(np.diff(out[:800]), 1 / 800)
        assert out[-1] == pytest.approx(0.0, abs=1e-3)

    def test_interior_untouched(self, rng):
        x = rng.standard_normal(16000)
        out = slice_and_fade(Waveform(x)).samples
        np.testing.assert_array_equal(out[800:15200], x[800:15200])

    def test_fade_length(self):
        assert MixSpec().fade_samples == 800

    @pytest.mark.parametrize("offset", [-1, 4001])
    def test_out_of_range(self, offset):
        with pytest.raises(PreconditionError):
            slice_and_fade(Waveform(np.ones(20000)), MixSpec(), offset)


class TestCorpus:
    def test_deterministic(self):
        a, b = make_synthetic_corpus(2, 7), make_synthetic_corpus(2, 7)
        for x, y in zip(a, b):
            assert np.array_equal(x.noisy.samples, y.noisy.samples)
            assert np.array_equal(x.bone.samples, y.bone.samples)

    def test_shapes_and_snr(self):
        for ex in make_synthetic_corpus(4, 0):
            assert len(ex.clean) == len(ex.noisy) == len(ex.bone) == 16000
            assert -15 <= ex.snr_db <= 5
            assert abs(snr_db(ex.clean.samples, ex.noise) - ex.snr_db) <= 0.1

    def test_bone_channel_is_noise_free(self):
        ex = make_synthetic_corpus(1, 3)[0]
        np.testing.assert_array_equal(ex.bone.samples, simulate_bc(ex.clean).samples)

    def test_forge_layout(self, tmp_path):
        forge(tmp_path, 2, 5)
        rows = read_manifest(tmp_path / "manifest.txt")
        assert [r[0] for r in rows] == ["s5_00000", "s5_00001"]
        for ident, _, seed in rows:
            assert seed == 5
            for suffix in ("clean", "ac", "bc"):
                assert (tmp_path / f"{ident}_{suffix}.wav").exists()
