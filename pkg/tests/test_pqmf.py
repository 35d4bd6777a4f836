import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbmif import autodiff as ad
from dbmif.audio import Waveform
from dbmif.autodiff import Tensor
from dbmif.errors import ConfigurationError, PreconditionError
from dbmif.metrics import si_sdr
from dbmif.pqmf import (
    KAISER_BETA,
    PrototypeFilter,
    SubbandTensor,
    analysis_op,
    analyze,
    default_bank,
    design_prototype,
    modulate,
    read_taps,
    synthesis_op,
    synthesize,
    write_taps,
)


@pytest.fixture(scope="module")
def bank():
    return default_bank()


def direct_analysis(x, h, bands):
    """Circular convolution by explicit summation, then keep every M-th sample."""
    n = len(x)
    out = np.zeros((h.shape[0], n // bands))
    for m, hm in enumerate(h):
        for k in range(n // bands):
            out[m, k] = sum(hm[j] * x[(k * bands - j) % n] for j in range(len(hm)))
    return out


class TestPrototype:
    def test_symmetric_64_taps(self, bank):
        p = bank.prototype.taps
        assert p.shape == (64,)
        np.testing.assert_allclose(p, p[::-1], atol=1e-12)
        assert p[31] == pytest.approx(p[32], abs=1e-12)
        assert bank.prototype.beta == KAISER_BETA

    def test_cutoff_inside_search_interval(self, bank):
        nominal = 1 / 16
        assert 0.5 * nominal <= bank.prototype.cutoff <= 1.5 * nominal

    def test_dc_gain_near_unity(self, bank):
        assert bank.prototype.taps.sum() == pytest.approx(1.0, rel=0.05)

    @pytest.mark.parametrize("length", [63, 8])
    def test_bad_length(self, length):
        with pytest.raises(ConfigurationError):
            design_prototype(length, 4)

    def test_taps_file_round_trip(self, tmp_path, bank):
        path = tmp_path / "taps.txt"
        write_taps(path, bank.prototype)
        lines = path.read_text().splitlines()
        assert len(lines) == 64
        np.testing.assert_array_equal(read_taps(path), bank.prototype.taps)


class TestModulation:
    def test_phase_signs_for_band_zero(self, bank):
        p = bank.prototype.taps
        n = np.arange(64)
        arg = np.pi / 8 * (n - 31.5)
        np.testing.assert_allclose(bank.analysis[0], 2 * p[::-1] * np.cos(arg + np.pi / 4), atol=1e-15)
        np.testing.assert_allclose(bank.synthesis[0], 8 * p * np.cos(arg - np.pi / 4), atol=1e-15)

    def test_impulse_prototype_is_time_reversed(self):
        p = np.zeros(64)
        p[0] = 1.0
        fb = modulate(PrototypeFilter(p, KAISER_BETA, 0.0), 4)
        for hm in fb.analysis:
            assert np.count_nonzero(np.abs(hm) > 1e-15) == 1
            assert abs(hm[63]) > 0

    def test_synthesis_norms_termwise(self, bank):
        p = bank.prototype.taps
        n = np.arange(64)
        for m in range(4):
            arg = (2 * m + 1) * np.pi / 8 * (n - 31.5) - (-1) ** m * np.pi / 4
            expected = np.sqrt(sum((8 * p[i] * np.cos(arg[i])) ** 2 for i in range(64)))
            assert np.linalg.norm(bank.synthesis[m]) == pytest.approx(expected, rel=1e-12)


class TestAnalysis:
    def test_zeros(self, bank):
        s = analyze(Waveform(np.zeros(160)), bank)
        assert s.bands.shape == (4, 40)
        assert not s.bands.any()

    def test_impulse_gives_decimated_filters(self, bank):
        x = np.zeros(256)
        x[0] = 1.0
        s = analyze(Waveform(x), bank)
        for m in range(4):
            np.testing.assert_allclose(s.bands[m, :16], bank.analysis[m, ::4], atol=1e-12)

    def test_matches_direct_convolution(self, bank, rng):
        x = rng.standard_normal(128)
        np.testing.assert_allclose(analyze(Waveform(x), bank).bands, direct_analysis(x, bank.analysis, 4), atol=1e-10)

    def test_one_second_shape(self, bank, rng):
        assert analyze(Waveform(rng.standard_normal(16000)), bank).bands.shape == (4, 4000)

    def test_pads_and_records_length(self, bank, rng):
        s = analyze(Waveform(rng.standard_normal(1001)), bank)
        assert s.bands.shape == (4, 251)
        assert s.original_length == 1001
        assert len(synthesize(s, bank)) == 1001

    def test_empty(self, bank):
        with pytest.raises(PreconditionError):
            analyze(Waveform(np.zeros(0)), bank)


class TestSynthesis:
    def test_round_trip_white_noise(self, bank, rng):
        x = rng.standard_normal(16000)
        assert si_sdr(x, synthesize(analyze(Waveform(x), bank), bank).samples) >= 50.0

    def test_zero_subbands(self, bank):
        assert not synthesize(SubbandTensor(np.zeros((4, 100))), bank).samples.any()

    def test_ragged_bands(self):
        with pytest.raises(PreconditionError):
            SubbandTensor([[0.0] * 10, [0.0] * 9, [0.0] * 10, [0.0] * 10])

    @settings(max_examples=20, deadline=None)
    @given(alpha=st.floats(-100, 100), seed=st.integers(0, 2**16))
    def test_linearity(self, alpha, seed):
        bank = default_bank()
        s = np.random.default_rng(seed).standard_normal((4, 64))
        base = synthesize(SubbandTensor(s), bank).samples
        scaled = synthesize(SubbandTensor(alpha * s), bank).samples
        np.testing.assert_allclose(scaled, alpha * base, atol=1e-6 * max(1.0, abs(alpha)))

    def test_superposition(self, bank, rng):
        a, b = rng.standard_normal(512), rng.standard_normal(512)
        sa, sb = analyze(Waveform(a), bank).bands, analyze(Waveform(b), bank).bands
        np.testing.assert_allclose(analyze(Waveform(a + b), bank).bands, sa + sb, atol=1e-6)

    @pytest.mark.parametrize("shift", [1, 2, 3])
    def test_alias_error_stable_under_shift(self, bank, rng, shift):
        x = rng.standard_normal(4096)

        def err(sig):
            y = synthesize(analyze(Waveform(sig), bank), bank).samples
            return np.sum((y - sig) ** 2)

        assert 10 * np.log10(err(np.roll(x, shift)) / err(x)) <= 6.0


class TestDifferentiablePath:
    def test_agrees_with_reference(self, bank, rng):
        x = rng.standard_normal(1024)
        with ad.precision(64):
            s = analysis_op(Tensor(x[None, None]), bank).data[0]
            np.testing.assert_allclose(s, analyze(Waveform(x), bank).bands, atol=1e-12)
            y = synthesis_op(Tensor(s[None]), bank).data[0, 0]
            np.testing.assert_allclose(y, synthesize(SubbandTensor(s), bank).samples, atol=1e-12)

    def test_length_not_multiple_of_bands(self, bank):
        with pytest.raises(PreconditionError):
            analysis_op(Tensor(np.zeros((1, 1, 130))), bank)
