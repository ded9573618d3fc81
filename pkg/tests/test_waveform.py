"""Transmit/channel/receiver model tests against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ufmcsync import SystemConfig
from ufmcsync.waveform import (
    apply_channel_and_noise,
    bits_to_qpsk,
    build_steering_vector,
    ChannelRealization,
    chebyshev_window,
    composite_pilot_window,
    delay_phase_ramp,
    design_chebyshev_filter,
    eval_delayed_stream,
    eval_subcarrier_sum,
    interference_terms,
    make_pilot_frame,
    pilot_window_times,
    qpsk_to_bits,
    receiver_front_end,
    SymbolFrame,
    synthesize_symbol,
)

CFG = SystemConfig()
RNG = np.random.default_rng(1234)


def random_qpsk(rng, count):
    return bits_to_qpsk(rng.integers(0, 2, 2 * count))


# ---------------------------------------------------------------------------
# Dolph-Chebyshev filter design
# ---------------------------------------------------------------------------


def textbook_chebyshev(length: int, attenuation_db: float) -> np.ndarray:
    """Frequency-sampling construction of the Dolph-Chebyshev window.

    Samples T_{M-1}(x0 cos(pi k / M)) on the DFT grid (with the half-bin
    linear phase for even lengths) and inverse-transforms.  Kept deliberately
    separate from the implementation path, which goes through scipy.
    """
    m = length
    big_r = 10.0 ** (attenuation_db / 20.0)
    x0 = math.cosh(math.acosh(big_r) / (m - 1))

    def cheb_poly(n, x):
        if abs(x) <= 1:
            return math.cos(n * math.acos(x))
        val = math.cosh(n * math.acosh(abs(x)))
        return val if x > 0 else (-1) ** n * val

    k = np.arange(m)
    samples = np.array([cheb_poly(m - 1, x0 * math.cos(math.pi * kk / m)) for kk in k])
    if m % 2 == 0:
        samples = samples * np.exp(1j * np.pi * k / m)
        window = np.roll(np.fft.fft(samples).real, m // 2 - 1)
        return window / window.max()
    window = np.fft.fft(samples).real
    window = np.roll(window, (m - 1) // 2)
    return window / window.max()


def sidelobe_attenuation_db(window: np.ndarray, oversample: int = 2048) -> float:
    """Peak-to-highest-sidelobe ratio on a dense frequency grid."""
    spectrum = np.abs(np.fft.fft(window, oversample))
    spectrum = spectrum / spectrum.max()
    # walk from the peak to the first local minimum, then take the max beyond
    half = spectrum[: oversample // 2 + 1]
    edge = 1
    while edge < half.size - 1 and half[edge + 1] <= half[edge]:
        edge += 1
    if edge >= half.size - 1:
        return math.inf
    return -20.0 * math.log10(half[edge + 1 :].max())


class TestFilterDesign:
    def test_single_tap_is_identity(self):
        cfg = SystemConfig(n_subcarriers=16, n_subbands=1, subband_width=4, filter_length=1)
        filt = design_chebyshev_filter(1, 80.0, 1, cfg)
        assert np.allclose(filt.taps, [1.0])
        assert np.allclose(filt.freq_response, np.ones(cfg.fft_size))

    @pytest.mark.parametrize("length", [6, 7])
    def test_matches_textbook_oracle(self, length):
        proto = chebyshev_window(length, 120.0)
        oracle = textbook_chebyshev(length, 120.0)
        assert np.allclose(
            proto / np.linalg.norm(proto), oracle / np.linalg.norm(oracle), atol=1e-10
        )

    @pytest.mark.parametrize("length", [2, 5, 6, 9, 16])
    def test_prototype_symmetry_exact(self, length):
        proto = chebyshev_window(length, 90.0)
        assert np.array_equal(proto, proto[::-1])

    def test_taps_unit_energy(self):
        filt = design_chebyshev_filter(6, 120.0, 2, CFG)
        assert math.isclose(np.sum(np.abs(filt.taps) ** 2), 1.0, rel_tol=1e-12)

    def test_attenuation_meets_spec_on_dense_grid(self):
        for att in (60.0, 120.0):
            proto = chebyshev_window(6, att)
            assert sidelobe_attenuation_db(proto) >= att - 1.0

    def test_response_is_fft_of_taps(self):
        filt = design_chebyshev_filter(6, 120.0, 1, CFG)
        assert np.allclose(filt.freq_response, np.fft.fft(filt.taps, CFG.fft_size))

    def test_invalid_parameters_raise(self):
        with pytest.raises(ValueError):
            design_chebyshev_filter(0, 120.0, 1, CFG)
        with pytest.raises(ValueError):
            design_chebyshev_filter(6, 0.0, 1, CFG)
        with pytest.raises(ValueError):
            design_chebyshev_filter(6, 120.0, CFG.n_subbands + 1, CFG)


# ---------------------------------------------------------------------------
# Subcarrier-sum evaluation
# ---------------------------------------------------------------------------


class TestEvalSubcarrierSum:
    def test_zero_symbols(self):
        for t in (0.0, 1.3, 17.0, -2.0, 63.999):
            assert eval_subcarrier_sum(np.zeros(CFG.subband_width), 1, t, CFG) == 0

    def test_dc_tone_at_start(self):
        symbols = np.zeros(CFG.subband_width, complex)
        symbols[0] = 1.0
        assert eval_subcarrier_sum(symbols, 1, 0.0, CFG) == pytest.approx(1.0)

    def test_integer_grid_matches_dft_matrix_oracle(self):
        rng = np.random.default_rng(7)
        for subband in (1, 2):
            symbols = random_qpsk(rng, CFG.subband_width)
            grid = np.arange(CFG.n_subcarriers, dtype=float)
            values = eval_subcarrier_sum(symbols, subband, grid, CFG)
            k = (subband - 1) * CFG.subband_width + np.arange(CFG.subband_width)
            dft = np.exp(
                2j * np.pi * np.outer(np.arange(CFG.n_subcarriers), k) / CFG.n_subcarriers
            )
            assert np.allclose(values, dft @ symbols, atol=1e-12)

    def test_vanishes_outside_support(self):
        rng = np.random.default_rng(8)
        symbols = random_qpsk(rng, CFG.subband_width)
        for t in (-0.001, -5.0, float(CFG.n_subcarriers), CFG.n_subcarriers + 2.5):
            assert eval_subcarrier_sum(symbols, 1, t, CFG) == 0


# ---------------------------------------------------------------------------
# Symbol synthesis
# ---------------------------------------------------------------------------


class TestSynthesizeSymbol:
    def test_identity_filter(self):
        cfg = SystemConfig(n_subcarriers=16, n_subbands=1, subband_width=4, filter_length=1)
        filt = design_chebyshev_filter(1, 60.0, 1, cfg)
        rng = np.random.default_rng(9)
        symbols = random_qpsk(rng, 4)
        out = synthesize_symbol(symbols, filt, cfg)
        base = eval_subcarrier_sum(symbols, 1, np.arange(16, dtype=float), cfg)
        assert out.shape == (16,)
        assert np.allclose(out, base, atol=1e-12)

    def test_zero_symbols(self):
        filt = design_chebyshev_filter(6, 120.0, 1, CFG)
        assert np.allclose(synthesize_symbol(np.zeros(CFG.subband_width), filt, CFG), 0)

    def test_matches_naive_convolution_oracle(self):
        rng = np.random.default_rng(10)
        filt = design_chebyshev_filter(6, 120.0, 2, CFG)
        symbols = random_qpsk(rng, CFG.subband_width)
        out = synthesize_symbol(symbols, filt, CFG)
        base = eval_subcarrier_sum(symbols, 2, np.arange(CFG.n_subcarriers, dtype=float), CFG)
        naive = np.zeros(CFG.symbol_length, dtype=complex)
        for n in range(CFG.symbol_length):
            for lag in range(CFG.filter_length):
                if 0 <= n - lag < CFG.n_subcarriers:
                    naive[n] += filt.taps[lag] * base[n - lag]
        assert out.shape == (CFG.symbol_length,)
        assert np.allclose(out, naive, atol=1e-12)


# ---------------------------------------------------------------------------
# Delayed stream evaluation
# ---------------------------------------------------------------------------


class TestDelayedStream:
    def setup_method(self):
        self.frame = make_pilot_frame(CFG, 3)
        self.t_window = pilot_window_times(self.frame, CFG)

    def window(self, user, delta_t):
        return eval_delayed_stream(self.frame, user, self.t_window, delta_t, CFG)

    def test_zero_offset_equals_synthesized_symbol(self):
        filt = design_chebyshev_filter(CFG.filter_length, CFG.filter_attenuation_db, 1, CFG)
        direct = synthesize_symbol(self.frame.symbols[0, 1], filt, CFG)
        assert np.allclose(self.window(1, 0.0), direct, atol=1e-12)

    @pytest.mark.parametrize("shift", [1, 3, -2, 5])
    def test_integer_shift_is_circular(self, shift):
        base = self.window(1, 0.0)
        shifted = self.window(1, float(shift))
        assert np.allclose(shifted, np.roll(base, shift), atol=1e-12)

    def test_fractional_shift_against_oversampled_oracle(self):
        user, delta_t, oversample = 2, 0.5, 64
        span = CFG.symbol_length
        fine_t = self.t_window[0] + np.arange(span * oversample) / oversample
        fine = eval_delayed_stream(self.frame, user, fine_t, 0.0, CFG)
        # nearest-sample delay on the oversampled grid
        steps = round(delta_t * oversample)
        idx = np.arange(span) * oversample - steps
        # window is circular under repetition: wrap indices into the window
        oracle = fine[idx % (span * oversample)]
        actual = self.window(user, delta_t)
        quantization = 0.5 * np.max(np.abs(np.diff(fine))) + 1e-9
        assert np.max(np.abs(actual - oracle)) <= quantization

    def test_repetition_shift_property_fractional(self):
        # sampled window equals the continuous evaluator's circular shift
        for delta_t in (-4.2, -0.7, 2.35, 5.9):
            base_times = (self.t_window - self.t_window[0] - delta_t) % CFG.symbol_length
            oracle = eval_delayed_stream(
                self.frame, 1, base_times + self.t_window[0], 0.0, CFG
            )
            assert np.allclose(self.window(1, delta_t), oracle, atol=1e-10)


# ---------------------------------------------------------------------------
# Channel and noise
# ---------------------------------------------------------------------------


class TestChannel:
    def setup_method(self):
        self.frame = make_pilot_frame(CFG, 3)
        self.windows = np.stack(
            [composite_pilot_window(self.frame, dt, CFG) for dt in (0.0, 1.5)]
        )

    def test_single_user_identity(self):
        channel = ChannelRealization(h=[1.0], delta_t=[0.0])
        out = apply_channel_and_noise(
            self.windows[:1], channel, 0.0, np.random.default_rng(0)
        )
        assert np.allclose(out, self.windows[0])

    def test_superposition_oracle(self):
        h = np.array([0.7 - 0.2j, -1.1 + 0.4j])
        channel = ChannelRealization(h=h, delta_t=[0.0, 1.5])
        out = apply_channel_and_noise(self.windows, channel, 0.0, np.random.default_rng(0))
        direct = h[0] * self.windows[0] + h[1] * self.windows[1]
        assert np.allclose(out, direct, atol=1e-12)

    def test_linearity_in_channel(self):
        rng = np.random.default_rng(3)
        h1 = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        h2 = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        dts = [0.0, 1.5]
        out1 = apply_channel_and_noise(
            self.windows, ChannelRealization(h=h1, delta_t=dts), 0.0, rng
        )
        out2 = apply_channel_and_noise(
            self.windows, ChannelRealization(h=h2, delta_t=dts), 0.0, rng
        )
        both = apply_channel_and_noise(
            self.windows, ChannelRealization(h=h1 + h2, delta_t=dts), 0.0, rng
        )
        assert np.allclose(out1 + out2, both, atol=1e-12)

    def test_noise_variance(self):
        reps = math.ceil(1e5 / self.windows.shape[1])
        rng = np.random.default_rng(42)
        channel = ChannelRealization(h=[0.0, 0.0], delta_t=[0.0, 1.5])
        samples = np.concatenate(
            [
                apply_channel_and_noise(self.windows, channel, 1.0, rng)
                for _ in range(reps)
            ]
        )
        assert samples.size >= 1e5
        measured = np.mean(np.abs(samples) ** 2)
        assert abs(measured - 1.0) < 0.03

    def test_mismatched_lengths_raise(self):
        channel = ChannelRealization(h=[1.0], delta_t=[0.0])
        with pytest.raises(ValueError):
            apply_channel_and_noise(self.windows, channel, 0.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Receiver front end
# ---------------------------------------------------------------------------


class TestFrontEnd:
    def test_impulse(self):
        samples = np.zeros(CFG.symbol_length, complex)
        samples[0] = 1.0
        out = receiver_front_end(samples, CFG)
        assert np.allclose(out.freq_bins, np.ones(CFG.fft_size), atol=1e-12)

    def test_dc_sum(self):
        out = receiver_front_end(np.ones(CFG.symbol_length, complex), CFG)
        assert out.freq_bins[0] == pytest.approx(CFG.symbol_length)

    def test_matches_naive_dft_oracle(self):
        rng = np.random.default_rng(5)
        samples = rng.standard_normal(CFG.symbol_length) + 1j * rng.standard_normal(
            CFG.symbol_length
        )
        out = receiver_front_end(samples, CFG)
        k = np.arange(CFG.fft_size)
        n = np.arange(CFG.symbol_length)
        naive = np.exp(-2j * np.pi * np.outer(k, n) / CFG.fft_size) @ samples
        assert np.allclose(out.freq_bins, naive, atol=1e-10)

    def test_parseval_over_many_inputs(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            samples = rng.standard_normal(CFG.symbol_length) + 1j * rng.standard_normal(
                CFG.symbol_length
            )
            out = receiver_front_end(samples, CFG)
            lhs = np.sum(np.abs(out.freq_bins) ** 2)
            rhs = CFG.fft_size * np.sum(np.abs(samples) ** 2)
            assert abs(lhs - rhs) <= 1e-9 * rhs

    def test_wrong_length_raises(self):
        with pytest.raises(ValueError):
            receiver_front_end(np.ones(CFG.symbol_length + 1, complex), CFG)


# ---------------------------------------------------------------------------
# Steering vectors
# ---------------------------------------------------------------------------


class TestSteeringVector:
    def test_zero_is_all_ones(self):
        assert np.allclose(build_steering_vector(0.0, CFG), 1.0)

    def test_quarter_cycle_two_points(self):
        cfg = SystemConfig(
            n_subcarriers=1, n_subbands=1, subband_width=1, filter_length=1
        )
        assert np.allclose(build_steering_vector(0.25, cfg), [1.0, 1j])

    @given(st.floats(min_value=-0.5, max_value=0.4999))
    def test_unit_modulus(self, tau):
        vec = build_steering_vector(tau, CFG)
        assert np.allclose(vec * np.conj(vec), 1.0)

    def test_out_of_range_wraps_with_warning(self):
        with pytest.warns(UserWarning):
            vec = build_steering_vector(0.75, CFG)
        assert np.allclose(vec, build_steering_vector(-0.25, CFG))


# ---------------------------------------------------------------------------
# Interference diagnostics
# ---------------------------------------------------------------------------


class TestInterference:
    def setup_method(self):
        self.frame = make_pilot_frame(CFG, 3)
        self.t_window = pilot_window_times(self.frame, CFG)

    def spectrum_of(self, user, delta_t):
        window = eval_delayed_stream(self.frame, user, self.t_window, delta_t, CFG)
        return receiver_front_end(window, CFG).freq_bins

    def test_zero_offset_sentinel(self):
        interference, ratio_db = interference_terms(self.frame, 1, 0.0, CFG)
        assert np.all(interference == 0)
        assert math.isinf(ratio_db)

    def test_vanishing_offset_limit(self):
        """|I| decreases toward a small floor as the offset shrinks.

        The limit is not zero: any nonzero fractional shift moves the window
        samples off the waveform's support-edge jump points, switching the
        active tap set at the 2L-1 ramp samples.  The floor energy is twice
        the subcarrier sum's edge value |s(0)|^2 (unit-energy taps), times
        the FFT's 2N Parseval factor.
        """
        symbol_edge = eval_subcarrier_sum(self.frame.symbols[0, 1], 1, 0.0, CFG)
        floor = math.sqrt(2.0 * CFG.fft_size) * abs(symbol_edge)
        norms = [
            np.linalg.norm(interference_terms(self.frame, 1, dt, CFG)[0])
            for dt in (0.3, 0.01, 1e-7)
        ]
        assert norms[0] > norms[1] > 0
        assert norms[2] <= 1.05 * floor
        scale = np.linalg.norm(self.spectrum_of(1, 0.0))
        assert norms[2] < 0.25 * scale

    @pytest.mark.parametrize("delta_t", [2.7, -2.7, 0.4, -4.9])
    def test_reconstruction_identity(self, delta_t):
        # independent path: own stream evaluation, own FFT, own phase ramp
        interference, _ = interference_terms(self.frame, 2, delta_t, CFG)
        shifted = self.spectrum_of(2, delta_t)
        clean = self.spectrum_of(2, 0.0)
        ramp = np.exp(
            -2j * np.pi * np.arange(CFG.fft_size) * delta_t / CFG.fft_size
        )
        recon = clean * ramp + interference
        assert np.max(np.abs(shifted - recon)) < 1e-9

    @pytest.mark.parametrize("delta_t", [1, 2, 4, -3, -5])
    def test_integer_offset_head_tail_oracle(self, delta_t):
        """For integer shifts the interference is exactly the head/tail burst."""
        span = CFG.symbol_length
        clean = eval_delayed_stream(self.frame, 1, self.t_window, 0.0, CFG)
        padded = np.zeros(CFG.fft_size, complex)
        padded[:span] = clean
        window_shift = np.zeros(CFG.fft_size, complex)
        window_shift[:span] = np.roll(clean, delta_t)
        time_domain = window_shift - np.roll(padded, delta_t)
        oracle = np.fft.fft(time_domain)
        interference, _ = interference_terms(self.frame, 1, float(delta_t), CFG)
        assert np.max(np.abs(interference - oracle)) < 1e-9
        # burst support: |delta_t| samples at the window head plus the copy
        # beyond the window end
        burst = np.fft.ifft(interference)
        mask = np.zeros(CFG.fft_size, bool)
        if delta_t > 0:
            mask[:delta_t] = True
            mask[span : span + delta_t] = True
        else:
            mask[span + delta_t : span] = True
            mask[CFG.fft_size + delta_t :] = True
        off_support = np.abs(burst[~mask]).max()
        assert off_support < 1e-9 * np.abs(burst).max()

    def test_ratio_high_for_small_offsets(self):
        for delta_t in (1.0, -1.0, 2.0, -2.0):
            _, ratio_db = interference_terms(self.frame, 1, delta_t, CFG)
            assert ratio_db >= 20.0

    def test_ratio_decreases_with_offset(self):
        ratios = [
            interference_terms(self.frame, 1, float(d), CFG)[1] for d in (1, 3, 5)
        ]
        assert ratios[0] > ratios[1] > ratios[2]


# ---------------------------------------------------------------------------
# QPSK mapping
# ---------------------------------------------------------------------------


class TestQpsk:
    @given(st.integers(min_value=0, max_value=2**20 - 1))
    def test_roundtrip(self, value):
        bits = np.array([(value >> i) & 1 for i in range(20)])
        assert np.array_equal(qpsk_to_bits(bits_to_qpsk(bits)), bits)

    def test_unit_power(self):
        bits = np.array([0, 0, 0, 1, 1, 0, 1, 1])
        assert np.allclose(np.abs(bits_to_qpsk(bits)), 1.0)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


class TestSymbolFrame:
    def test_pilot_invariant_accepts_valid_frame(self):
        make_pilot_frame(CFG, 3).validate_pilot_invariant()

    def test_pilot_invariant_rejects_mismatch(self):
        frame = make_pilot_frame(CFG, 3)
        frame.symbols[1, 2, 0] *= -1
        with pytest.raises(ValueError):
            frame.validate_pilot_invariant()

    def test_composite_window_sums_subbands(self):
        frame = make_pilot_frame(CFG, 3)
        t_window = pilot_window_times(frame, CFG)
        total = composite_pilot_window(frame, 0.7, CFG)
        parts = sum(
            eval_delayed_stream(frame, u, t_window, 0.7, CFG)
            for u in range(1, CFG.n_subbands + 1)
        )
        assert np.allclose(total, parts, atol=1e-12)
