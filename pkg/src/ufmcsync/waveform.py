"""UFMC transmit/receive modeling with exact fractional-sample timing offsets.

The transmitter maps each user's symbols onto a contiguous sub-band through a
partial IDFT, filters the result with a Dolph-Chebyshev FIR filter modulated
to the sub-band center, and concatenates symbols back to back.  Because the
per-symbol waveform is an analytic trigonometric polynomial pushed through a
tap-delay filter, any real-valued delay can be evaluated exactly; no
interpolation is involved anywhere.

The receiver takes one symbol-length window of samples, zero-pads it to twice
the IDFT size and applies an FFT.  With repeated pilot symbols a timing offset
turns into a circular shift of the detection window, which motivates the
phase-ramp model the estimator relies on; ``interference_terms`` quantifies
everything that model leaves out.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .config import SystemConfig

QPSK_CONSTELLATION = np.array(
    [1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j], dtype=np.complex128
) / np.sqrt(2.0)


def bits_to_qpsk(bits: np.ndarray) -> np.ndarray:
    """Gray-map bit pairs (b0, b1) to unit-power QPSK symbols.

    b0 selects the sign of the real part, b1 the sign of the imaginary part,
    so neighbouring constellation points differ in exactly one bit.
    """
    bits = np.asarray(bits)
    if bits.size % 2 != 0:
        raise ValueError("bit count must be even")
    pairs = bits.reshape(-1, 2)
    re = 1.0 - 2.0 * pairs[:, 0]
    im = 1.0 - 2.0 * pairs[:, 1]
    return (re + 1j * im) / np.sqrt(2.0)


def qpsk_to_bits(symbols: np.ndarray) -> np.ndarray:
    """Hard-decide QPSK symbols back to Gray-mapped bit pairs."""
    symbols = np.asarray(symbols)
    out = np.empty((symbols.size, 2), dtype=np.int64)
    out[:, 0] = (symbols.real < 0).astype(np.int64)
    out[:, 1] = (symbols.imag < 0).astype(np.int64)
    return out.reshape(-1)


@dataclass(frozen=True)
class SubbandFilter:
    """FIR taps for one sub-band plus their response on the receiver FFT grid."""

    taps: np.ndarray
    subband_index: int
    freq_response: np.ndarray


def chebyshev_window(length: int, attenuation_db: float) -> np.ndarray:
    """Real symmetric Dolph-Chebyshev window, peak-normalized."""
    if length == 1:
        return np.ones(1)
    return scipy.signal.windows.chebwin(length, at=attenuation_db)


def subband_center(subband_index: int, config: SystemConfig) -> float:
    """Center frequency of a sub-band in cycles per sample (1-indexed)."""
    return ((subband_index - 1) + 0.5) * config.subband_width / config.n_subcarriers


def design_chebyshev_filter(
    filter_length: int,
    attenuation_db: float,
    subband_index: int,
    config: SystemConfig,
) -> SubbandFilter:
    """Build the unit-energy sub-band filter.

    The prototype is a Dolph-Chebyshev window; modulating it by the sub-band
    center frequency places the passband over the allocated subcarriers.

    Raises
    ------
    ValueError
        If ``filter_length`` is zero, the attenuation is not positive, or the
        sub-band index is out of range.
    """
    if filter_length < 1:
        raise ValueError("filter_length must be >= 1")
    if attenuation_db <= 0:
        raise ValueError("attenuation_db must be positive")
    if not 1 <= subband_index <= config.n_subbands:
        raise ValueError(f"subband_index {subband_index} outside 1..{config.n_subbands}")
    proto = chebyshev_window(filter_length, attenuation_db)
    center = subband_center(subband_index, config)
    taps = proto * np.exp(2j * np.pi * center * np.arange(filter_length))
    taps = taps / np.linalg.norm(taps)
    response = np.fft.fft(taps, n=config.fft_size)
    return SubbandFilter(taps=taps, subband_index=subband_index, freq_response=response)


def default_filter_bank(config: SystemConfig) -> list:
    """One designed filter per sub-band, using the configured length/attenuation."""
    return [
        design_chebyshev_filter(
            config.filter_length, config.filter_attenuation_db, i, config
        )
        for i in range(1, config.n_subbands + 1)
    ]


def eval_subcarrier_sum(symbols, subband_index: int, t, config: SystemConfig):
    """Evaluate a sub-band's partial-IDFT signal at arbitrary real times.

    The signal is the trigonometric polynomial carrying ``symbols`` on the
    sub-band's subcarriers; it vanishes outside the symbol support [0, N).
    Accepts scalar or array ``t`` and returns a matching shape.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    n = config.n_subcarriers
    k = (subband_index - 1) * config.subband_width + np.arange(config.subband_width)
    phases = np.exp(2j * np.pi * np.outer(t_arr, k) / n)
    values = phases @ symbols
    values = np.where((t_arr >= 0.0) & (t_arr < n), values, 0.0 + 0.0j)
    if np.isscalar(t) or np.ndim(t) == 0:
        return complex(values[0])
    return values


def synthesize_symbol(symbols, filt: SubbandFilter, config: SystemConfig) -> np.ndarray:
    """Filtered single-symbol waveform sampled on the integer grid.

    Equals the linear convolution of the N partial-IDFT samples with the
    filter taps; output length is N + L - 1.
    """
    if filt.taps.shape[0] != config.filter_length:
        raise ValueError("filter length inconsistent with config")
    base = eval_subcarrier_sum(
        symbols, filt.subband_index, np.arange(config.n_subcarriers, dtype=float), config
    )
    return np.convolve(base, filt.taps)


@dataclass
class SymbolFrame:
    """Per-user frequency-domain symbols for one frame.

    ``symbols`` has shape (n_subbands, n_symbols, subband_width); entry
    ``pilot_mask[m]`` marks symbol slot m as a pilot.  Pilot slots must carry
    identical symbols across sub-bands and across consecutive pilot positions.
    """

    symbols: np.ndarray
    pilot_mask: np.ndarray

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        self.pilot_mask = np.asarray(self.pilot_mask, dtype=bool)
        if self.symbols.ndim != 3:
            raise ValueError("symbols must have shape (subbands, symbols, subband_width)")
        if self.pilot_mask.shape[0] != self.symbols.shape[1]:
            raise ValueError("pilot_mask length must match the symbol count")

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1]

    def validate_pilot_invariant(self) -> None:
        """Check pilots are identical across sub-bands and repeated in time."""
        idx = np.flatnonzero(self.pilot_mask)
        if idx.size == 0:
            return
        ref = self.symbols[0, idx[0]]
        for m in idx:
            for b in range(self.symbols.shape[0]):
                if not np.allclose(self.symbols[b, m], ref):
                    raise ValueError("pilot symbols must repeat across sub-bands and time")


def pilot_sequence(config: SystemConfig) -> np.ndarray:
    """Fixed pseudo-random QPSK pilot, derived from the config seed."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x70]))
    return QPSK_CONSTELLATION[rng.integers(0, 4, config.subband_width)]


def make_pilot_frame(config: SystemConfig, repeats: int = 3) -> SymbolFrame:
    """Frame of ``repeats`` identical pilot symbols on every sub-band."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seq = pilot_sequence(config)
    symbols = np.broadcast_to(
        seq, (config.n_subbands, repeats, config.subband_width)
    ).copy()
    return SymbolFrame(symbols=symbols, pilot_mask=np.ones(repeats, dtype=bool))


def eval_delayed_stream(
    frame: SymbolFrame,
    user: int,
    t,
    delta_t: float,
    config: SystemConfig,
    filt: SubbandFilter | None = None,
):
    """Evaluate a user's concatenated symbol stream at times ``t - delta_t``.

    Symbols sit back to back at spacing ``symbol_length`` with no overlap, so
    at any instant exactly one symbol contributes.  With repeated pilots and
    |delta_t| below the symbol length, the sampled detection window equals a
    circular shift of the zero-offset window.
    """
    if filt is None:
        filt = design_chebyshev_filter(
            config.filter_length, config.filter_attenuation_db, user, config
        )
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    shifted = t_arr - delta_t
    span = config.symbol_length
    out = np.zeros(t_arr.shape, dtype=np.complex128)
    m_lo = max(0, int(np.floor(shifted.min() / span)) - 1)
    m_hi = min(frame.n_symbols - 1, int(np.floor(shifted.max() / span)) + 1)
    for m in range(m_lo, m_hi + 1):
        local = shifted - m * span
        acc = np.zeros(t_arr.shape, dtype=np.complex128)
        for lag, tap in enumerate(filt.taps):
            acc += tap * eval_subcarrier_sum(frame.symbols[user - 1, m], user, local - lag, config)
        out += acc
    if np.isscalar(t) or np.ndim(t) == 0:
        return complex(out[0])
    return out


@dataclass(frozen=True)
class ChannelRealization:
    """Flat per-user channel coefficients and real-valued timing offsets."""

    h: np.ndarray
    delta_t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=np.complex128))
        object.__setattr__(self, "delta_t", np.asarray(self.delta_t, dtype=np.float64))
        if self.h.shape != self.delta_t.shape:
            raise ValueError("h and delta_t must have the same length")


def draw_channel(config: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Draw flat channels CN(0, 1) and offsets U(-L, L) for every user."""
    b = config.n_subbands
    h = (rng.standard_normal(b) + 1j * rng.standard_normal(b)) / np.sqrt(2.0)
    delta_t = rng.uniform(-config.filter_length, config.filter_length, b)
    return ChannelRealization(h=h, delta_t=delta_t)


def apply_channel_and_noise(
    windows: np.ndarray,
    channel: ChannelRealization,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Superpose per-user windows with flat gains and add complex Gaussian noise.

    The noise is circularly symmetric with total variance ``sigma2`` per
    complex sample.
    """
    windows = np.asarray(windows, dtype=np.complex128)
    if windows.ndim != 2 or windows.shape[0] != channel.h.shape[0]:
        raise ValueError("windows must be (n_users, window_length)")
    out = channel.h @ windows
    if sigma2 > 0:
        n = windows.shape[1]
        out = out + np.sqrt(sigma2 / 2.0) * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        )
    return out


@dataclass(frozen=True)
class ReceivedFrame:
    """One detection window: time samples, FFT bins and the noise level used."""

    time_samples: np.ndarray
    freq_bins: np.ndarray
    noise_var: float


def receiver_front_end(
    samples: np.ndarray, config: SystemConfig, noise_var: float = 0.0
) -> ReceivedFrame:
    """Zero-pad one detection window and apply the 2N-point FFT."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.shape != (config.symbol_length,):
        raise ValueError(
            f"expected {config.symbol_length} samples, got {samples.shape}"
        )
    padded = np.zeros(config.fft_size, dtype=np.complex128)
    padded[: samples.size] = samples
    return ReceivedFrame(
        time_samples=samples, freq_bins=np.fft.fft(padded), noise_var=noise_var
    )


def build_steering_vector(tau: float, config: SystemConfig) -> np.ndarray:
    """Complex-exponential atom [1, e^{j2pi tau}, ..., e^{j2pi(2N-1) tau}].

    ``tau`` outside [-1/2, 1/2) is wrapped back into range with a warning.
    """
    tau = float(tau)
    if not -0.5 <= tau < 0.5:
        warnings.warn(f"tau={tau} wrapped into [-1/2, 1/2)", stacklevel=2)
        tau = ((tau + 0.5) % 1.0) - 0.5
    return np.exp(2j * np.pi * np.arange(config.fft_size) * tau)


def delay_phase_ramp(delta_t: float, config: SystemConfig) -> np.ndarray:
    """Phase ramp a delay of ``delta_t`` samples applies to the FFT bins."""
    return build_steering_vector(-delta_t / config.fft_size, config)


def _pilot_window_start(frame: SymbolFrame) -> int:
    """Index of a pilot symbol with pilot neighbours on both sides."""
    idx = np.flatnonzero(frame.pilot_mask)
    for m in idx:
        if m - 1 in idx and m + 1 in idx:
            return m
    raise ValueError("frame needs at least 3 consecutive pilot symbols")


def pilot_window_times(frame: SymbolFrame, config: SystemConfig) -> np.ndarray:
    """Sample instants of the steady-state pilot detection window.

    The window sits on a pilot symbol whose neighbours are pilots too, so the
    circular-shift property holds for either sign of the timing offset.
    """
    start = _pilot_window_start(frame) * config.symbol_length
    return start + np.arange(config.symbol_length, dtype=float)


def composite_pilot_window(
    frame: SymbolFrame,
    delta_t: float,
    config: SystemConfig,
    filters: list | None = None,
) -> np.ndarray:
    """One user's transmitted pilot window, delayed by ``delta_t``.

    During the synchronization phase every user transmits the same pilot on
    all sub-bands, so the waveform is the sum of the per-sub-band streams;
    identical pilot symbols make this waveform common to all users.
    """
    if filters is None:
        filters = default_filter_bank(config)
    t_window = pilot_window_times(frame, config)
    out = np.zeros(t_window.shape, dtype=np.complex128)
    for j in range(1, config.n_subbands + 1):
        out += eval_delayed_stream(frame, j, t_window, delta_t, config, filters[j - 1])
    return out


def interference_terms(
    frame: SymbolFrame,
    user: int,
    delta_t: float,
    config: SystemConfig,
    filt: SubbandFilter | None = None,
):
    """Residual of the phase-ramp model for one user's shifted pilot window.

    Returns the 2N-bin interference spectrum and the signal-to-interference
    ratio in dB.  A zero offset yields zero interference and an infinite
    ratio.  The returned spectrum satisfies
    ``fft(shifted window) = fft(clean window) * ramp + interference`` exactly.
    """
    frame.validate_pilot_invariant()
    mid = _pilot_window_start(frame)
    span = config.symbol_length
    t_window = mid * span + np.arange(span, dtype=float)
    clean = eval_delayed_stream(frame, user, t_window, 0.0, config, filt)
    spectrum = receiver_front_end(clean, config).freq_bins
    if delta_t == 0.0:
        return np.zeros(config.fft_size, dtype=np.complex128), math.inf
    shifted = eval_delayed_stream(frame, user, t_window, delta_t, config, filt)
    shifted_spectrum = receiver_front_end(shifted, config).freq_bins
    interference = shifted_spectrum - spectrum * delay_phase_ramp(delta_t, config)
    power_ratio = np.sum(np.abs(spectrum) ** 2) / np.sum(np.abs(interference) ** 2)
    return interference, 10.0 * np.log10(power_ratio)
