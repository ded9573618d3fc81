"""Monte Carlo experiment runner: NMSE and BER sweeps with CSV output.

Every random quantity in a sweep derives from the config seed through a
documented counter scheme: trial t of SNR point s for stream purpose p uses
``default_rng(SeedSequence([seed, p, s, t]))``.  Trials are therefore
independent, reorderable, and reproducible byte-for-byte; aggregation runs
in fixed trial order.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .config import SystemConfig
from .estimation import (
    EstimationError,
    EstimatorParams,
    associate,
    correlation_baseline,
    joint_estimate,
)
from .waveform import (
    ChannelRealization,
    SymbolFrame,
    apply_channel_and_noise,
    bits_to_qpsk,
    composite_pilot_window,
    default_filter_bank,
    eval_delayed_stream,
    make_pilot_frame,
    pilot_sequence,
    pilot_window_times,
    qpsk_to_bits,
    receiver_front_end,
)

NMSE_FLOOR_DB = -320.0

# Stream purposes for the per-trial counter-based seeding scheme.
_STREAM_CHANNEL = 1
_STREAM_NOISE = 2
_STREAM_DATA = 3

CSV_HEADER = "snr_db,method,metric,value,trials,failures,mean_iterations"


@dataclass
class ExperimentConfig:
    """Sweep settings on top of a physical-layer scenario.

    ``data_symbols`` is the total number of data symbol vectors per SNR
    point; each trial demodulates ``ceil(data_symbols / trials)`` of them.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    trials: int = 500
    pilot_repeats: int = 3
    data_symbols: int = 10_000
    baseline: bool = True
    baseline_search_margin: int = 2
    estimator: EstimatorParams = field(
        default_factory=lambda: EstimatorParams(max_iter=300)
    )
    output_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.pilot_repeats < 3:
            raise ValueError("pilot_repeats must be >= 3 for a steady-state window")
        if self.data_symbols < 1:
            raise ValueError("data_symbols must be >= 1")
        if self.baseline_search_margin < 1:
            raise ValueError("baseline_search_margin must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    """One CSV row of a sweep."""

    snr_db: float
    method: str
    metric: str
    value: float
    trials: int
    failures: int
    mean_iterations: float

    def __post_init__(self):
        if self.metric not in ("nmse_db", "ber"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.method not in ("anm", "baseline", "ideal"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.metric == "ber" and not math.isnan(self.value):
            if not 0.0 <= self.value <= 1.0:
                raise ValueError("ber outside [0, 1]")


def _fmt(value: float) -> str:
    return format(value, ".12g")


def records_to_csv(records) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{_fmt(r.snr_db)},{r.method},{r.metric},{_fmt(r.value)},"
            f"{r.trials},{r.failures},{_fmt(r.mean_iterations)}"
        )
    return "\n".join(lines) + "\n"


def write_csv(records, path) -> None:
    with open(path, "w", newline="\n") as handle:
        handle.write(records_to_csv(records))


def trial_rng(seed: int, purpose: int, snr_index: int, trial: int) -> np.random.Generator:
    """Independent generator for one (purpose, SNR point, trial) cell."""
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, snr_index, trial]))


class Scenario:
    """Precomputed per-config state shared by all trials of a sweep."""

    def __init__(self, experiment: ExperimentConfig):
        self.experiment = experiment
        self.system = experiment.system
        self.filters = default_filter_bank(self.system)
        self.frame = make_pilot_frame(self.system, experiment.pilot_repeats)
        self.clean_window = composite_pilot_window(self.frame, 0.0, self.system, self.filters)
        self.pilot_spectrum = receiver_front_end(self.clean_window, self.system).freq_bins
        # Average transmit power, measured from the actual pilot waveform.
        self.power = float(np.mean(np.abs(self.clean_window) ** 2))
        margin = experiment.baseline_search_margin
        reach = int(math.ceil(self.system.filter_length)) + margin
        self.baseline_lags = range(-reach, reach + 1)

    def sigma2(self, snr_db: float) -> float:
        return self.power / (self.system.fft_size * 10.0 ** (snr_db / 10.0))

    def draw_channel(self, snr_index: int, trial: int) -> ChannelRealization:
        rng = trial_rng(self.system.seed, _STREAM_CHANNEL, snr_index, trial)
        b = self.system.n_subbands
        span = self.system.filter_length
        h = (rng.standard_normal(b) + 1j * rng.standard_normal(b)) / np.sqrt(2.0)
        delta_t = rng.uniform(-span, span, b)
        return ChannelRealization(h=h, delta_t=delta_t)

    def received_pilot(self, channel: ChannelRealization, sigma2: float, rng):
        windows = np.stack(
            [
                composite_pilot_window(self.frame, dt, self.system, self.filters)
                for dt in channel.delta_t
            ]
        )
        samples = apply_channel_and_noise(windows, channel, sigma2, rng)
        return receiver_front_end(samples, self.system, noise_var=sigma2)


def compute_nmse(errors) -> float:
    """10 log10 of the mean squared offset error; -320 dB floor at zero."""
    errors = np.asarray(list(errors), dtype=float)
    if errors.size == 0:
        raise ValueError("no error samples")
    mean = float(np.mean(errors))
    if mean <= 0.0:
        return NMSE_FLOOR_DB
    return 10.0 * math.log10(mean)


def _progress(enabled: bool, message: str) -> None:
    if enabled:
        print(message, file=sys.stderr, flush=True)


def run_nmse_sweep(experiment: ExperimentConfig, progress: bool = False):
    """Timing-offset NMSE versus SNR, for the joint estimator and baseline.

    Per trial the channels and offsets are drawn fresh, the pilot region is
    synthesized, and the post-association mean squared offset error is
    accumulated.  Estimator errors are counted as failures, never fatal; a
    point with more than 50% failures is emitted with a NaN value.
    """
    scenario = Scenario(experiment)
    system = experiment.system
    records = []
    for snr_index, snr_db in enumerate(system.snr_db_list):
        sq_errors = []
        base_errors = []
        iteration_counts = []
        failures = 0
        for trial in range(experiment.trials):
            channel = scenario.draw_channel(snr_index, trial)
            noise_rng = trial_rng(system.seed, _STREAM_NOISE, snr_index, trial)
            sigma2 = scenario.sigma2(snr_db)
            received = scenario.received_pilot(channel, sigma2, noise_rng)
            try:
                result = joint_estimate(
                    received,
                    scenario.pilot_spectrum,
                    system,
                    experiment.estimator,
                    frame=scenario.frame,
                )
            except EstimationError as exc:
                failures += 1
                _progress(progress, f"nmse snr={snr_db} trial={trial}: {exc}")
            else:
                perm = associate(result.delta_t_hats, channel.delta_t)
                err = result.delta_t_hats[perm] - channel.delta_t
                sq_errors.append(float(np.mean(err**2)))
                iteration_counts.append(result.solver_iterations)
            if experiment.baseline:
                lag = correlation_baseline(
                    received.time_samples, scenario.clean_window, scenario.baseline_lags
                )
                base_errors.append(float(np.mean((lag - channel.delta_t) ** 2)))
        invalid = failures > experiment.trials // 2
        value = math.nan if invalid or not sq_errors else compute_nmse(sq_errors)
        mean_iter = float(np.mean(iteration_counts)) if iteration_counts else 0.0
        records.append(
            MetricsRecord(snr_db, "anm", "nmse_db", value, experiment.trials, failures, mean_iter)
        )
        if experiment.baseline:
            records.append(
                MetricsRecord(
                    snr_db, "baseline", "nmse_db", compute_nmse(base_errors),
                    experiment.trials, 0, 0.0,
                )
            )
        _progress(progress, f"nmse snr={snr_db}: value={value} failures={failures}")
    if experiment.output_path:
        write_csv(records, experiment.output_path)
    return records


def _build_data_frame(
    system: SystemConfig, n_data: int, rng: np.random.Generator
) -> tuple[SymbolFrame, np.ndarray]:
    """Pilot-guarded frame of random QPSK data symbols, plus the data bits.

    Layout: one leading and one trailing pilot guard around ``n_data`` data
    symbols, so every data detection window sees a populated neighbour for
    either offset sign.
    """
    b = system.n_subbands
    width = system.subband_width
    bits = rng.integers(0, 2, size=(b, n_data, width, 2))
    data = bits_to_qpsk(bits.reshape(-1, 2).ravel()).reshape(b, n_data, width)
    guard = np.broadcast_to(pilot_sequence(system), (b, 1, width))
    symbols = np.concatenate([guard, data, guard], axis=1)
    mask = np.zeros(n_data + 2, dtype=bool)
    mask[0] = mask[-1] = True
    return SymbolFrame(symbols=symbols, pilot_mask=mask), bits


def _demodulate(
    spectrum: np.ndarray,
    user: int,
    delta_t: float,
    h: complex,
    scenario: Scenario,
) -> np.ndarray:
    """Equalize one user's even data bins and hard-decide the QPSK bits."""
    system = scenario.system
    width = system.subband_width
    k = (user - 1) * width + np.arange(width)
    bins = 2 * k
    ramp = np.exp(2j * np.pi * bins * delta_t / system.fft_size)
    gain = h * scenario.filters[user - 1].freq_response[bins] * system.n_subcarriers
    symbols = spectrum[bins] * ramp / gain
    return qpsk_to_bits(symbols)


def run_ber_sweep(experiment: ExperimentConfig, progress: bool = False):
    """Bit error rate versus SNR, estimated synchronization versus genie.

    Each trial estimates the channel/offsets from the pilot region, then
    demodulates a short stream of per-user data symbols twice: once with the
    estimates and once with the true values (the ideal arm).
    """
    scenario = Scenario(experiment)
    system = experiment.system
    per_trial = max(1, math.ceil(experiment.data_symbols / experiment.trials))
    span = system.symbol_length
    records = []
    for snr_index, snr_db in enumerate(system.snr_db_list):
        sigma2 = scenario.sigma2(snr_db)
        err_est = err_ideal = 0
        bits_est = bits_ideal = 0
        iteration_counts = []
        failures = 0
        for trial in range(experiment.trials):
            channel = scenario.draw_channel(snr_index, trial)
            noise_rng = trial_rng(system.seed, _STREAM_NOISE, snr_index, trial)
            received = scenario.received_pilot(channel, sigma2, noise_rng)
            estimate = None
            try:
                result = joint_estimate(
                    received, scenario.pilot_spectrum, system,
                    experiment.estimator, frame=scenario.frame,
                )
            except EstimationError as exc:
                failures += 1
                _progress(progress, f"ber snr={snr_db} trial={trial}: {exc}")
            else:
                iteration_counts.append(result.solver_iterations)
                perm = associate(result.delta_t_hats, channel.delta_t)
                estimate = (result.delta_t_hats[perm], result.h_hats[perm])

            data_rng = trial_rng(system.seed, _STREAM_DATA, snr_index, trial)
            frame, bits = _build_data_frame(system, per_trial, data_rng)
            users = range(1, system.n_subbands + 1)
            for m in range(per_trial):
                t_window = (m + 1) * span + np.arange(span, dtype=float)
                samples = np.zeros(span, dtype=np.complex128)
                for u in users:
                    samples += channel.h[u - 1] * eval_delayed_stream(
                        frame, u, t_window, channel.delta_t[u - 1],
                        system, scenario.filters[u - 1],
                    )
                if sigma2 > 0:
                    samples = samples + np.sqrt(sigma2 / 2.0) * (
                        noise_rng.standard_normal(span)
                        + 1j * noise_rng.standard_normal(span)
                    )
                spectrum = receiver_front_end(samples, system, sigma2).freq_bins
                for u in users:
                    sent = bits[u - 1, m].ravel()
                    ideal_bits = _demodulate(
                        spectrum, u, channel.delta_t[u - 1], channel.h[u - 1], scenario
                    )
                    err_ideal += int(np.count_nonzero(ideal_bits != sent))
                    bits_ideal += sent.size
                    if estimate is not None:
                        est_bits = _demodulate(
                            spectrum, u, estimate[0][u - 1], estimate[1][u - 1], scenario
                        )
                        err_est += int(np.count_nonzero(est_bits != sent))
                        bits_est += sent.size
        invalid = failures > experiment.trials // 2
        ber_est = math.nan if invalid or bits_est == 0 else err_est / bits_est
        ber_ideal = err_ideal / bits_ideal
        mean_iter = float(np.mean(iteration_counts)) if iteration_counts else 0.0
        records.append(
            MetricsRecord(snr_db, "anm", "ber", ber_est, experiment.trials, failures, mean_iter)
        )
        records.append(
            MetricsRecord(snr_db, "ideal", "ber", ber_ideal, experiment.trials, 0, 0.0)
        )
        _progress(
            progress,
            f"ber snr={snr_db}: est={ber_est} ideal={ber_ideal} failures={failures}",
        )
    if experiment.output_path:
        write_csv(records, experiment.output_path)
    return records


def experiment_with(experiment: ExperimentConfig, **system_changes) -> ExperimentConfig:
    """Copy an experiment with selected system-config fields replaced."""
    return replace(experiment, system=experiment.system.replace(**system_changes))
