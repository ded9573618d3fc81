"""Scenario configuration shared by all modules.

Time is measured in samples throughout: the sampling interval is 1 and the
detection window of a symbol starts at 0.  A transmitted symbol spans
``n_subcarriers + filter_length - 1`` samples and the receiver FFT operates
on ``2 * n_subcarriers`` points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


DEFAULT_SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0)

# Fallback weight factor used by the solver when the noise level is zero
# (a zero weight would erase the data-fidelity term entirely).
NOISELESS_LAMBDA = 1e3


@dataclass(frozen=True)
class SystemConfig:
    """Physical-layer scenario parameters.

    Attributes
    ----------
    n_subcarriers : int
        Points of the transmitter IDFT; half the receiver FFT size.
    n_subbands : int
        Number of sub-bands, one per uplink user.
    subband_width : int
        Consecutive subcarriers per sub-band.
    filter_length : int
        Sub-band FIR filter length in taps.
    filter_attenuation_db : float
        Side-lobe attenuation of the Dolph-Chebyshev prototype window.
    frame_length : int
        Symbols per frame.
    snr_db_list : tuple of float
        SNR grid for sweeps, in dB.
    lambda_rule : str
        Weight-factor rule for the solver: ``"noise-scaled"`` selects
        ``sigma * sqrt(2N log 2N)``, ``"fixed:<value>"`` pins a constant.
    seed : int
        Master seed; every random quantity derives from it.
    """

    n_subcarriers: int = 64
    n_subbands: int = 2
    subband_width: int = 16
    filter_length: int = 6
    filter_attenuation_db: float = 120.0
    frame_length: int = 10
    snr_db_list: tuple = field(default=DEFAULT_SNR_GRID)
    lambda_rule: str = "noise-scaled"
    seed: int = 0

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_subbands < 1 or self.subband_width < 1:
            raise ValueError("n_subcarriers, n_subbands and subband_width must be >= 1")
        if self.filter_length < 1:
            raise ValueError("filter_length must be >= 1")
        if self.frame_length < 1:
            raise ValueError("frame_length must be >= 1")
        if self.n_subcarriers < self.subband_width * self.n_subbands:
            raise ValueError(
                "n_subcarriers must cover all sub-bands: "
                f"{self.n_subcarriers} < {self.subband_width} * {self.n_subbands}"
            )
        if self.filter_length > self.n_subcarriers + 1:
            raise ValueError("filter_length too large for the receiver zero-padding")
        if len(self.snr_db_list) == 0:
            raise ValueError("snr_db_list must not be empty")
        object.__setattr__(self, "snr_db_list", tuple(float(s) for s in self.snr_db_list))
        if not (self.lambda_rule == "noise-scaled" or self.lambda_rule.startswith("fixed:")):
            raise ValueError(f"unknown lambda_rule {self.lambda_rule!r}")
        if self.lambda_rule.startswith("fixed:"):
            value = float(self.lambda_rule.split(":", 1)[1])
            if value <= 0:
                raise ValueError("fixed lambda must be positive")

    @property
    def fft_size(self) -> int:
        """Receiver FFT length (2N)."""
        return 2 * self.n_subcarriers

    @property
    def symbol_length(self) -> int:
        """Samples per transmitted symbol, N + L - 1."""
        return self.n_subcarriers + self.filter_length - 1

    def fixed_lambda(self):
        """Return the pinned weight factor, or None under the noise-scaled rule."""
        if self.lambda_rule.startswith("fixed:"):
            return float(self.lambda_rule.split(":", 1)[1])
        return None

    def replace(self, **changes) -> "SystemConfig":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(changes)
        return SystemConfig(**current)
