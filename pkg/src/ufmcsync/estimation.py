"""User-level estimates from a solver solution.

The pipeline extracts per-user frequency parameters from the solver's
Toeplitz block with the matrix pencil method, converts them to timing
offsets, recovers flat channel coefficients by least squares, and optionally
refines both against the exact delayed-pilot model.  A single-peak
correlation baseline and evaluation helpers (truth association, the Timing
Advance decision) live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .anm import AnmProblem, AnmSolution, default_lambda, solve
from .config import SystemConfig
from .waveform import (
    ReceivedFrame,
    SymbolFrame,
    build_steering_vector,
    composite_pilot_window,
    default_filter_bank,
    receiver_front_end,
)

_RANK_RATIO = 1e-12
_MAX_GRAM_CONDITION = 1e10


class EstimationError(RuntimeError):
    """Estimation failure, labelled with the pipeline stage that raised it."""

    def __init__(self, message: str, stage: str = "estimation"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class RankDeficientError(EstimationError):
    """The Toeplitz block has fewer significant eigenvalues than requested."""

    def __init__(self, detected_rank: int, requested: int):
        super().__init__(
            f"effective rank {detected_rank} below requested order {requested}",
            stage="pencil",
        )
        self.detected_rank = detected_rank


class ConditioningError(EstimationError):
    """Steering vectors too close for a stable least-squares channel fit."""

    def __init__(self, condition_number: float):
        super().__init__(
            f"Gram matrix condition number {condition_number:.3e} exceeds "
            f"{_MAX_GRAM_CONDITION:.0e}",
            stage="ls",
        )
        self.condition_number = condition_number


@dataclass
class EstimatorParams:
    """Knobs for ``joint_estimate``; defaults match the solver contract."""

    tolerance: float = 1e-6
    max_iter: int = 5000
    rho: float = 1.0
    lam: float | None = None
    candidate_order: int | None = None
    refine: bool = True
    refine_grid_step: float = 0.5
    prior_bound: float | None = None


@dataclass
class EstimationResult:
    """Per-user estimates plus diagnostics."""

    taus: np.ndarray
    delta_t_hats: np.ndarray
    h_hats: np.ndarray
    association: np.ndarray
    residual_norm: float
    out_of_range: np.ndarray = None
    ls_residual: float = math.nan
    solver_iterations: int = 0
    solver_converged: bool = True


def _pencil_from_factor(factor: np.ndarray) -> np.ndarray:
    upper = factor[:-1, :]
    lower = factor[1:, :]
    gram = upper.conj().T @ upper
    cross = upper.conj().T @ lower
    if np.linalg.cond(gram) < _MAX_GRAM_CONDITION:
        pencil = np.linalg.solve(gram, cross)
    else:
        pencil = np.linalg.pinv(gram) @ cross
    eigenvalues = np.linalg.eigvals(pencil)
    eigenvalues = eigenvalues / np.abs(eigenvalues)
    taus = np.angle(eigenvalues) / (2.0 * np.pi)
    taus[taus >= 0.5] -= 1.0
    return np.sort(taus)


def _significant_eigenpairs(matrix: np.ndarray, max_order: int):
    w, v = np.linalg.eigh(matrix)
    order = np.argsort(w)[::-1][:max_order]
    w = np.maximum(w[order], 0.0)
    if w[0] <= 0.0:
        return np.zeros((matrix.shape[0], 0)), 0
    keep = w / w[0] >= _RANK_RATIO
    factor = v[:, order[keep]] * np.sqrt(w[keep])
    return factor, int(np.count_nonzero(keep))


def matrix_pencil(toeplitz_matrix: np.ndarray, model_order: int) -> np.ndarray:
    """Extract ``model_order`` frequencies from a PSD Toeplitz matrix.

    Factors the matrix through its dominant eigenpairs and solves the shifted
    generalized eigenproblem; eigenvalues are normalized to unit modulus
    before the angles are read off.  Returns sorted values in [-1/2, 1/2).

    Raises
    ------
    RankDeficientError
        If fewer than ``model_order`` eigenvalues stand above the rank
        threshold (ratio 1e-12 to the largest).
    """
    toeplitz_matrix = np.asarray(toeplitz_matrix, dtype=np.complex128)
    size = toeplitz_matrix.shape[0]
    if model_order < 1 or model_order > size - 1:
        raise ValueError("model_order must be in 1..2N-1")
    factor, rank = _significant_eigenpairs(toeplitz_matrix, model_order)
    if rank < model_order:
        raise RankDeficientError(rank, model_order)
    return _pencil_from_factor(factor)


def pencil_candidates(toeplitz_matrix: np.ndarray, max_order: int) -> np.ndarray:
    """Like ``matrix_pencil`` but returns however many atoms are present.

    Used for robust extraction: the solver's Toeplitz block may hold fewer
    (merged users) or more (interference) significant directions than the
    model order.
    """
    toeplitz_matrix = np.asarray(toeplitz_matrix, dtype=np.complex128)
    factor, rank = _significant_eigenpairs(toeplitz_matrix, max_order)
    if rank == 0:
        return np.zeros(0)
    return _pencil_from_factor(factor)


def tau_to_delta_t(tau: float, config: SystemConfig) -> float:
    """Convert a normalized frequency to a timing offset in samples.

    The offset is ``-2N * tau`` wrapped into (-N, N]; for ``tau`` already in
    [-1/2, 1/2) the wrap is the identity.
    """
    size = config.fft_size
    delta_t = -size * float(tau)
    half = size / 2.0
    wrapped = -((delta_t + half) % size - half)
    return wrapped + size if wrapped <= -half else wrapped


def outside_prior(delta_t_hats: np.ndarray, bound: float) -> np.ndarray:
    """Flags estimates outside the configured draw support (never clipped)."""
    return np.abs(np.asarray(delta_t_hats, dtype=float)) >= bound


def ls_channels(taus, g_hat: np.ndarray, config: SystemConfig):
    """Least-squares channel coefficients for the given frequencies.

    Returns ``(h, residual)`` where ``residual`` is the norm of the part of
    ``g_hat`` the steering vectors cannot explain.

    Raises
    ------
    ConditioningError
        If two frequencies are so close that the Gram matrix condition
        number exceeds 1e10.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    g_hat = np.asarray(g_hat, dtype=np.complex128)
    basis = np.stack([build_steering_vector(t, config) for t in taus], axis=1)
    gram = basis.conj().T @ basis
    condition = np.linalg.cond(gram)
    if not condition < _MAX_GRAM_CONDITION:
        raise ConditioningError(condition)
    h = np.linalg.solve(gram, basis.conj().T @ g_hat)
    residual = float(np.linalg.norm(g_hat - basis @ h))
    return h, residual


def associate(estimates, truth) -> np.ndarray:
    """Permutation matching estimates to ground truth.

    Returns ``perm`` minimizing ``sum((estimates[perm[i]] - truth[i])**2)``,
    solved as a minimum-cost assignment.
    """
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError("estimates and truth must have equal length")
    cost = (truth[:, None] - estimates[None, :]) ** 2
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    perm = np.empty(truth.size, dtype=np.int64)
    perm[rows] = cols
    return perm


def timing_advance_decision(delta_t_hats, threshold: float) -> np.ndarray:
    """Flag users whose offset magnitude strictly exceeds the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return np.abs(np.asarray(delta_t_hats, dtype=float)) > threshold


def correlation_baseline(received, pilot, search_lags) -> float:
    """Single-peak circular-correlation timing estimate.

    Correlates the received window against the clean pilot over the integer
    lags in ``search_lags`` and refines the peak with a three-point parabola.
    One lag is returned no matter how many users are present, which is the
    baseline's model error.
    """
    received = np.asarray(received, dtype=np.complex128)
    pilot = np.asarray(pilot, dtype=np.complex128)
    if received.shape != pilot.shape:
        raise ValueError("received and pilot windows must have equal length")
    lags = np.asarray(list(search_lags), dtype=np.int64)
    if lags.size == 0:
        raise ValueError("empty search range")
    period = pilot.size
    if np.any(np.abs(lags) >= period):
        raise ValueError("search lags must stay within one window period")

    def corr(lag: int) -> float:
        return abs(np.vdot(np.roll(pilot, lag), received))

    values = np.array([corr(int(d)) for d in lags])
    best = int(np.argmax(values))
    peak_lag = int(lags[best])
    left, mid, right = corr(peak_lag - 1), values[best], corr(peak_lag + 1)
    denom = left - 2.0 * mid + right
    offset = 0.0 if denom >= 0 or denom == 0.0 else 0.5 * (left - right) / denom
    return float(peak_lag + np.clip(offset, -0.5, 0.5))


def _wrap_delta(delta_t: np.ndarray, size: int) -> np.ndarray:
    half = size / 2.0
    out = (np.asarray(delta_t, dtype=float) + half) % size - half
    return np.where(out <= -half, out + size, out)


class _ExactPilotModel:
    """Spectra of the delayed composite pilot, for model-matched refinement.

    The underlying waveform has jump discontinuities at integer delays (the
    rectangular symbol support cuts a nonzero trigonometric polynomial), so
    the atom is smooth in ``delta_t`` only between integers; refinement seeds
    must stay off-integer.
    """

    def __init__(self, frame: SymbolFrame, config: SystemConfig):
        self.frame = frame
        self.config = config
        self.filters = default_filter_bank(config)

    def atom(self, delta_t: float) -> np.ndarray:
        window = composite_pilot_window(self.frame, delta_t, self.config, self.filters)
        return receiver_front_end(window, self.config).freq_bins

    def stack(self, delta_ts) -> np.ndarray:
        return np.stack([self.atom(float(d)) for d in delta_ts], axis=1)


_INTEGER_GUARD = 0.05


def _off_integer(values: np.ndarray) -> np.ndarray:
    """Replace near-integer delays by guards on both sides of the jump."""
    out = []
    for value in np.atleast_1d(values):
        nearest = round(float(value))
        if abs(value - nearest) < _INTEGER_GUARD:
            out.extend([nearest - _INTEGER_GUARD, nearest + _INTEGER_GUARD])
        else:
            out.append(float(value))
    return np.asarray(out)


def _seed_grid(bound: float, step: float) -> np.ndarray:
    """Off-integer seed grid covering the prior range on both sides."""
    grid = np.arange(-bound - 0.5 - step / 2.0, bound + 0.5 + step, step)
    return _off_integer(grid)


def _ls_fit(basis: np.ndarray, target: np.ndarray):
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    return coef, target - basis @ coef


def _greedy_select(pool: np.ndarray, model: _ExactPilotModel, target: np.ndarray, count: int):
    """Pick ``count`` delays from the pool by greedy residual reduction."""
    atoms = model.stack(pool)
    chosen: list[int] = []
    for _ in range(count):
        residual_norms = np.full(pool.size, np.inf)
        for j in range(pool.size):
            if j in chosen:
                continue
            basis = atoms[:, chosen + [j]]
            _, residual = _ls_fit(basis, target)
            residual_norms[j] = np.linalg.norm(residual)
        chosen.append(int(np.argmin(residual_norms)))
    return pool[chosen]


def _refine_delays(
    delta_ts: np.ndarray, model: _ExactPilotModel, target: np.ndarray
) -> np.ndarray:
    """Polish delays by separable nonlinear least squares on the exact model."""

    def residual(dts):
        basis = model.stack(dts)
        _, res = _ls_fit(basis, target)
        return np.concatenate([res.real, res.imag])

    start = np.asarray(delta_ts, dtype=float)
    fit = scipy.optimize.least_squares(
        residual,
        start,
        method="lm",
        max_nfev=60 * max(1, start.size),
        xtol=1e-12,
        ftol=1e-12,
    )
    if np.linalg.norm(fit.fun) <= np.linalg.norm(residual(start)):
        return fit.x
    return start


def joint_estimate(
    received: ReceivedFrame,
    pilot_spectrum: np.ndarray,
    config: SystemConfig,
    params: EstimatorParams | None = None,
    frame: SymbolFrame | None = None,
) -> EstimationResult:
    """Full pipeline: solve, extract, convert, and recover channels.

    The solver's Toeplitz block is factored by the matrix pencil at a small
    candidate surplus over the user count; candidates are ranked by fitted
    amplitude.  When the pilot ``frame`` is supplied and refinement is
    enabled, the selected delays are polished against the exact delayed-pilot
    model, which removes the phase-ramp model's interference floor.

    Raises
    ------
    EstimationError
        With the failing stage recorded in ``stage``.
    """
    params = params or EstimatorParams()
    users = config.n_subbands
    size = config.fft_size
    observations = np.asarray(received.freq_bins, dtype=np.complex128)
    pilot_spectrum = np.asarray(pilot_spectrum, dtype=np.complex128)

    lam = params.lam
    if lam is None:
        lam = config.fixed_lambda()
    if lam is None:
        lam = default_lambda(math.sqrt(received.noise_var), config.n_subcarriers)

    try:
        problem = AnmProblem(
            observations=observations,
            pilot_spectrum=pilot_spectrum,
            lam=lam,
            tolerance=params.tolerance,
            max_iter=params.max_iter,
            rho=params.rho,
        )
        solution = solve(problem)
    except EstimationError:
        raise
    except Exception as exc:
        raise EstimationError(str(exc), stage="solver") from exc

    try:
        order = params.candidate_order or min(2 * users + 2, size - 1)
        candidates = pencil_candidates(solution.toeplitz(), order)
    except EstimationError:
        raise
    except Exception as exc:
        raise EstimationError(str(exc), stage="pencil") from exc

    bound = params.prior_bound if params.prior_bound is not None else float(config.filter_length)
    delta_cands = _wrap_delta(-size * candidates, size)

    try:
        if params.refine and frame is not None:
            model = _ExactPilotModel(frame, config)
            in_range = delta_cands[np.abs(delta_cands) <= bound + 1.0]
            grid = _seed_grid(bound, params.refine_grid_step)
            pool = np.unique(
                np.round(np.concatenate([_off_integer(in_range), grid]), 9)
            )
            delta_hats = _greedy_select(pool, model, observations, users)
            delta_hats = _refine_delays(delta_hats, model, observations)
            basis = model.stack(delta_hats)
            gram = basis.conj().T @ basis
            condition = np.linalg.cond(gram)
            if not condition < _MAX_GRAM_CONDITION:
                raise ConditioningError(condition)
            h_hats, _ = _ls_fit(basis, observations)
            delta_hats = _wrap_delta(delta_hats, size)
            taus = -delta_hats / size
            ls_resid = float(np.linalg.norm(observations - basis @ h_hats))
        else:
            if delta_cands.size == 0:
                raise RankDeficientError(0, users)
            if delta_cands.size < users:
                delta_cands = np.concatenate(
                    [delta_cands, np.repeat(delta_cands[0], users - delta_cands.size)]
                )
                delta_cands += np.arange(delta_cands.size) * 1e-6
            taus_all = -delta_cands / size
            ramp_atoms = pilot_spectrum[:, None] * np.stack(
                [build_steering_vector(t, config) for t in taus_all], axis=1
            )
            coef, _ = _ls_fit(ramp_atoms, observations)
            top = np.sort(np.argsort(np.abs(coef))[::-1][:users])
            taus = np.sort(taus_all[top])
            h_hats, ls_resid = ls_channels(taus, solution.g, config)
            delta_hats = np.array([tau_to_delta_t(t, config) for t in taus])
    except EstimationError:
        raise
    except Exception as exc:
        raise EstimationError(str(exc), stage="refine") from exc

    ramp_basis = pilot_spectrum[:, None] * np.stack(
        [build_steering_vector(t, config) for t in taus], axis=1
    )
    residual_norm = float(np.linalg.norm(observations - ramp_basis @ h_hats))

    return EstimationResult(
        taus=np.asarray(taus, dtype=float),
        delta_t_hats=np.asarray(delta_hats, dtype=float),
        h_hats=np.asarray(h_hats, dtype=np.complex128),
        association=np.arange(users, dtype=np.int64),
        residual_norm=residual_norm,
        out_of_range=outside_prior(delta_hats, bound),
        ls_residual=float(ls_resid),
        solver_iterations=solution.iterations,
        solver_converged=solution.converged,
    )
