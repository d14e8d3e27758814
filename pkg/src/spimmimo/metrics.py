"""Spectral-efficiency metrics and Monte Carlo sweeps.

Rates are pattern-averaged sums of per-user log2(1 + SINR), plus
U*log2(M) index bits for methods that convey information through the
choice of spatial pattern.  Three designs are compared:

  spim-mo  model-based hybrid design evaluated over every spatial pattern
  mmwave   the same pipeline restricted to each user's strongest path
           (no pattern switching, no index bits)
  wang     steering-vector analog beams from genie path angles with one
           zero-forcing baseband precoder frozen at the strongest-path
           pattern and reused for all patterns

Sweeps run independent trials with per-trial RNG streams and reduce with
ordered means, so results do not depend on worker count.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import manifold, spim
from .channel import PathSet, ScenarioConfig, draw_paths, steering_vector, synthesize_all
from .exceptions import EvaluationError, InvalidInputError, SingularMatrixError

SWEEP_METHODS = ("spim-mo", "mmwave", "wang")


@dataclass
class RateReport:
    """Per-pattern SINRs and the aggregated spectral efficiency.

    ``sinr`` has one row per evaluated pattern (linear scale, one column
    per user) and ``pattern_se`` the matching per-pattern sum rates;
    ``pattern_indices`` holds their 1-based pattern indices.  ``total_se``
    is index_bits plus the mean of ``pattern_se``.
    """

    method: str
    sinr: np.ndarray
    pattern_se: np.ndarray
    pattern_indices: np.ndarray
    index_bits: float
    total_se: float


def sinr(u: int, H_u, F_rf, F_bb, w, sigma_n_sq: float) -> float:
    """Linear SINR of user u under a linear combiner w.

    signal = |w^H H_u (F_rf F_bb) e_u|^2, interference sums the other
    columns, and the noise term is sigma_n_sq * ||w||^2.
    """
    eff = w.conj() @ (H_u @ (F_rf @ F_bb))
    powers = np.abs(eff) ** 2
    sig = float(powers[u])
    interf = max(float(np.sum(powers)) - sig, 0.0)
    noise = sigma_n_sq * float(np.real(np.vdot(w, w)))
    return sig / (interf + noise)


def rate_from_bank(bank: spim.BeamformerBank, channels, sigma_n_sq: float,
                   include_index_bits: bool, method: str,
                   patterns=None) -> RateReport:
    """Evaluate a beamformer bank on (possibly different) channels.

    ``patterns`` optionally restricts evaluation to the given 0-based
    pattern positions; invalid (singular) patterns are always skipped.
    """
    U, M = bank.users, bank.paths
    positions = range(len(bank.patterns)) if patterns is None else patterns
    used = [i for i in positions if bank.valid[i]]
    if not used:
        raise EvaluationError("no valid spatial patterns to average over")
    sinr_rows = np.empty((len(used), U))
    for row, i in enumerate(used):
        F_rf, F_bb, W_rf = bank.pattern_beamformers(i)
        for u in range(U):
            sinr_rows[row, u] = sinr(u, channels[u], F_rf, F_bb,
                                     W_rf[:, u], sigma_n_sq)
    pattern_se = np.log2(1.0 + sinr_rows).sum(axis=1)
    index_bits = U * np.log2(M) if include_index_bits else 0.0
    total = float(index_bits + np.mean(pattern_se))
    return RateReport(
        method=method, sinr=sinr_rows, pattern_se=pattern_se,
        pattern_indices=np.array([bank.patterns[i].index for i in used]),
        index_bits=float(index_bits), total_se=total,
    )


def spim_rate(bank: spim.BeamformerBank, channels, sigma_n_sq: float,
              include_index_bits: bool = True, patterns=None,
              method: str = "spim-mo") -> RateReport:
    """Pattern-averaged spectral efficiency of a designed bank."""
    return rate_from_bank(bank, channels, sigma_n_sq, include_index_bits,
                          method, patterns)


def _restricted_scenario(scenario: ScenarioConfig, sigma_n_sq: float) -> ScenarioConfig:
    return replace(scenario, paths=1, gains=(1.0,), noise_var=sigma_n_sq)


def mmwave_rate(scenario: ScenarioConfig, channels, paths: PathSet,
                config: manifold.AltMinConfig,
                sigma_n_sq: float | None = None) -> RateReport:
    """Strongest-path hybrid design, evaluated on the true channels.

    Per user the single path with the largest gain is kept (ties break to
    the lowest path index); the bank is designed on those rank-1 channels
    and carries no index bits.
    """
    if sigma_n_sq is None:
        sigma_n_sq = scenario.noise_var
    strongest = np.argmax(paths.gains, axis=1)
    restricted = paths.restrict(strongest)
    sub = _restricted_scenario(scenario, sigma_n_sq)
    design_channels = synthesize_all(restricted, sub)
    bank = spim.build_bank(sub, np.asarray(design_channels), config, restricted)
    report = rate_from_bank(bank, channels, sigma_n_sq,
                            include_index_bits=False, method="mmwave")
    return report


def wang_rate(scenario: ScenarioConfig, channels, paths: PathSet,
              sigma_n_sq: float | None = None,
              include_index_bits: bool = True) -> RateReport:
    """Steering-vector analog beams with one frozen baseband precoder.

    Analog columns are the exact transmit/receive steering vectors of the
    genie path angles.  Zero-forcing runs once, at the pattern built from
    each user's strongest path, and that baseband matrix is reused
    unchanged for every other pattern.  Reuse skips the per-pattern ZF
    redesign, not the transmit power budget: each transmitted pattern is
    still scaled so that ||F_RF F_BB||_F^2 = U, otherwise the stale
    baseband radiates more than the power constraint allows on patterns
    whose analog columns correlate differently than the anchor's.
    """
    if sigma_n_sq is None:
        sigma_n_sq = scenario.noise_var
    U, M = scenario.users, scenario.paths
    channels = np.asarray(channels)
    F_full = np.empty((U, scenario.n_tx, M), dtype=np.complex128)
    W_full = np.empty((U, scenario.n_rx, M), dtype=np.complex128)
    for u in range(U):
        for m in range(M):
            F_full[u, :, m] = steering_vector(scenario.n_tx, paths.aod[u, m])
            W_full[u, :, m] = steering_vector(scenario.n_rx, paths.aoa[u, m])

    strongest = np.argmax(paths.gains, axis=1)
    anchor = spim.SpatialPattern(
        spim.pattern_position(tuple(int(m) + 1 for m in strongest), M) + 1,
        tuple(int(m) + 1 for m in strongest))
    F_rf_a, W_rf_a = spim.select_pattern(F_full, W_full, anchor)
    H_eff_a = spim.effective_channel(channels, W_rf_a, F_rf_a)
    try:
        F_bb = spim.baseband_zf(H_eff_a, F_rf_a, pattern_index=anchor.index)
    except SingularMatrixError as exc:
        raise EvaluationError(
            f"anchor pattern {anchor.per_user} is singular: {exc}") from exc

    pats = spim.enumerate_patterns(M, U)
    sinr_rows = np.empty((len(pats), U))
    for i, pat in enumerate(pats):
        F_rf, W_rf = spim.select_pattern(F_full, W_full, pat)
        scale = np.sqrt(U) / np.linalg.norm(F_rf @ F_bb)
        for u in range(U):
            sinr_rows[i, u] = sinr(u, channels[u], F_rf, scale * F_bb,
                                   W_rf[:, u], sigma_n_sq)
    pattern_se = np.log2(1.0 + sinr_rows).sum(axis=1)
    index_bits = U * np.log2(M) if include_index_bits else 0.0
    return RateReport(
        method="wang", sinr=sinr_rows, pattern_se=pattern_se,
        pattern_indices=np.array([p.index for p in pats]),
        index_bits=float(index_bits),
        total_se=float(index_bits + np.mean(pattern_se)),
    )


@dataclass
class SweepRow:
    """One (grid point, method) cell of a Monte Carlo sweep."""

    x: float
    method: str
    mean_se: float
    std_se: float
    trials: int
    seed: int


def snr_db_to_noise_var(snr_db: float) -> float:
    """Operating convention: SNR = 1/noise_var."""
    return float(10.0 ** (-snr_db / 10.0))


def _method_rates(scenario, channels, paths, methods, config,
                  include_index_bits):
    out = {}
    if "spim-mo" in methods:
        bank = spim.build_bank(scenario, channels, config, paths)
        out["spim-mo"] = spim_rate(bank, channels, scenario.noise_var,
                                   include_index_bits).total_se
    if "mmwave" in methods:
        out["mmwave"] = mmwave_rate(scenario, channels, paths, config).total_se
    if "wang" in methods:
        out["wang"] = wang_rate(scenario, channels, paths,
                                include_index_bits=include_index_bits).total_se
    return out


def run_trial(kind: str, grid, scenario: ScenarioConfig, methods, config,
              trial: int, include_index_bits: bool = True) -> np.ndarray:
    """SE matrix (len(grid) x len(methods)) for one independent trial.

    The trial owns stream (seed, trial); angles are drawn once and reused
    across the grid so each curve varies only in the swept quantity.
    """
    rng = spim.rng_stream(scenario.seed, 1, trial)
    base_paths = draw_paths(scenario, rng)
    out = np.empty((len(grid), len(methods)))
    for gi, x in enumerate(grid):
        if kind == "snr":
            sc = scenario.with_noise_var(snr_db_to_noise_var(x))
            paths = base_paths
        elif kind == "gamma1":
            if scenario.paths != 2:
                raise InvalidInputError("gamma1 sweep requires paths = 2")
            if not 0.0 <= x <= 1.0:
                raise InvalidInputError("gamma1 grid values must lie in [0, 1]")
            gains = np.tile([x, 1.0 - x], (scenario.users, 1))
            paths = PathSet(aoa=base_paths.aoa, aod=base_paths.aod, gains=gains)
            sc = scenario
        else:
            raise InvalidInputError(f"unknown sweep kind {kind!r}")
        channels = np.asarray(synthesize_all(paths, sc))
        rates = _method_rates(sc, channels, paths, methods, config,
                              include_index_bits)
        for mi, m in enumerate(methods):
            out[gi, mi] = rates[m]
    return out


def sweep(kind: str, grid, trials: int, scenario: ScenarioConfig,
          methods=SWEEP_METHODS, config: manifold.AltMinConfig | None = None,
          include_index_bits: bool = True, trial_results=None) -> list[SweepRow]:
    """Monte Carlo sweep over SNR (dB) or the first path gain.

    ``trial_results`` may supply precomputed per-trial matrices (as
    returned by :func:`run_trial`, in trial order) so callers can
    parallelize trials; the reduction here is an ordered mean either way.
    """
    grid = list(grid)
    methods = list(methods)
    if not grid or trials < 1:
        raise InvalidInputError("need a nonempty grid and trials >= 1")
    unknown = set(methods) - set(SWEEP_METHODS)
    if unknown:
        raise InvalidInputError(f"unknown methods: {sorted(unknown)}")
    if config is None:
        config = manifold.AltMinConfig(seed=scenario.seed)
    if trial_results is None:
        trial_results = [
            run_trial(kind, grid, scenario, methods, config, t,
                      include_index_bits)
            for t in range(trials)
        ]
    stack = np.stack(list(trial_results), axis=0)
    if stack.shape != (trials, len(grid), len(methods)):
        raise InvalidInputError(
            f"trial results have shape {stack.shape}, "
            f"expected {(trials, len(grid), len(methods))}")
    mean = stack.mean(axis=0)
    # spread of per-trial SE around the mean (population convention)
    std = stack.std(axis=0, ddof=0)
    rows = []
    for gi, x in enumerate(grid):
        for mi, m in enumerate(methods):
            rows.append(SweepRow(x=float(x), method=m,
                                 mean_se=float(mean[gi, mi]),
                                 std_se=float(std[gi, mi]),
                                 trials=trials, seed=scenario.seed))
    return rows
