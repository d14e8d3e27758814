"""Spatial-pattern enumeration, beamformer banks and zero-forcing baseband.

Each of the U users owns M candidate analog beam pairs, one per spatial
path.  A spatial pattern picks one path per user; selecting the matching
columns yields the pattern's analog precoder and combiners, and a
zero-forcing baseband precoder suppresses inter-user interference on the
resulting U x U effective channel.

Design layering per user u and path m:
  1. the optimal transmit beam of path m alone (dominant right singular
     vector of its rank-1 component, gain-stripped so zero-gain paths
     still have a direction) becomes column m's fit target
  2. the target is approximated by a single constant-modulus column
  3. the matching receive target is the MMSE combiner of the full channel
     for that beam, refitted under the received-signal covariance weight
The per-user columns are then mixed and matched across the M^U patterns.
Column m must track path m for pattern selection to mean anything, which
is why the fits are per path rather than one joint M-column fit.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import manifold
from .channel import PathSet, ScenarioConfig, steering_vector
from .exceptions import ConfigError, InvalidInputError, SingularMatrixError

logger = logging.getLogger(__name__)

MAX_PATTERNS = 2 ** 20
MAX_ZF_CONDITION = 1e12


@dataclass(frozen=True)
class SpatialPattern:
    """One path choice per user; ``index`` is 1-based, user 1 most significant."""

    index: int
    per_user: tuple[int, ...]

    def __post_init__(self):
        if self.index < 1:
            raise InvalidInputError("pattern index is 1-based")
        if any(p < 1 for p in self.per_user):
            raise InvalidInputError("path choices are 1-based")


def enumerate_patterns(M: int, U: int) -> list[SpatialPattern]:
    """All M^U spatial patterns in mixed-radix ascending order."""
    if M < 1 or U < 1:
        raise ConfigError("need at least one path and one user")
    count = M ** U
    if count > MAX_PATTERNS:
        raise ConfigError(
            f"{M}^{U} = {count} patterns exceeds the {MAX_PATTERNS} guard")
    combos = itertools.product(range(1, M + 1), repeat=U)
    return [SpatialPattern(i + 1, c) for i, c in enumerate(combos)]


def pattern_position(per_user, M: int) -> int:
    """0-based position of a per-user path tuple in enumeration order."""
    pos = 0
    for p in per_user:
        if not 1 <= p <= M:
            raise InvalidInputError(f"path index {p} outside 1..{M}")
        pos = pos * M + (p - 1)
    return pos


def selection_vector(path_index: int, M: int) -> np.ndarray:
    """Length-M binary vector with a single 1 at the (1-based) path index."""
    if not 1 <= path_index <= M:
        raise InvalidInputError(f"path index {path_index} outside 1..{M}")
    b = np.zeros(M)
    b[path_index - 1] = 1.0
    return b


def select_pattern(F_rf_full, W_rf_full, pattern: SpatialPattern):
    """Pick each user's pattern column: returns (F_rf (N_T,U), W_rf (N_R,U)).

    Column u of the outputs is column i_u of that user's full matrix,
    identical to multiplying by the corresponding selection vector.
    """
    U = len(pattern.per_user)
    if len(F_rf_full) != U or len(W_rf_full) != U:
        raise InvalidInputError("one full matrix per user is required")
    F_rf = np.stack([F_rf_full[u][:, pattern.per_user[u] - 1] for u in range(U)],
                    axis=1)
    W_rf = np.stack([W_rf_full[u][:, pattern.per_user[u] - 1] for u in range(U)],
                    axis=1)
    return F_rf, W_rf


def effective_channel(channels, W_rf, F_rf) -> np.ndarray:
    """U x U matrix with row u = w_u^H H_u F_rf."""
    U = F_rf.shape[1]
    rows = [W_rf[:, u].conj() @ (channels[u] @ F_rf) for u in range(U)]
    return np.stack(rows, axis=0)


def baseband_zf(H_eff: np.ndarray, F_rf: np.ndarray,
                pattern_index: int | None = None) -> np.ndarray:
    """Zero-forcing baseband precoder for one pattern.

    Inverts the effective channel, scales each row to unit norm, then
    applies one global scalar so the transmit power ||F_rf F_bb||_F^2
    equals the user count exactly.
    """
    H_eff = np.asarray(H_eff)
    U = H_eff.shape[0]
    if H_eff.shape != (U, U):
        raise InvalidInputError("effective channel must be square")
    s = np.linalg.svd(H_eff, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] >= MAX_ZF_CONDITION:
        raise SingularMatrixError(
            "effective channel is numerically singular", pattern_index=pattern_index)
    F_bb = np.linalg.solve(H_eff, np.eye(U, dtype=H_eff.dtype))
    F_bb /= np.linalg.norm(F_bb, axis=1, keepdims=True)
    power = np.linalg.norm(F_rf @ F_bb)
    return F_bb * (np.sqrt(U) / power)


@dataclass
class BeamformerBank:
    """Per-user full analog solutions plus all per-pattern beamformers.

    ``F_rf_full[u]`` is N_T x M (one fitted column per path), likewise
    ``W_rf_full[u]`` on the receive side; ``f_bb_full``/``w_bb_full`` hold
    the matching per-path baseband scalars.  Pattern arrays are indexed by
    pattern position: ``F_rf[i]`` is N_T x U, ``F_bb[i]`` U x U, ``W_rf[i]``
    N_R x U (column u = user u's combiner).  ``valid[i]`` is False for
    patterns whose effective channel was numerically singular; their
    baseband entries are zero and they are excluded from rate averages.
    """

    patterns: list[SpatialPattern]
    F_rf_full: np.ndarray
    W_rf_full: np.ndarray
    f_bb_full: np.ndarray
    w_bb_full: np.ndarray
    F_rf: np.ndarray
    F_bb: np.ndarray
    W_rf: np.ndarray
    valid: np.ndarray

    @property
    def users(self) -> int:
        return self.F_rf_full.shape[0]

    @property
    def paths(self) -> int:
        return self.F_rf_full.shape[2]

    def pattern_beamformers(self, i: int):
        """(F_rf, F_bb, W_rf) for 0-based pattern position i."""
        return self.F_rf[i], self.F_bb[i], self.W_rf[i]


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for a fixed integer key path."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=tuple(key)))


def build_bank(scenario: ScenarioConfig, channels: np.ndarray,
               config: manifold.AltMinConfig, paths: PathSet) -> BeamformerBank:
    """Design every user's hybrid beam pairs and assemble all patterns.

    ``channels`` stacks the U channel matrices as (U, N_R, N_T); ``paths``
    carries the per-path angles (the design assumes perfect CSI, so the
    path geometry is available to the designer).  Patterns whose
    zero-forcing step fails are marked invalid with a warning instead of
    aborting the bank.
    """
    channels = np.asarray(channels, dtype=np.complex128)
    U, M = scenario.users, scenario.paths
    n_tx, n_rx = scenario.n_tx, scenario.n_rx
    if channels.shape != (U, n_rx, n_tx):
        raise InvalidInputError(
            f"channels must be {(U, n_rx, n_tx)}, got {channels.shape}")
    if paths.users != U or paths.paths != M:
        raise InvalidInputError(
            f"path set is {paths.users}x{paths.paths}, scenario wants {U}x{M}")
    for u in range(U):
        if not np.any(channels[u]):
            raise InvalidInputError(f"channel of user {u} is zero")

    F_rf_full = np.empty((U, n_tx, M), dtype=np.complex128)
    W_rf_full = np.empty((U, n_rx, M), dtype=np.complex128)
    f_bb_full = np.empty((U, M), dtype=np.complex128)
    w_bb_full = np.empty((U, M), dtype=np.complex128)
    for u in range(U):
        for m in range(M):
            component = np.outer(steering_vector(n_rx, paths.aoa[u, m]),
                                 steering_vector(n_tx, paths.aod[u, m]).conj())
            target = manifold.optimal_precoder(component)
            pre = manifold.alt_min_precoder(
                target, 1, config, rng_stream(config.seed, u, m, 0))
            F_rf_full[u, :, m] = pre.F_rf[:, 0]
            f_bb_full[u, m] = pre.f_bb[0]
            w_target = manifold.mmse_combiner(
                channels[u], target, scenario.noise_var)
            lam = manifold.covariance_lambda_y(
                channels[u], pre.F_rf, pre.f_bb, scenario.noise_var)
            comb = manifold.alt_min_combiner(
                w_target, lam, 1, config, rng_stream(config.seed, u, m, 1))
            W_rf_full[u, :, m] = comb.W_rf[:, 0]
            w_bb_full[u, m] = comb.w_bb[0]

    patterns = enumerate_patterns(M, U)
    P = len(patterns)
    F_rf = np.empty((P, n_tx, U), dtype=np.complex128)
    F_bb = np.zeros((P, U, U), dtype=np.complex128)
    W_rf = np.empty((P, n_rx, U), dtype=np.complex128)
    valid = np.ones(P, dtype=bool)
    for i, pat in enumerate(patterns):
        F_rf[i], W_rf[i] = select_pattern(F_rf_full, W_rf_full, pat)
        H_eff = effective_channel(channels, W_rf[i], F_rf[i])
        try:
            F_bb[i] = baseband_zf(H_eff, F_rf[i], pattern_index=pat.index)
        except SingularMatrixError:
            valid[i] = False
            logger.warning("pattern %d %s has a singular effective channel; "
                           "excluded from averaging", pat.index, pat.per_user)
    return BeamformerBank(patterns=patterns, F_rf_full=F_rf_full,
                          W_rf_full=W_rf_full, f_bb_full=f_bb_full,
                          w_bb_full=w_bb_full, F_rf=F_rf, F_bb=F_bb,
                          W_rf=W_rf, valid=valid)
