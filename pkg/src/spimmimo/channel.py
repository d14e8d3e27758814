"""Clustered mmWave channel synthesis with sectorized user geometry.

Each of U users owns one equal-width angular sector of the domain
[theta_min, theta_max], both for angles of arrival and of departure.  A
user's channel is the sum of M rank-1 path contributions

    H_u = sum_m sqrt(gain_{u,m}) * a_R(aoa_{u,m}) @ a_T(aod_{u,m})^H

with unit-norm ULA steering vectors and no additional power scaling; the
operating SNR is defined as 1/noise_var with this convention.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InvalidInputError


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical scenario: array sizes, user count, paths, noise, geometry."""

    n_tx: int = 128
    n_rx: int = 9
    users: int = 8
    paths: int = 2
    noise_var: float = 0.01
    theta_min: float = 30.0
    theta_max: float = 150.0
    gains: tuple[float, ...] | None = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.users < 1 or self.paths < 1:
            raise ConfigError("users and paths must be >= 1")
        if self.users * self.paths > self.n_tx:
            raise ConfigError(
                f"users*paths = {self.users * self.paths} exceeds n_tx = {self.n_tx}"
            )
        if self.n_rx < 1:
            raise ConfigError("n_rx must be >= 1")
        if not self.theta_min < self.theta_max:
            raise ConfigError("theta_min must be < theta_max")
        if not self.noise_var > 0:
            raise ConfigError("noise_var must be > 0")
        if self.gains is not None:
            if len(self.gains) != self.paths:
                raise ConfigError(
                    f"gains must have length paths={self.paths}, got {len(self.gains)}"
                )
            if any(g < 0 for g in self.gains):
                raise ConfigError("gains must be nonnegative")

    @property
    def snr_db(self) -> float:
        return float(-10.0 * np.log10(self.noise_var))

    def with_gains(self, gains) -> "ScenarioConfig":
        return ScenarioConfig(
            n_tx=self.n_tx, n_rx=self.n_rx, users=self.users, paths=self.paths,
            noise_var=self.noise_var, theta_min=self.theta_min,
            theta_max=self.theta_max, gains=tuple(gains), seed=self.seed,
        )

    def with_noise_var(self, noise_var) -> "ScenarioConfig":
        return ScenarioConfig(
            n_tx=self.n_tx, n_rx=self.n_rx, users=self.users, paths=self.paths,
            noise_var=float(noise_var), theta_min=self.theta_min,
            theta_max=self.theta_max, gains=self.gains, seed=self.seed,
        )


@dataclass
class PathSet:
    """Per-user path geometry: angles in degrees, nonnegative gains.

    Arrays are (users, paths); row u describes user u's M paths.
    """

    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray

    @property
    def users(self) -> int:
        return self.aoa.shape[0]

    @property
    def paths(self) -> int:
        return self.aoa.shape[1]

    def restrict(self, per_user_path: np.ndarray) -> "PathSet":
        """Keep one path per user (0-based indices); result has paths=1."""
        idx = np.asarray(per_user_path)
        rows = np.arange(self.users)
        return PathSet(
            aoa=self.aoa[rows, idx][:, None].copy(),
            aod=self.aod[rows, idx][:, None].copy(),
            gains=self.gains[rows, idx][:, None].copy(),
        )


def steering_vector(n: int, angle_deg: float) -> np.ndarray:
    """Unit-norm ULA steering vector; element k is exp(-j*pi*k*sin(angle))/sqrt(n)."""
    if n < 1:
        raise InvalidInputError("steering_vector: antenna count must be >= 1")
    if not np.isfinite(angle_deg):
        raise InvalidInputError("steering_vector: angle must be finite")
    k = np.arange(n)
    phase = -1j * np.pi * k * np.sin(np.deg2rad(angle_deg))
    return np.exp(phase) / np.sqrt(n)


def partition_sectors(config: ScenarioConfig):
    """Equal-width contiguous sectors covering the angular domain.

    Returns ``(aoa_sectors, aod_sectors)``, each a list of U (lo, hi)
    tuples; interval u belongs to user u.  The same partition is used on
    both sides of the link.
    """
    edges = np.linspace(config.theta_min, config.theta_max, config.users + 1)
    sectors = [(float(edges[u]), float(edges[u + 1])) for u in range(config.users)]
    return sectors, list(sectors)


def draw_paths(config: ScenarioConfig, rng: np.random.Generator,
               gains=None) -> PathSet:
    """Draw a PathSet: angles uniform within each user's sector.

    ``gains`` overrides the scenario gains with fixed per-path values
    shared by all users.  If neither is given, gains are i.i.d. U(0,1).
    """
    if gains is None:
        gains = config.gains
    U, M = config.users, config.paths
    aoa_sectors, aod_sectors = partition_sectors(config)
    aoa = np.empty((U, M))
    aod = np.empty((U, M))
    for u in range(U):
        lo, hi = aoa_sectors[u]
        aoa[u] = rng.uniform(lo, hi, size=M)
        lo, hi = aod_sectors[u]
        aod[u] = rng.uniform(lo, hi, size=M)
    if gains is not None:
        gains = np.asarray(gains, dtype=float)
        if gains.shape != (M,) or np.any(gains < 0):
            raise InvalidInputError(
                f"fixed gains must be {M} nonnegative values, got {gains!r}"
            )
        g = np.tile(gains, (U, 1))
    else:
        g = rng.uniform(0.0, 1.0, size=(U, M))
    return PathSet(aoa=aoa, aod=aod, gains=g)


def path_component(paths: PathSet, user: int, m: int,
                   config: ScenarioConfig) -> np.ndarray:
    """Rank-1 contribution of path m to user u's channel."""
    a_r = steering_vector(config.n_rx, paths.aoa[user, m])
    a_t = steering_vector(config.n_tx, paths.aod[user, m])
    return np.sqrt(paths.gains[user, m]) * np.outer(a_r, a_t.conj())


def synthesize_channel(paths: PathSet, user: int,
                       config: ScenarioConfig) -> np.ndarray:
    """Sum of rank-1 path contributions: an (n_rx, n_tx) complex matrix."""
    H = np.zeros((config.n_rx, config.n_tx), dtype=np.complex128)
    for m in range(paths.paths):
        H += path_component(paths, user, m, config)
    return H


def synthesize_all(paths: PathSet, config: ScenarioConfig) -> list[np.ndarray]:
    """Channels for every user, in user order."""
    return [synthesize_channel(paths, u, config) for u in range(config.users)]
