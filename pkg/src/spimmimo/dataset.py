"""Per-user training data: channel tensors in, beamformer labels out.

A sample pairs a (possibly noise-corrupted) channel tensor with the
clean-design beamformer label for one uniformly drawn spatial pattern.
Samples live in float64 while in memory so regenerating a label from the
clean channel reproduces it to 1e-10; the on-disk format stores float32.
Loading promotes float32 exactly, so save -> load -> save is
byte-identical.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import channel, manifold, spim
from .channel import ScenarioConfig
from .exceptions import (EvaluationError, FormatError, InvalidInputError,
                         SingularMatrixError)
from .spim import SpatialPattern

MAGIC = b"SPIMDS01"
_HEADER = struct.Struct("<6I")      # N_R, N_T, C, U, M, sample_count
_SAMPLE_HEAD = struct.Struct("<If")  # 1-based pattern index, snr_train dB

# substream namespaces under the scenario seed; chosen clear of the
# bank-design keys (user, path, side) and the sweep trial keys (1, trial)
_NS_PATHS = 101
_NS_SAMPLES = 102
_NS_SPLIT = 103

# fresh path draws allowed before a realization is declared hopeless
MAX_REDRAWS = 64


@dataclass(frozen=True)
class DatasetMeta:
    """Generation controls for one user's local dataset.

    ``realizations`` (N) clean channel draws, each corrupted ``copies``
    (G) times per SNR level, give ``per_user`` = len(levels) * N * G
    samples; ``split`` is the validation fraction.
    """

    realizations: int
    copies: int
    snr_train_levels: tuple
    split: float = 0.2

    def __post_init__(self):
        if self.realizations < 1 or self.copies < 1:
            raise InvalidInputError("realizations and copies must be >= 1")
        if len(self.snr_train_levels) == 0:
            raise InvalidInputError("need at least one SNR_TRAIN level")
        for lv in self.snr_train_levels:
            if math.isnan(lv) or lv == -math.inf:
                raise InvalidInputError(f"bad SNR_TRAIN level {lv}")
        if not 0.0 < self.split < 1.0:
            raise InvalidInputError("split must lie in (0, 1)")

    @property
    def per_user(self) -> int:
        return len(self.snr_train_levels) * self.realizations * self.copies

    def total(self, users: int) -> int:
        return users * self.per_user


@dataclass
class Sample:
    """One training pair: input tensor X, label vector Y."""

    X: np.ndarray           # (N_R, N_T, C) real
    Y: np.ndarray           # (2*N_T*U + N_R,) real
    user: int
    pattern: SpatialPattern
    snr_train: float


@dataclass
class LocalDataset:
    """All samples generated for one user, plus the shared dimensions."""

    user: int
    n_rx: int
    n_tx: int
    planes: int             # input planes C (3, or 4 with pattern plane)
    users: int
    paths: int
    samples: list

    @property
    def label_len(self) -> int:
        return 2 * self.n_tx * self.users + self.n_rx


def pattern_plane_value(pattern: SpatialPattern, pattern_count: int) -> float:
    """Constant for the pattern-conditioning plane: (i-1)/(M^U - 1)."""
    if pattern_count <= 1:
        return 0.0
    return (pattern.index - 1) / (pattern_count - 1)


def build_input(H: np.ndarray, pattern: SpatialPattern | None = None,
                pattern_count: int | None = None) -> np.ndarray:
    """Stack real part, imaginary part and phase planes of a channel.

    With ``pattern`` given, a fourth constant plane encodes the pattern
    index so one model can serve all patterns; ``pattern_count`` must
    then be the total number of patterns.
    """
    H = np.asarray(H, dtype=complex)
    if not np.all(np.isfinite(H)):
        raise InvalidInputError("channel matrix has non-finite entries")
    ang = np.angle(H)
    # np.angle can return -pi for negative-zero imaginary parts; fold it
    ang = np.where(ang <= -np.pi, np.pi, ang)
    planes = [H.real, H.imag, ang]
    if pattern is not None:
        if pattern_count is None:
            raise InvalidInputError("pattern plane needs the pattern count")
        planes.append(np.full(H.shape, pattern_plane_value(pattern,
                                                           pattern_count)))
    return np.stack(planes, axis=-1).astype(np.float64)


def build_label(F_rf: np.ndarray, F_bb: np.ndarray,
                w_rf: np.ndarray) -> np.ndarray:
    """[vec(Re F); vec(Im F); angle(w)] for F = F_rf @ F_bb, column-major."""
    F = np.asarray(F_rf) @ np.asarray(F_bb)
    w = np.asarray(w_rf)
    label = np.concatenate([F.real.flatten(order="F"),
                            F.imag.flatten(order="F"),
                            np.angle(w)]).astype(np.float64)
    if not np.all(np.isfinite(label)):
        raise InvalidInputError("label has non-finite entries")
    return label


def decode_label(label: np.ndarray, n_tx: int, users: int, n_rx: int):
    """Invert build_label; the combiner modulus is re-imposed as 1/sqrt(N_R)."""
    label = np.asarray(label, dtype=np.float64)
    expected = 2 * n_tx * users + n_rx
    if label.shape != (expected,):
        raise InvalidInputError(
            f"label length {label.shape} does not match {expected}")
    block = n_tx * users
    re = label[:block].reshape((n_tx, users), order="F")
    im = label[block:2 * block].reshape((n_tx, users), order="F")
    w = np.exp(1j * label[2 * block:]) / np.sqrt(n_rx)
    return re + 1j * im, w


def corrupt(H: np.ndarray, snr_train_db: float,
            rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise at the given input SNR.

    Per-entry noise variance is ||H||_F^2 / (N_R*N_T*10^(snr/10)); the
    +inf sentinel means no corruption.
    """
    H = np.asarray(H, dtype=complex)
    if math.isnan(snr_train_db) or snr_train_db == -math.inf:
        raise InvalidInputError(f"bad SNR_TRAIN {snr_train_db}")
    if snr_train_db == math.inf:
        return H.copy()
    var = float(np.linalg.norm(H) ** 2 / (H.size * 10.0 ** (snr_train_db / 10.0)))
    scale = np.sqrt(var / 2.0)
    noise = (rng.standard_normal(H.shape) +
             1j * rng.standard_normal(H.shape)) * scale
    return H + noise


def pattern_from_index(index: int, M: int, U: int) -> SpatialPattern:
    """Rebuild the per-user path choices from a 1-based pattern index."""
    count = M ** U
    if not 1 <= index <= count:
        raise InvalidInputError(f"pattern index {index} outside 1..{count}")
    rem = index - 1
    per_user = []
    for u in range(U):
        radix = M ** (U - 1 - u)
        per_user.append(rem // radix + 1)
        rem %= radix
    return SpatialPattern(index, tuple(per_user))


def _design_realization(scenario: ScenarioConfig,
                        config: manifold.AltMinConfig, user: int, r: int):
    """Draw paths and design a bank, redrawing until every pattern is valid."""
    for attempt in range(MAX_REDRAWS):
        rng = spim.rng_stream(scenario.seed, _NS_PATHS, user, r, attempt)
        paths = channel.draw_paths(scenario, rng)
        channels = np.asarray(channel.synthesize_all(paths, scenario))
        try:
            bank = spim.build_bank(scenario, channels, config, paths)
        except SingularMatrixError:
            continue
        if bank.valid.all():
            return paths, channels, bank
    raise EvaluationError(
        f"user {user} realization {r}: no fully valid bank in "
        f"{MAX_REDRAWS} path draws")


def generate_local(user: int, scenario: ScenarioConfig,
                   config: manifold.AltMinConfig, meta: DatasetMeta,
                   fixed_pattern: int | None = None) -> LocalDataset:
    """Generate one user's dataset of (corrupted input, clean label) pairs.

    Each realization draws a fresh multi-user path set from a substream
    keyed by (seed, user, realization), designs the bank from the clean
    channels, and emits copies * len(levels) samples whose inputs are
    corrupted copies of this user's channel.  By default the pattern is
    drawn uniformly per sample and encoded as a fourth input plane; with
    ``fixed_pattern`` every sample uses that pattern and the input keeps
    three planes (one model per pattern).
    """
    if not 0 <= user < scenario.users:
        raise InvalidInputError(f"user {user} outside 0..{scenario.users - 1}")
    count = scenario.paths ** scenario.users
    if fixed_pattern is not None and not 1 <= fixed_pattern <= count:
        raise InvalidInputError(
            f"fixed pattern {fixed_pattern} outside 1..{count}")

    samples = []
    for r in range(meta.realizations):
        _, channels, bank = _design_realization(scenario, config, user, r)
        srng = spim.rng_stream(scenario.seed, _NS_SAMPLES, user, r)
        H_u = channels[user]
        for level in meta.snr_train_levels:
            for _ in range(meta.copies):
                if fixed_pattern is None:
                    i = int(srng.integers(count))
                else:
                    i = fixed_pattern - 1
                pat = bank.patterns[i]
                noisy = corrupt(H_u, level, srng)
                X = build_input(
                    noisy, None if fixed_pattern is not None else pat, count)
                F_rf, F_bb, W_rf = bank.pattern_beamformers(i)
                Y = build_label(F_rf, F_bb, W_rf[:, user])
                samples.append(Sample(X, Y, user, pat, float(level)))
    return LocalDataset(user=user, n_rx=scenario.n_rx, n_tx=scenario.n_tx,
                        planes=3 if fixed_pattern is not None else 4,
                        users=scenario.users, paths=scenario.paths,
                        samples=samples)


def split_indices(count: int, split: float, seed: int):
    """Deterministic (train, validation) index split.

    A pure function of (seed, count); both sides are non-empty whenever
    count >= 2.
    """
    if not 0.0 < split < 1.0:
        raise InvalidInputError("split must lie in (0, 1)")
    if count < 2:
        return np.arange(count), np.arange(0)
    perm = spim.rng_stream(seed, _NS_SPLIT, count).permutation(count)
    n_val = min(max(int(round(split * count)), 1), count - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def save(ds: LocalDataset, path) -> None:
    """Write the binary dataset file (little-endian, float32 payload)."""
    xlen = ds.n_rx * ds.n_tx * ds.planes
    ylen = ds.label_len
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(ds.n_rx, ds.n_tx, ds.planes, ds.users,
                              ds.paths, len(ds.samples)))
        for k, s in enumerate(ds.samples):
            if s.X.shape != (ds.n_rx, ds.n_tx, ds.planes):
                raise InvalidInputError(
                    f"sample {k}: X shape {s.X.shape} does not match header")
            if s.Y.shape != (ylen,):
                raise InvalidInputError(
                    f"sample {k}: Y length {s.Y.shape} does not match header")
            fh.write(_SAMPLE_HEAD.pack(s.pattern.index, s.snr_train))
            fh.write(np.ascontiguousarray(s.X, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.Y, dtype="<f4").tobytes())


def load(path, user: int = 0) -> LocalDataset:
    """Read a dataset file back; ``user`` tags the samples (not stored)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic in {path}", offset=0)
    if len(data) < len(MAGIC) + _HEADER.size:
        raise FormatError(
            f"truncated header: expected {len(MAGIC) + _HEADER.size} bytes, "
            f"got {len(data)}", offset=len(data))
    n_rx, n_tx, planes, users, paths, count = _HEADER.unpack_from(
        data, len(MAGIC))
    if min(n_rx, n_tx, users, paths) < 1 or planes not in (3, 4):
        raise FormatError(
            f"implausible header dims ({n_rx}, {n_tx}, {planes}, {users}, "
            f"{paths})", offset=len(MAGIC))
    xlen = n_rx * n_tx * planes
    ylen = 2 * n_tx * users + n_rx
    per = _SAMPLE_HEAD.size + 4 * (xlen + ylen)
    expected = len(MAGIC) + _HEADER.size + count * per
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for {count} samples, got {len(data)}",
            offset=min(len(data), expected))
    pattern_count = paths ** users
    samples = []
    offset = len(MAGIC) + _HEADER.size
    for k in range(count):
        index, snr = _SAMPLE_HEAD.unpack_from(data, offset)
        offset += _SAMPLE_HEAD.size
        if not 1 <= index <= pattern_count:
            raise FormatError(
                f"sample {k}: pattern index {index} outside 1.."
                f"{pattern_count}", offset=offset - _SAMPLE_HEAD.size)
        X = np.frombuffer(data, "<f4", xlen, offset).astype(np.float64)
        offset += 4 * xlen
        Y = np.frombuffer(data, "<f4", ylen, offset).astype(np.float64)
        offset += 4 * ylen
        samples.append(Sample(X.reshape(n_rx, n_tx, planes), Y, user,
                              pattern_from_index(index, paths, users),
                              float(snr)))
    return LocalDataset(user=user, n_rx=n_rx, n_tx=n_tx, planes=planes,
                        users=users, paths=paths, samples=samples)
