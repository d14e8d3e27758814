"""Round-synchronous federated training, centralized baseline, overhead.

Each round broadcasts the active parameters, lets every user compute one
mini-batch gradient under a shared dropout mask, averages the gradients
and applies a server-side momentum step.  The overhead ledgers follow
the closed-form accounting (2*P*T*U for federated, dataset upload for
centralized) with whole 1000-symbol transmission blocks.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import channel, dataset, manifold, metrics, neural, spim
from .channel import ScenarioConfig
from .exceptions import (ConfigError, EvaluationError, InvalidInputError,
                         ProtocolError, SingularMatrixError)

BLOCK_SIZE = 1000

# substream namespaces under the training seed
_NS_BATCH = 301
_NS_BATCH_CL = 302
_NS_EVAL = 303


@dataclass
class OverheadLedger:
    """Non-decreasing symbol counters for one training scheme."""

    scheme: str
    uplink_symbols: int = 0
    downlink_symbols: int = 0

    def add(self, uplink: int, downlink: int) -> None:
        if uplink < 0 or downlink < 0:
            raise InvalidInputError("ledger increments must be nonnegative")
        self.uplink_symbols += int(uplink)
        self.downlink_symbols += int(downlink)

    @property
    def total_symbols(self) -> int:
        return self.uplink_symbols + self.downlink_symbols

    @property
    def blocks(self) -> int:
        return -(-self.total_symbols // BLOCK_SIZE)


@dataclass
class RoundRecord:
    """One row of the training log."""

    round_index: int
    val_mse: float
    uplink_symbols: int
    downlink_symbols: int
    cum_blocks: int


def overhead_fl(P: int, T: int, U: int) -> int:
    """Symbols to exchange P parameters both ways for T rounds, U users."""
    if P < 0 or T < 0 or U < 0:
        raise InvalidInputError("overhead arguments must be nonnegative")
    return 2 * P * T * U


def overhead_cl(n_tx: int, n_rx: int, users: int, n_samples: int) -> int:
    """Symbols to upload the training dataset to the base station."""
    if min(n_tx, n_rx, users) < 1 or n_samples < 0:
        raise InvalidInputError("bad overhead arguments")
    return (3 * n_tx * n_rx + 2 * n_tx * users + n_rx) * n_samples


def local_gradient(params: neural.ModelParams, batch: list,
                   mask: np.ndarray | None):
    """Mean gradient over one user's mini-batch.

    Returns (grad, loss, moments); moments feed the shared normalization
    buffers.  Masked coordinates come back exactly zero.
    """
    if len(batch) == 0:
        raise ConfigError("empty batch: user has no local data")
    Xb = np.stack([s.X for s in batch])
    labels = np.stack([s.Y for s in batch])
    return neural.gradient_batch(params, Xb, labels, mask)


def aggregate(params: neural.ModelParams, velocity: np.ndarray,
              gradients: dict, expected_users, config: neural.TrainConfig):
    """Average all users' gradients and take one momentum step.

    Every expected user must be present; partial aggregation is refused.
    """
    missing = [u for u in expected_users if u not in gradients]
    if missing:
        raise ProtocolError(f"missing gradient from users {missing}")
    order = sorted(expected_users)
    mean_grad = sum(gradients[u] for u in order) / len(order)
    theta, velocity = neural.sgd_momentum_step(
        params.theta, velocity, mean_grad.astype(params.theta.dtype), config)
    return neural.ModelParams(params.arch, theta, params.running_mean,
                              params.running_var), velocity


def _check_datasets(datasets: list, arch: neural.NetworkArch):
    if not datasets:
        raise ConfigError("no datasets given")
    ref = datasets[0]
    users = sorted(ds.user for ds in datasets)
    if users != list(range(ref.users)):
        raise ProtocolError(
            f"need one dataset per user 0..{ref.users - 1}, got {users}")
    for ds in datasets:
        if (ds.n_rx, ds.n_tx, ds.planes, ds.users, ds.paths) != \
                (ref.n_rx, ref.n_tx, ref.planes, ref.users, ref.paths):
            raise ConfigError("datasets disagree on dimensions")
        if not ds.samples:
            raise ConfigError(f"user {ds.user} has no samples")
    want = (ref.n_rx, ref.n_tx, ref.planes, ref.label_len)
    got = (arch.in_rows, arch.in_cols, arch.in_planes, arch.out_dim)
    if want != got:
        raise ConfigError(f"arch dims {got} do not match dataset {want}")
    return sorted(datasets, key=lambda ds: ds.user)


def _stack(samples: list):
    return (np.stack([s.X for s in samples]),
            np.stack([s.Y for s in samples]))


def dataset_mse(params: neural.ModelParams, Xb: np.ndarray,
                labels: np.ndarray, chunk: int = 512) -> float:
    """Mean squared error over a sample set, inference mode."""
    total = 0.0
    for lo in range(0, Xb.shape[0], chunk):
        y = neural.forward_batch(params, Xb[lo:lo + chunk])
        diff = y - labels[lo:lo + chunk]
        total += float((diff * diff).mean(axis=1).sum())
    return total / Xb.shape[0]


def _batch_indices(train_idx: np.ndarray, batch_size: int,
                   rng: np.random.Generator) -> np.ndarray:
    if train_idx.size <= batch_size:
        return train_idx
    return train_idx[rng.choice(train_idx.size, batch_size, replace=False)]


def train_fl(datasets: list, arch: neural.NetworkArch,
             config: neural.TrainConfig, rounds: int, seed: int,
             split: float = 0.2):
    """Federated training; returns (params, velocity, ledger, history).

    Per round: one shared dropout mask from (seed, round), one fresh
    mini-batch per user, gradient averaging with server momentum, running
    buffer update from the pooled batch statistics, validation MSE over
    the held-out slice of every user's data.  The ledger adds
    2 * active-parameter-count symbols per user per round.
    """
    datasets = _check_datasets(datasets, arch)
    if rounds < 1:
        raise InvalidInputError("rounds must be >= 1")
    users = [ds.user for ds in datasets]
    per_user = []
    val_parts = []
    for ds in datasets:
        train_idx, val_idx = dataset.split_indices(len(ds.samples), split,
                                                   seed)
        Xb, labels = _stack(ds.samples)
        per_user.append((Xb, labels, train_idx))
        if val_idx.size:
            val_parts.append((Xb[val_idx], labels[val_idx]))
    if not val_parts:
        raise ConfigError("validation split is empty for every user")
    val_X = np.concatenate([p[0] for p in val_parts])
    val_labels = np.concatenate([p[1] for p in val_parts])

    params = neural.init_params(arch, seed)
    velocity = np.zeros_like(params.theta)
    ledger = OverheadLedger("fl-dropout" if arch.dropout > 0 else "fl-full")
    history = []
    for t in range(1, rounds + 1):
        mask = neural.draw_mask(seed, t, arch.fc_in, arch.dropout)
        gradients = {}
        moments = []
        for u, (Xb, labels, train_idx) in zip(users, per_user):
            rng = spim.rng_stream(seed, _NS_BATCH, t, u)
            picked = _batch_indices(train_idx, config.batch_size, rng)
            grad, _, mom = neural.gradient_batch(params, Xb[picked],
                                                 labels[picked], mask)
            gradients[u] = grad
            moments.append(mom)
        params, velocity = aggregate(params, velocity, gradients, users,
                                     config)
        neural.update_buffers(params, neural.merge_moments(moments),
                              config.buffer_momentum)
        active = neural.active_param_count(arch, mask)
        ledger.add(uplink=active * len(users), downlink=active * len(users))
        history.append(RoundRecord(t, dataset_mse(params, val_X, val_labels),
                                   ledger.uplink_symbols,
                                   ledger.downlink_symbols, ledger.blocks))
    return params, velocity, ledger, history


def train_cl(datasets: list, arch: neural.NetworkArch,
             config: neural.TrainConfig, rounds: int, seed: int,
             split: float = 0.2):
    """Centralized baseline on the pooled data.

    One mini-batch step per round (mirrors the federated schedule).  The
    ledger counts the one-time dataset upload only.
    """
    datasets = _check_datasets(datasets, arch)
    if rounds < 1:
        raise InvalidInputError("rounds must be >= 1")
    samples = [s for ds in datasets for s in ds.samples]
    Xb, labels = _stack(samples)
    train_idx, val_idx = dataset.split_indices(len(samples), split, seed)
    if val_idx.size == 0:
        raise ConfigError("validation split is empty")

    ref = datasets[0]
    ledger = OverheadLedger("cl")
    ledger.add(uplink=overhead_cl(ref.n_tx, ref.n_rx, ref.users,
                                  len(samples)), downlink=0)

    params = neural.init_params(arch, seed)
    velocity = np.zeros_like(params.theta)
    history = []
    for t in range(1, rounds + 1):
        mask = neural.draw_mask(seed, t, arch.fc_in, arch.dropout)
        rng = spim.rng_stream(seed, _NS_BATCH_CL, t)
        picked = _batch_indices(train_idx, config.batch_size, rng)
        grad, _, moments = neural.gradient_batch(params, Xb[picked],
                                                 labels[picked], mask)
        theta, velocity = neural.sgd_momentum_step(params.theta, velocity,
                                                   grad, config)
        params = neural.ModelParams(arch, theta, params.running_mean,
                                    params.running_var)
        neural.update_buffers(params, moments, config.buffer_momentum)
        history.append(RoundRecord(t, dataset_mse(params, Xb[val_idx],
                                                  labels[val_idx]),
                                   ledger.uplink_symbols,
                                   ledger.downlink_symbols, ledger.blocks))
    return params, velocity, ledger, history


def predicted_rate(params: neural.ModelParams, scenario: ScenarioConfig,
                   channels: np.ndarray, sigma_n_sq: float,
                   include_index_bits: bool = True,
                   input_rng: np.random.Generator | None = None,
                   input_snr_db: float = math.inf) -> metrics.RateReport:
    """Spectral efficiency of model-predicted beamformers.

    For each spatial pattern every user feeds its own channel tensor to
    the model; the base station takes user u's own precoder column from
    user u's prediction, rescales the assembled precoder to the transmit
    power budget, and each user combines with its own predicted analog
    combiner.  ``input_snr_db`` optionally corrupts the model inputs the
    same way training inputs were.
    """
    arch = params.arch
    U = scenario.users
    count = scenario.paths ** scenario.users
    if arch.in_planes != 4:
        raise InvalidInputError(
            "prediction evaluation needs the pattern-conditioned model")
    if input_rng is None:
        input_rng = np.random.default_rng(0)
    pats = spim.enumerate_patterns(scenario.paths, U)
    eye = np.eye(U, dtype=complex)
    sinr_rows = np.empty((count, U))
    noisy = [dataset.corrupt(channels[u], input_snr_db, input_rng)
             for u in range(U)]
    for i, pat in enumerate(pats):
        F = np.zeros((scenario.n_tx, U), dtype=complex)
        combiners = []
        for u in range(U):
            X = dataset.build_input(noisy[u], pat, count)
            y = neural.forward(params, X)
            F_u, w_u = dataset.decode_label(np.asarray(y, dtype=np.float64),
                                            scenario.n_tx, U, scenario.n_rx)
            F[:, u] = F_u[:, u]
            combiners.append(w_u)
        norm = np.linalg.norm(F)
        scale = np.sqrt(U) / max(norm, 1e-12)
        for u in range(U):
            sinr_rows[i, u] = metrics.sinr(u, channels[u], scale * F, eye,
                                           combiners[u], sigma_n_sq)
    pattern_se = np.log2(1.0 + sinr_rows).sum(axis=1)
    index_bits = U * math.log2(scenario.paths) if include_index_bits else 0.0
    return metrics.RateReport(method="fl", sinr=sinr_rows,
                              pattern_se=pattern_se,
                              pattern_indices=np.arange(count),
                              index_bits=index_bits,
                              total_se=float(pattern_se.mean()) + index_bits)


def prediction_quality(params: neural.ModelParams, scenario: ScenarioConfig,
                       altmin: manifold.AltMinConfig, realizations: int,
                       seed: int, sigma_n_sq: float,
                       input_snr_db: float = math.inf):
    """Mean predicted and model-based SE over fresh channel realizations.

    Realizations whose bank has a singular pattern are redrawn, matching
    the dataset generator's convention.
    """
    predicted = np.empty(realizations)
    reference = np.empty(realizations)
    for r in range(realizations):
        bank = None
        for attempt in range(dataset.MAX_REDRAWS):
            rng = spim.rng_stream(seed, _NS_EVAL, r, attempt)
            paths = channel.draw_paths(scenario, rng)
            chans = np.asarray(channel.synthesize_all(paths, scenario))
            try:
                bank = spim.build_bank(scenario, chans, altmin, paths)
            except SingularMatrixError:
                continue
            if bank.valid.all():
                break
            bank = None
        if bank is None:
            raise EvaluationError(
                f"evaluation realization {r}: no fully valid bank")
        reference[r] = metrics.spim_rate(bank, chans, sigma_n_sq).total_se
        predicted[r] = predicted_rate(
            params, scenario, chans, sigma_n_sq,
            input_rng=spim.rng_stream(seed, _NS_EVAL, r, 1000),
            input_snr_db=input_snr_db).total_se
    return float(predicted.mean()), float(reference.mean())
