"""Command-line front end: design, sweeps, datasets, training, overhead, eval.

Every command is a pure function of (config, seed): reruns write
byte-identical CSVs, and the trial/user decomposition makes the worker
count irrelevant to the output.  A manifest (config hash, seed, library
versions, backend) is written next to each command's artifacts.
"""

import argparse
import copy
import hashlib
import json
import math
import multiprocessing
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, channel, dataset, federated, manifold, metrics
from . import neural, spim
from ._kernels import BACKEND
from .channel import ScenarioConfig
from .exceptions import (ConfigError, EvaluationError, FormatError,
                         InvalidInputError, ProtocolError, ShapeError,
                         SingularMatrixError)

# substream namespace for the design command's realization draw
_NS_DESIGN = 2

BANK_MAGIC = b"SPIMBK01"

# full-scale defaults (the `paper` preset); `desk` overrides a subset
_DEFAULTS = {
    "seed": 0,
    "scenario": {
        "n_tx": 128, "n_rx": 9, "users": 8, "paths": 2,
        "noise_var": 0.01, "theta_min": 30.0, "theta_max": 150.0,
        "gains": [0.5, 0.5],
    },
    "altmin": {
        "max_outer_iters": 50, "max_cg_iters": 40, "grad_tol": 1e-6,
        "obj_rel_tol": 1e-8, "armijo_c": 1e-4, "backtrack": 0.5,
    },
    "dataset": {
        "realizations": 2000, "copies": 20,
        "snr_train_levels": [10.0, 20.0, 30.0], "split": 0.2,
    },
    "arch": {
        "n_conv": 3, "filters": 128, "kernel": [3, 3],
        "fc_units": 1024, "dropout": 0.5,
    },
    "train": {
        "learning_rate": 0.001, "momentum": 0.9, "batch_size": 128,
        "buffer_momentum": 0.1, "rounds": 50,
    },
    "sweep": {
        "snr_grid": [0.0, 10.0, 20.0],
        "gamma1_grid": [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85,
                        0.9, 0.95],
        "trials": 200,
        "methods": ["spim-mo", "mmwave", "wang"],
        "include_index_bits": True,
    },
    "eval": {
        "realizations": 30, "snr_db": 20.0, "input_snr_db": None,
        "model": "model_fl.spimnn",
    },
}

_DESK = {
    "scenario": {"n_tx": 32, "n_rx": 4, "users": 2, "paths": 2},
    "dataset": {"realizations": 50, "copies": 10,
                "snr_train_levels": [30.0]},
    "arch": {"filters": 8, "fc_units": 64},
    # tuned for the 50-round desk run: full local batch per round,
    # running statistics replaced by the last batch's moments
    "train": {"learning_rate": 0.2, "batch_size": 400,
              "buffer_momentum": 1.0},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive override of the default skeleton; unknown keys rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(preset: str, config_path=None, seed=None) -> dict:
    """Effective config = defaults(preset) <- file overrides <- --seed."""
    if preset == "paper":
        cfg = copy.deepcopy(_DEFAULTS)
    elif preset == "desk":
        cfg = _merge(_DEFAULTS, _DESK)
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    if config_path is not None:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            overrides = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, overrides)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _require_number(cfg, section, key, integer=False):
    value = cfg[section][key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key {section}.{key} must be a number")
    if integer and int(value) != value:
        raise ConfigError(f"config key {section}.{key} must be an integer")
    return int(value) if integer else float(value)


def scenario_from(cfg: dict) -> ScenarioConfig:
    sc = cfg["scenario"]
    gains = sc["gains"]
    return ScenarioConfig(
        n_tx=_require_number(cfg, "scenario", "n_tx", integer=True),
        n_rx=_require_number(cfg, "scenario", "n_rx", integer=True),
        users=_require_number(cfg, "scenario", "users", integer=True),
        paths=_require_number(cfg, "scenario", "paths", integer=True),
        noise_var=_require_number(cfg, "scenario", "noise_var"),
        theta_min=_require_number(cfg, "scenario", "theta_min"),
        theta_max=_require_number(cfg, "scenario", "theta_max"),
        gains=None if gains is None else tuple(float(g) for g in gains),
        seed=int(cfg["seed"]),
    )


def altmin_from(cfg: dict) -> manifold.AltMinConfig:
    am = cfg["altmin"]
    try:
        return manifold.AltMinConfig(seed=int(cfg["seed"]), **{
            k: am[k] for k in ("max_outer_iters", "max_cg_iters", "grad_tol",
                               "obj_rel_tol", "armijo_c", "backtrack")})
    except InvalidInputError as exc:
        raise ConfigError(f"altmin settings invalid: {exc}") from exc


def meta_from(cfg: dict) -> dataset.DatasetMeta:
    ds = cfg["dataset"]
    levels = ds["snr_train_levels"]
    if not isinstance(levels, (list, tuple)) or not levels:
        raise ConfigError("dataset.snr_train_levels must be a nonempty list")
    return dataset.DatasetMeta(
        realizations=_require_number(cfg, "dataset", "realizations",
                                     integer=True),
        copies=_require_number(cfg, "dataset", "copies", integer=True),
        snr_train_levels=tuple(float(v) for v in levels),
        split=_require_number(cfg, "dataset", "split"),
    )


def arch_from(cfg: dict, scenario: ScenarioConfig,
              in_planes: int) -> neural.NetworkArch:
    ar = cfg["arch"]
    kernel = ar["kernel"]
    if not isinstance(kernel, (list, tuple)) or len(kernel) != 2:
        raise ConfigError("arch.kernel must be a [rows, cols] pair")
    try:
        return neural.NetworkArch(
            in_rows=scenario.n_rx, in_cols=scenario.n_tx,
            in_planes=in_planes,
            out_dim=2 * scenario.n_tx * scenario.users + scenario.n_rx,
            n_conv=_require_number(cfg, "arch", "n_conv", integer=True),
            filters=_require_number(cfg, "arch", "filters", integer=True),
            kernel=(int(kernel[0]), int(kernel[1])),
            fc_units=_require_number(cfg, "arch", "fc_units", integer=True),
            dropout=_require_number(cfg, "arch", "dropout"),
            pool_target=(int(kernel[0]), int(kernel[1])),
        )
    except (InvalidInputError, ShapeError) as exc:
        raise ConfigError(f"arch settings invalid: {exc}") from exc


def train_from(cfg: dict) -> neural.TrainConfig:
    try:
        return neural.TrainConfig(
            learning_rate=_require_number(cfg, "train", "learning_rate"),
            momentum=_require_number(cfg, "train", "momentum"),
            batch_size=_require_number(cfg, "train", "batch_size",
                                       integer=True),
            buffer_momentum=_require_number(cfg, "train", "buffer_momentum"),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"train settings invalid: {exc}") from exc


def _fmt(value) -> str:
    """Deterministic CSV cell: shortest-roundtrip floats, plain ints."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, outputs) -> None:
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": int(cfg["seed"]),
        "versions": {
            "spimmimo": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "backend": BACKEND,
        "outputs": sorted(outputs),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _ensure_out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}") from exc
    return out


def save_bank(path: Path, bank: spim.BeamformerBank) -> None:
    """Binary bank dump: dims header, then the arrays in a fixed order."""
    U, n_tx, M = bank.F_rf_full.shape
    n_rx = bank.W_rf_full.shape[1]
    count = len(bank.patterns)
    parts = [BANK_MAGIC,
             np.array([U, n_tx, n_rx, M, count], dtype="<u4").tobytes(),
             bank.valid.astype("<u1").tobytes()]
    for arr in (bank.F_rf_full, bank.W_rf_full, bank.f_bb_full,
                bank.w_bb_full, bank.F_rf, bank.F_bb, bank.W_rf):
        parts.append(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    path.write_bytes(b"".join(parts))


def cmd_design(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    altmin = altmin_from(cfg)

    bank = None
    chans = None
    for attempt in range(dataset.MAX_REDRAWS):
        rng = spim.rng_stream(int(cfg["seed"]), _NS_DESIGN, attempt)
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
        raise EvaluationError("no fully valid bank within the redraw budget")

    U = scenario.users
    rows = []
    for i, pat in enumerate(bank.patterns):
        H_eff = spim.effective_channel(chans, bank.W_rf[i], bank.F_rf[i])
        raw_inv = np.linalg.solve(H_eff, np.eye(U, dtype=complex))
        residual = float(np.linalg.norm(H_eff @ raw_inv - np.eye(U)))
        power = float(np.linalg.norm(bank.F_rf[i] @ bank.F_bb[i]) ** 2)
        rows.append((pat.index, power, residual,
                     abs(power - U) <= 1e-8, bool(bank.valid[i])))
    write_csv(out / "design.csv",
              ["pattern", "power", "zf_residual", "power_ok", "valid"], rows)
    save_bank(out / "bank.spimbk", bank)
    write_manifest(out, "design", cfg, ["design.csv", "bank.spimbk"])
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    altmin = altmin_from(cfg)
    sw = cfg["sweep"]
    trials = _require_number(cfg, "sweep", "trials", integer=True)
    methods = list(sw["methods"])
    include = bool(sw["include_index_bits"])
    grid_key = "snr_grid" if args.kind == "snr" else "gamma1_grid"
    grid = [float(x) for x in sw[grid_key]]
    if not grid:
        raise ConfigError(f"sweep.{grid_key} must be nonempty")

    worker = partial(metrics.run_trial, args.kind, grid, scenario, methods,
                     altmin, include_index_bits=include)
    if args.workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(args.workers) as pool:
            results = pool.map(worker, range(trials))
    else:
        results = [worker(t) for t in range(trials)]
    rows = metrics.sweep(args.kind, grid, trials, scenario, methods, altmin,
                         include, trial_results=results)
    name = f"sweep_{args.kind}.csv"
    write_csv(out / name,
              ["x", "method", "mean_se", "std_se", "trials", "seed"],
              [(r.x, r.method, r.mean_se, r.std_se, r.trials, r.seed)
               for r in rows])
    write_manifest(out, "sweep", cfg, [name])
    return 0


def _dataset_name(user: int) -> str:
    return f"user{user:02d}.spimds"


def _generate_and_save(user: int, scenario, altmin, meta, out: str) -> str:
    ds = dataset.generate_local(user, scenario, altmin, meta)
    name = _dataset_name(user)
    dataset.save(ds, Path(out) / name)
    return name


def cmd_dataset(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    altmin = altmin_from(cfg)
    meta = meta_from(cfg)
    worker = partial(_generate_and_save, scenario=scenario, altmin=altmin,
                     meta=meta, out=str(out))
    users = range(scenario.users)
    if args.workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(args.workers) as pool:
            names = pool.map(worker, users)
    else:
        names = [worker(u) for u in users]
    write_manifest(out, "dataset", cfg, names)
    return 0


def _load_datasets(out: Path, scenario: ScenarioConfig):
    sets = []
    for u in range(scenario.users):
        path = out / _dataset_name(u)
        if not path.exists():
            raise ConfigError(
                f"dataset file {path} missing; run the dataset command first")
        sets.append(dataset.load(path, user=u))
    return sets


def cmd_train(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    tc = train_from(cfg)
    rounds = _require_number(cfg, "train", "rounds", integer=True)
    if rounds < 1:
        raise ConfigError("train.rounds must be >= 1")
    split = _require_number(cfg, "dataset", "split")
    datasets = _load_datasets(out, scenario)
    arch = arch_from(cfg, scenario, in_planes=datasets[0].planes)
    seed = int(cfg["seed"])

    if args.mode == "fl":
        params, velocity, ledger, history = federated.train_fl(
            datasets, arch, tc, rounds, seed, split=split)
    else:
        params, velocity, ledger, history = federated.train_cl(
            datasets, arch, tc, rounds, seed, split=split)

    log_name = f"training_log_{args.mode}.csv"
    model_name = f"model_{args.mode}.spimnn"
    write_csv(out / log_name,
              ["round", "val_mse", "uplink_symbols", "downlink_symbols",
               "cum_blocks"],
              [(h.round_index, h.val_mse, h.uplink_symbols,
                h.downlink_symbols, h.cum_blocks) for h in history])
    neural.save_model(params, velocity, out / model_name)
    write_manifest(out, f"train_{args.mode}", cfg, [log_name, model_name])
    return 0


def cmd_overhead(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    meta = meta_from(cfg)
    rounds = _require_number(cfg, "train", "rounds", integer=True)
    # accounting uses the over-the-air input (3 planes), as in the closed forms
    arch = arch_from(cfg, scenario, in_planes=3)
    kappa = arch.dropout
    total_samples = meta.total(scenario.users)

    fl_dropout = federated.overhead_fl(
        neural.param_count(arch, 1.0 - kappa), rounds, scenario.users)
    fl_full = federated.overhead_fl(
        neural.param_count(arch, 1.0), rounds, scenario.users)
    cl = federated.overhead_cl(scenario.n_tx, scenario.n_rx, scenario.users,
                               total_samples)
    rows = [
        ("fl-dropout", fl_dropout, -(-fl_dropout // federated.BLOCK_SIZE)),
        ("fl-full", fl_full, -(-fl_full // federated.BLOCK_SIZE)),
        ("cl", cl, -(-cl // federated.BLOCK_SIZE)),
    ]
    write_csv(out / "overhead.csv", ["scheme", "total_symbols", "blocks"],
              rows)
    write_manifest(out, "overhead", cfg, ["overhead.csv"])
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.preset, args.config, args.seed)
    out = _ensure_out(args)
    scenario = scenario_from(cfg)
    altmin = altmin_from(cfg)
    ev = cfg["eval"]
    realizations = _require_number(cfg, "eval", "realizations", integer=True)
    if realizations < 1:
        raise ConfigError("eval.realizations must be >= 1")
    snr_db = _require_number(cfg, "eval", "snr_db")
    input_snr = ev["input_snr_db"]
    input_snr = math.inf if input_snr is None else float(input_snr)
    model_path = out / str(ev["model"])
    if not model_path.exists():
        raise ConfigError(
            f"model file {model_path} missing; run the train command first")
    params, _ = neural.load_model(model_path)
    predicted, reference = federated.prediction_quality(
        params, scenario, altmin, realizations, int(cfg["seed"]),
        metrics.snr_db_to_noise_var(snr_db), input_snr_db=input_snr)
    ratio = predicted / reference if reference > 0 else math.nan
    write_csv(out / "eval.csv",
              ["realizations", "mean_predicted_se", "mean_reference_se",
               "ratio", "seed"],
              [(realizations, predicted, reference, ratio,
                int(cfg["seed"]))])
    write_manifest(out, "eval", cfg, ["eval.csv"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spimmimo",
        description="Hybrid-beamforming SPIM-MIMO simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, metavar="PATH",
                       help="JSON file overriding preset defaults")
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override the config seed")
        p.add_argument("--out", default="out", metavar="DIR",
                       help="output directory (default: ./out)")
        p.add_argument("--workers", type=int, default=1, metavar="N",
                       help="parallel workers; output is worker-invariant")
        p.add_argument("--preset", choices=("desk", "paper"), default="desk",
                       help="base config (default: desk)")

    p = sub.add_parser("design", help="design one beamformer bank")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("sweep", help="Monte Carlo spectral-efficiency sweep")
    p.add_argument("--kind", choices=("snr", "gamma1"), required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dataset", help="generate per-user training datasets")
    common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the beamforming predictor")
    p.add_argument("--mode", choices=("fl", "cl"), required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("overhead", help="closed-form transmission overheads")
    common(p)
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("eval", help="evaluate a trained model's beamformers")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SingularMatrixError, EvaluationError, ProtocolError, FormatError,
            ShapeError, np.linalg.LinAlgError, FloatingPointError,
            OverflowError, ZeroDivisionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
