"""Command-line runner.

    feedsign train --config run.json --out-dir out/
    feedsign replay out/run.orbit out/init.params --out rebuilt.params
    feedsign analyze floor_fit out/history.csv --loss-star 0
    feedsign analyze dp_check --K 5 --epsilon 1
    feedsign partition-stats --config run.json

A config file holds one JSON object or a list of them (a config matrix).
Matrix entry i writes to ``<out-dir>/run-<i>``; ``--jobs`` runs entries in
parallel processes.  ``FEEDSIGN_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, orbit
from .config import ConfigError, ExperimentConfig, config_from_dict
from .federation import build_dataset, build_model, run_training, setup
from .prng import derive_seed, make_stream

log = logging.getLogger("feedsign")

HISTORY_COLUMNS = ("step", "loss", "accuracy", "vote_plus", "vote_minus", "uplink_bits", "downlink_bits")


class CLIError(Exception):
    pass


def fmt(x) -> str:
    """17 significant digits: enough to round-trip a float64."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# -- io helpers ------------------------------------------------------------------


def load_configs(path: str | Path) -> list[ExperimentConfig]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    if isinstance(raw, list):
        if not raw:
            raise ConfigError("$", "empty config matrix")
        out = []
        for i, item in enumerate(raw):
            try:
                out.append(config_from_dict(item))
            except ConfigError as exc:
                raise ConfigError(f"[{i}].{exc.path}", str(exc).split(": ", 1)[-1]) from None
        return out
    return [config_from_dict(raw)]


def write_params(path: Path, params: np.ndarray) -> None:
    path.write_bytes(np.asarray(params, dtype="<f8").tobytes())


def read_params(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) % 8:
        raise CLIError(f"{path}: size {len(blob)} is not a multiple of 8")
    return np.frombuffer(blob, dtype="<f8").astype(np.float64)


def history_rows(history) -> list[list[str]]:
    return [
        [
            fmt(r.step),
            fmt(r.global_loss),
            fmt(r.accuracy),
            fmt(r.tally.plus),
            fmt(r.tally.minus),
            fmt(r.uplink_bits),
            fmt(r.downlink_bits),
        ]
        for r in history
    ]


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- train -----------------------------------------------------------------------


def train_one(config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Run one config and write its outputs.  Returns the output directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_training(config)
    write_csv(out / "history.csv", HISTORY_COLUMNS, history_rows(result.history))
    write_params(out / "init.params", result.initial)
    write_params(out / "final.params", result.final)
    if result.orbit is not None:
        orbit.save(result.orbit, out / "run.orbit")
    log.info("%s: %d steps, wrote %s", config.rule, config.T, out)
    return out


def _train_job(args):
    config_dict, out_dir = args
    return str(train_one(config_from_dict(config_dict), out_dir))


def cmd_train(args) -> int:
    if not args.config:
        raise CLIError("train needs --config")
    jobs = []
    for path in args.config:
        configs = load_configs(path)
        matrix = len(configs) > 1 or len(args.config) > 1
        for i, cfg in enumerate(configs):
            base = args.out_dir or cfg.out_dir or "."
            if matrix:
                stem = Path(path).stem if len(args.config) > 1 else ""
                name = f"{stem}-run-{i:03d}" if stem else f"run-{i:03d}"
                jobs.append((cfg.to_dict(), str(Path(base) / name)))
            else:
                jobs.append((cfg.to_dict(), base))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_train_job, jobs))
    else:
        done = [_train_job(j) for j in jobs]
    for d in done:
        print(d)
    return 0


# -- replay ----------------------------------------------------------------------


def cmd_replay(args) -> int:
    orb = orbit.load(args.orbit)
    initial = read_params(args.init)
    digest = None
    if args.config:
        cfg = load_configs(args.config[0])[0]
        digest = build_model(cfg, build_dataset(cfg)).digest()
    params = orbit.replay(initial, orb, digest=digest)
    if args.out:
        out = Path(args.out)
    else:
        out_dir = Path(args.out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        out = out_dir / "replayed.params"
    write_params(out, params)
    print(out)
    return 0


# -- analyze ---------------------------------------------------------------------


def read_history(path: str | Path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "step" not in reader.fieldnames or "loss" not in reader.fieldnames:
            raise CLIError(f"{path}: needs 'step' and 'loss' columns")
        return [(int(row["step"]), float(row["loss"])) for row in reader]


def _analysis_out(args, name: str, header, rows) -> int:
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / f"{name}.csv", header, rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return 0


def analyze_floor_fit(args) -> int:
    if not args.history:
        raise CLIError("floor_fit needs a history CSV")
    hist = read_history(args.history)
    fit = analysis.fit_error_floor(hist, args.loss_star)
    return _analysis_out(
        args, "floor_fit", ("rate", "floor", "residual", "rms"), [[fmt(fit.rate), fmt(fit.floor), fmt(fit.residual), fmt(fit.rms)]]
    )


def analyze_sign_prob(args) -> int:
    if not args.config:
        raise CLIError("sign_prob needs --config")
    cfg = load_configs(args.config[0])[0]
    state = setup(cfg)
    params = read_params(args.params) if args.params else state.params
    est = analysis.estimate_sign_reversing_prob(
        state.spec, params, args.seed, state.data, args.batch or cfg.B, args.M, args.sampler, cfg.mu
    )
    return _analysis_out(
        args,
        "sign_prob",
        ("seed", "B", "M", "true_projection", "p_hat", "stderr"),
        [[fmt(est.seed), fmt(est.B), fmt(est.M), fmt(est.true_projection), fmt(est.p_hat), fmt(est.stderr)]],
    )


def analyze_half_normal(args) -> int:
    rows = []
    for i in range(args.count):
        g = make_stream(derive_seed(args.sampler, "g", i)).normals(args.dim)
        est = analysis.half_normal_check(g, args.samples, derive_seed(args.sampler, "z", i))
        exact = analysis.HALF_NORMAL_MEAN * float(np.linalg.norm(g))
        rows.append([fmt(i), fmt(est), fmt(exact), fmt(est / exact - 1.0)])
    return _analysis_out(args, "half_normal", ("trial", "estimate", "exact", "relative_error"), rows)


def analyze_dp_check(args) -> int:
    ratio = analysis.dp_max_ratio(args.K, args.epsilon)
    bound = math.exp(args.epsilon)
    votes = [1] * ((args.K + 1) // 2) + [-1] * (args.K // 2)
    exact = analysis.dp_outcome_probability(votes, 1, args.epsilon)
    rate = analysis.dp_empirical_plus_rate(votes, args.epsilon, args.samples, args.sampler)
    sigma = math.sqrt(exact * (1.0 - exact) / args.samples)
    return _analysis_out(
        args,
        "dp_check",
        ("K", "epsilon", "max_ratio", "bound", "holds", "p_plus", "p_plus_mc", "z_score"),
        [[fmt(args.K), fmt(args.epsilon), fmt(ratio), fmt(bound), str(ratio <= bound).lower(),
          fmt(exact), fmt(rate), fmt((rate - exact) / sigma if sigma else 0.0)]],
    )


ANALYZE_MODES = {
    "floor_fit": analyze_floor_fit,
    "sign_prob": analyze_sign_prob,
    "half_normal": analyze_half_normal,
    "dp_check": analyze_dp_check,
}


def cmd_analyze(args) -> int:
    return ANALYZE_MODES[args.mode](args)


# -- partition-stats ---------------------------------------------------------------


def cmd_partition_stats(args) -> int:
    if not args.config:
        raise CLIError("partition-stats needs --config")
    cfg = load_configs(args.config[0])[0]
    state = setup(cfg)
    n_classes = int(state.data.labels.max()) + 1 if len(state.data) else 0
    header = ["client", "role", "n_samples"] + [f"class_{c}" for c in range(n_classes)]
    rows = []
    for sh in state.shards:
        counts = np.bincount(state.data.labels[sh.indices].astype(np.int64), minlength=n_classes)
        rows.append([fmt(sh.client), sh.role.value, fmt(len(sh))] + [fmt(c) for c in counts])
    return _analysis_out(args, "partition_stats", header, rows)


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], help="JSON config (repeatable)")
    common.add_argument("--out-dir", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel processes for a config matrix")

    p = argparse.ArgumentParser(prog="feedsign", description="Federated zeroth-order fine-tuning simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="run training from a config")

    r = sub.add_parser("replay", parents=[common], help="rebuild parameters from an orbit")
    r.add_argument("orbit")
    r.add_argument("init", help="initial parameters (raw little-endian float64)")
    r.add_argument("--out", default=None, help="output file (default <out-dir>/replayed.params)")

    a = sub.add_parser("analyze", parents=[common], help="analysis utilities")
    a.add_argument("mode", choices=sorted(ANALYZE_MODES))
    a.add_argument("history", nargs="?", help="history.csv (floor_fit)")
    a.add_argument("--loss-star", type=float, default=0.0)
    a.add_argument("--params", default=None, help="parameters to probe (sign_prob)")
    a.add_argument("--seed", type=int, default=0, help="direction seed (sign_prob)")
    a.add_argument("--batch", type=int, default=None)
    a.add_argument("--M", type=int, default=1000)
    a.add_argument("--sampler", type=int, default=0)
    a.add_argument("--dim", type=int, default=1000)
    a.add_argument("--count", type=int, default=10)
    a.add_argument("--samples", type=int, default=100_000)
    a.add_argument("--K", type=int, default=5)
    a.add_argument("--epsilon", type=float, default=1.0)

    sub.add_parser("partition-stats", parents=[common], help="per-client sample and class counts")
    return p


COMMANDS = {
    "train": cmd_train,
    "replay": cmd_replay,
    "analyze": cmd_analyze,
    "partition-stats": cmd_partition_stats,
}


def _configure_logging() -> None:
    level = os.environ.get("FEEDSIGN_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("feedsign: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"feedsign: config error: {exc}", file=sys.stderr)
        return 2
    except (CLIError, orbit.OrbitError, analysis.FitQualityError, OSError, ValueError) as exc:
        print(f"feedsign: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
