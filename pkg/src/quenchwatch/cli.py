"""Command-line entry point: ``quenchwatch <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
divergence during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import DataError, DivergenceError
from .evaluation import Taxonomy, evaluate
from .labeling import DEFAULT_MIN_DROP, label_shot
from .nn_core import DEFAULT_HIDDEN, init_params, load_params, save_params, weights_checksum
from .pipeline import build_dataset, prepare_aligned
from .preprocess import DecimationMethod, align_shot, detect_clipping
from .signal_model import (
    CHANNELS,
    ChannelId,
    read_aligned_csv,
    read_shot_file,
    shot_filename,
    write_aligned_csv,
)
from .stream_engine import benchmark, replay_shot, step_heap_growth
from .synth import SynthConfig, disruptive_mask, generate_shot, write_corpus
from .training import DEFAULT_TRAIN_FRACTION, Split, TrainConfig, train

log = logging.getLogger("quenchwatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- config file ------------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    for key, value in cfg.items():
        if key not in actions:
            raise UsageError(f"unknown config key '{key}' for {parser.prog}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            parsed = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                parsed = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"config key '{key}': invalid value {value!r}") from None
        else:
            parsed = value
        if action.choices is not None and parsed not in action.choices:
            raise UsageError(f"config key '{key}': {parsed!r} not in {list(action.choices)}")
        parser.set_defaults(**{key: parsed})


# --- subcommands ------------------------------------------------------------

def _gen_one(args):
    cfg, i, disruptive = args
    return generate_shot(cfg, i, disruptive)


def cmd_synth(a) -> int:
    cfg = SynthConfig(seed=a.seed, n_shots=a.n, disruptive_fraction=a.disruptive_fraction,
                      quench_width_ms=a.quench_width, mirnov_growth_rate=a.growth_rate,
                      clip_rail=a.clip_rail)
    if a.noise is not None:
        cfg = cfg.with_noise(a.noise)
    cfg.validate()
    mask = disruptive_mask(cfg)
    work = [(cfg, i, bool(mask[i])) for i in range(cfg.n_shots)]
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            results = list(pool.map(_gen_one, work))
    else:
        results = [_gen_one(w) for w in work]
    shots = [r[0] for r in results]
    truths = [r[1] for r in results]
    out = write_corpus(shots, truths, a.out)
    print(f"wrote {len(shots)} shots ({int(mask.sum())} disruptive) to {out}")
    return EXIT_OK


def _align_file(args):
    path, method, out_dir = args
    shot = read_shot_file(path)
    aligned = align_shot(shot, method)
    write_aligned_csv(aligned, Path(out_dir) / f"{shot_filename(shot.shot_id)}.csv")
    return shot


def cmd_preprocess(a) -> int:
    data = Path(a.data)
    out = Path(a.out) if a.out else data / "aligned"
    out.mkdir(parents=True, exist_ok=True)
    method = DecimationMethod.parse(a.decimation)
    files = sorted(p for p in data.glob("shot_*") if p.is_file())
    if not files:
        raise DataError(f"no shot files in {data}")
    work = [(p, method, out) for p in files]
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            shots = list(pool.map(_align_file, work))
    else:
        shots = [_align_file(w) for w in work]
    n_flagged = 0
    with open(out / "clipping.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("shot_id,channel,fraction,low_rail,high_rail,clipped\n")
        for shot in shots:
            for ch in CHANNELS:
                rep = detect_clipping(shot.get(ch), a.clip_threshold)
                n_flagged += rep.clipped
                fh.write(f"{shot.shot_id},{ch.name},{rep.fraction!r},{rep.low_rail!r},"
                         f"{rep.high_rail!r},{int(rep.clipped)}\n")
    if a.plot_dir:
        from .plots import plot_decimation
        first = shots[0].get(ChannelId.Mirnov16)
        plot_decimation(Path(a.plot_dir) / "decimation_mirnov16.png", first)
    print(f"aligned {len(shots)} shots into {out} ({n_flagged} clipped channel(s) flagged)")
    return EXIT_OK


def cmd_label(a) -> int:
    target = Path(a.aligned) if a.aligned else Path(a.data) / "aligned"
    files = sorted(target.glob("shot_*.csv"))
    if not files:
        raise DataError(f"no aligned CSV files in {target} (run preprocess first)")
    n_disrupt = 0
    for path in files:
        shot_id = int(path.stem.split("_")[1])
        shot = label_shot(read_aligned_csv(path, shot_id), a.min_drop)
        n_disrupt += shot.disruption_step is not None
        write_aligned_csv(shot, path)
    print(f"labeled {len(files)} shots in {target} ({n_disrupt} with a disruption)")
    return EXIT_OK


def _train_config(a) -> TrainConfig:
    return TrainConfig(epochs=a.epochs, learning_rate=a.learning_rate, optimizer=a.optimizer,
                       grad_clip_norm=a.grad_clip_norm, pos_weight=a.pos_weight, seed=a.seed,
                       early_stop_patience=a.early_stop_patience, hidden_dim=a.hidden_dim)


def _write_split(split: Split, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("shot_id,split\n")
        for i in split.train:
            fh.write(f"{i},train\n")
        for i in split.test:
            fh.write(f"{i},test\n")


def _read_split(path: Path) -> Split:
    if not path.exists():
        raise DataError(f"split file not found: {path} (run train first)")
    train_ids, test_ids = [], []
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        sid, which = line.split(",")
        (train_ids if which == "train" else test_ids).append(int(sid))
    return Split(tuple(train_ids), tuple(test_ids))


def _prepare_file(args):
    path, method, min_drop = args
    return prepare_aligned([read_shot_file(path)], method, min_drop)[0]


def _load_corpus(data: Path, a):
    files = sorted(p for p in data.glob("shot_*") if p.is_file())
    if not files:
        raise DataError(f"no shot files in {data}")
    work = [(p, DecimationMethod.parse(a.decimation), a.min_drop) for p in files]
    if getattr(a, "jobs", 1) > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            return list(pool.map(_prepare_file, work))
    return [_prepare_file(w) for w in work]


def cmd_train(a) -> int:
    data = Path(a.data)
    cfg = _train_config(a)
    log.info("train config: %s", cfg.as_dict())
    aligned = _load_corpus(data, a)
    unlabeled = [s.shot_id for s in aligned if s.disruption_step is None]
    if unlabeled:
        log.warning("%d shot(s) show no quench and train as all-zero labels", len(unlabeled))
    split_seed = a.split_seed if a.split_seed is not None else a.seed
    ds = build_dataset(aligned, a.train_fraction, split_seed)
    params, tlog = train(ds.shots("train"), cfg, ds.stats)
    out = Path(a.out) if a.out else data / "weights.bin"
    save_params(params, out)
    _write_split(ds.split, data / "split.csv")
    tlog.to_csv(data / "train_log.csv")
    if a.plot_dir:
        from .plots import plot_training_log
        plot_training_log(Path(a.plot_dir) / "training.png", tlog)
    best = tlog.records[tlog.best_epoch - 1]
    print(f"trained {len(tlog.records)} epochs on {len(ds.split.train)} shots "
          f"(best epoch {tlog.best_epoch}, val_loss {best.val_loss:.5f}, "
          f"val_acc {best.val_acc:.4f})")
    print(f"weights {out} checksum {weights_checksum(out)}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    data = Path(a.data)
    weights = Path(a.weights) if a.weights else data / "weights.bin"
    if not weights.exists():
        raise DataError(f"weights file not found: {weights}")
    params = load_params(weights)
    split = _read_split(Path(a.split) if a.split else data / "split.csv")
    shots = {s.shot_id: s for s in _load_corpus(data, a)}
    missing = [i for i in split.train + split.test if i not in shots]
    if missing:
        raise DataError(f"split lists shots absent from {data}: {missing[:5]}")
    report = evaluate(params, {"Training": [shots[i] for i in split.train],
                               "Testing": [shots[i] for i in split.test]},
                      a.threshold, a.taxonomy, a.precision)
    print(report.table())
    csv_path = Path(a.report_csv) if a.report_csv else data / "eval.csv"
    report.to_csv(csv_path)
    if a.plot_dir:
        from .plots import plot_alarm_summary
        plot_alarm_summary(Path(a.plot_dir) / "alarms.png", report)
    print(f"per-shot records: {csv_path}")
    return EXIT_OK


def cmd_replay(a) -> int:
    weights = Path(a.weights)
    if not weights.exists():
        raise DataError(f"weights file not found: {weights}")
    shot_path = Path(a.shot)
    if not shot_path.exists():
        raise DataError(f"shot file not found: {shot_path}")
    params = load_params(weights)
    if shot_path.suffix == ".csv":
        aligned = read_aligned_csv(shot_path, int(shot_path.stem.split("_")[-1]))
    else:
        aligned = align_shot(read_shot_file(shot_path), DecimationMethod.parse(a.decimation))
    if aligned.label is None:
        aligned = label_shot(aligned, a.min_drop)
    res = replay_shot(params, aligned, a.threshold, a.precision)
    if a.emit_csv:
        res.to_csv(a.emit_csv)
    if a.plot:
        from .plots import plot_replay
        plot_replay(a.plot, res.times(), res.y, a.threshold, res.alarm_step, aligned)
    alarm = "none" if res.alarm_step is None else f"step {res.alarm_step}"
    line = f"shot {aligned.shot_id}: alarm {alarm}"
    if aligned.disruption_step is not None:
        line += f", disruption step {aligned.disruption_step}"
        if res.alarm_step is not None:
            line += f", lead {(aligned.disruption_step - res.alarm_step) * aligned.dt_ms:.1f} ms"
    print(line)
    return EXIT_OK


def cmd_bench(a) -> int:
    if a.weights:
        path = Path(a.weights)
        if not path.exists():
            raise DataError(f"weights file not found: {path}")
        params = load_params(path)
    else:
        params = init_params(a.hidden_dim, a.seed)
    benchmark(params, min(a.steps, 500), a.precision)  # compile + cache warm-up
    stats = benchmark(params, a.steps, a.precision, a.seed)
    print("p50_us,p95_us,max_us")
    print(stats.summary_line())
    if a.check_alloc:
        heap = step_heap_growth(params, precision=a.precision)
        print(f"heap: {heap}", file=sys.stderr)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _common_data(p, data_default="data"):
    p.add_argument("--data", default=data_default, help="directory of shot files")
    p.add_argument("--decimation", default="max", choices=["max", "min", "avg"])
    p.add_argument("--min-drop", dest="min_drop", type=float, default=DEFAULT_MIN_DROP)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quenchwatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--n", type=int, default=119)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="data")
    s.add_argument("--disruptive-fraction", dest="disruptive_fraction", type=float, default=1.0)
    s.add_argument("--quench-width", dest="quench_width", type=float, default=1.0)
    s.add_argument("--growth-rate", dest="growth_rate", type=float, default=0.4)
    s.add_argument("--clip-rail", dest="clip_rail", type=float, default=5.0)
    s.add_argument("--noise", type=float, default=None,
                   help="one noise fraction for every channel (default: per-channel)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="align shots onto the 0.2 ms grid")
    s.add_argument("--data", default="data")
    s.add_argument("--out", default=None, help="output directory (default <data>/aligned)")
    s.add_argument("--decimation", default="max", choices=["max", "min", "avg"])
    s.add_argument("--clip-threshold", dest="clip_threshold", type=float, default=0.05)
    s.add_argument("--plot-dir", dest="plot_dir", default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("label", help="add the disruption label column to aligned CSVs")
    s.add_argument("--data", default="data")
    s.add_argument("--aligned", default=None, help="aligned CSV directory (default <data>/aligned)")
    s.add_argument("--min-drop", dest="min_drop", type=float, default=DEFAULT_MIN_DROP)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("train", help="fit the LSTM on a shot directory")
    _common_data(s)
    d = TrainConfig()
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    s.add_argument("--train-fraction", dest="train_fraction", type=float,
                   default=DEFAULT_TRAIN_FRACTION)
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--learning-rate", dest="learning_rate", type=float, default=d.learning_rate)
    s.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    s.add_argument("--grad-clip-norm", dest="grad_clip_norm", type=float,
                   default=d.grad_clip_norm)
    s.add_argument("--pos-weight", dest="pos_weight", type=float, default=d.pos_weight)
    s.add_argument("--early-stop-patience", dest="early_stop_patience", type=int,
                   default=d.early_stop_patience)
    s.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=DEFAULT_HIDDEN)
    s.add_argument("--out", default=None, help="weight file (default <data>/weights.bin)")
    s.add_argument("--plot-dir", dest="plot_dir", default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score alarms on the train/test split")
    _common_data(s)
    s.add_argument("--weights", default=None, help="default <data>/weights.bin")
    s.add_argument("--split", default=None, help="default <data>/split.csv")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--taxonomy", default="default", choices=[t.value for t in Taxonomy])
    s.add_argument("--precision", default="f64", choices=["f64", "f32"])
    s.add_argument("--report-csv", dest="report_csv", default=None)
    s.add_argument("--plot-dir", dest="plot_dir", default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("replay", help="stream one shot through the engine")
    s.add_argument("--weights", required=True)
    s.add_argument("--shot", required=True, help="shot file or aligned CSV")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--precision", default="f64", choices=["f64", "f32"])
    s.add_argument("--decimation", default="max", choices=["max", "min", "avg"])
    s.add_argument("--min-drop", dest="min_drop", type=float, default=DEFAULT_MIN_DROP)
    s.add_argument("--emit-csv", dest="emit_csv", default=None)
    s.add_argument("--plot", default=None, help="write a figure to this path")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("bench", help="per-step latency of the stream engine")
    s.add_argument("--weights", default=None, help="default: fresh hidden-dim model")
    s.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=DEFAULT_HIDDEN)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--precision", default="f32", choices=["f64", "f32"])
    s.add_argument("--check-alloc", dest="check_alloc", action="store_true")
    s.set_defaults(func=cmd_bench)

    for name, sp in sub.choices.items():
        sp.add_argument("--config", default=None, help="key=value file; flags override it")
    return p


def _find_config(argv: Sequence[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg_path = _find_config(argv)
        if cfg_path is not None:
            if not Path(cfg_path).exists():
                raise UsageError(f"config file not found: {cfg_path}")
            cmd = next((t for t in argv if t in parser._subparsers._group_actions[0].choices),
                       None)
            if cmd is None:
                raise UsageError("--config needs a subcommand")
            sp = parser._subparsers._group_actions[0].choices[cmd]
            _apply_config(sp, read_config_file(cfg_path))
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    log.info("resolved config: %s", resolved)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
