"""Command-line entry point: ``sce <command> [options]``.

Every command writes its outputs into ``--out`` together with a
``manifest.json`` recording the configuration and a SHA-256 digest of each
output.  Options may also come from a ``key = value`` file given with
``--config``; explicit command-line flags win over the file, and the file
wins over ``SCE_SEED`` and the built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checks import (CheckResult, ablation_checks, anomaly_break_check, bench_checks, difficulty_checks,
                     easy_condition_checks, gradient_suite, latent_checks, transfer_checks)
from .generator import (DIRECTIONS, PREDICTIVE_FEATURES, TestSpec, WrongFeature, canonical_feature, condition_grid,
                        easy_hard_conditions, full_grid, read_manifest, write_manifest, write_test)
from .models import VARIANTS, get_variant
from .solver import (SolveConfig, generate_tests, run_condition, test_seed, total_accuracy, transfer_matrix,
                     write_results_csv, write_transfer_csv)

DESK_TESTS, DESK_REPS = 100, 3
PAPER_TESTS, PAPER_REPS = 500, 10
ABLATION_MODELS = ("mcpc", "rn", "mcpc-nonres", "mcpc-nocontrast", "rn-deep")
GRIDS = ("full", "easy", "hard", "easy-hard")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------

def default_seed() -> int:
    raw = os.environ.get("SCE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SCE_SEED must be an integer, got {raw!r}") from None


def read_config_file(path: Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Outputs:
    """Tracks files written by a command so a failed run leaves nothing behind."""

    def __init__(self, out_dir: Path):
        self.dir = Path(out_dir)
        self.files: list[Path] = []
        self._created_dir = not self.dir.exists()

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self._created_dir and self.dir.exists():
            # only remove directories this run created and left empty
            for d in sorted((p for p in self.dir.rglob("*") if p.is_dir()), reverse=True):
                if not any(d.iterdir()):
                    d.rmdir()
            if not any(self.dir.iterdir()):
                self.dir.rmdir()

    def write_manifest(self, command: str, config: dict, seed: int, started: str) -> Path:
        digests = {str(p.relative_to(self.dir)): sha256_file(p) for p in self.files if p.exists()}
        manifest = {
            "command": command,
            "config": config,
            "seed": seed,
            "tool_version": __version__,
            "started_at": started,
            "finished_at": _now(),
            "outputs": digests,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _positive(name: str):
    def conv(raw: str) -> int:
        v = int(raw)
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return v
    return conv


def _nonneg(raw: str) -> int:
    v = int(raw)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _nonneg_float(raw: str) -> float:
    v = float(raw)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _variant(raw: str) -> str:
    if raw not in VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown model {raw!r}; choose from {', '.join(VARIANTS)}")
    return raw


def _variant_list(raw: str) -> list[str]:
    return [_variant(v.strip()) for v in raw.split(",") if v.strip()]


def _distractors(raw: str) -> tuple[str, ...]:
    if raw in ("", "-"):
        return ()
    names = tuple(d.strip() for d in raw.replace("+", ",").split(",") if d.strip())
    try:
        return tuple(canonical_feature(d) for d in names)
    except WrongFeature as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _flag(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")


def select_specs(args) -> list[TestSpec]:
    if args.predictive is not None:
        return [TestSpec(args.predictive, args.distractors, directions=args.directions)]
    if args.distractors:
        raise UsageError("--distractors needs --predictive")
    if args.grid == "full":
        specs = full_grid()
    elif args.grid == "easy":
        specs = [condition_grid(f)[0] for f in PREDICTIVE_FEATURES]
    elif args.grid == "hard":
        specs = [condition_grid(f)[-1] for f in PREDICTIVE_FEATURES]
    else:
        specs = [s for _, s in easy_hard_conditions()]
    return [TestSpec(s.predictive, s.distractors, directions=args.directions) for s in specs]


def _report(checks: Sequence[CheckResult]) -> int:
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


# -- commands -----------------------------------------------------------

def cmd_gen(args, out: Outputs) -> int:
    entries = []
    for spec in select_specs(args):
        cond = spec.condition_id.replace(":", "_").replace("+", "-")
        for i, test in enumerate(generate_tests(spec, args.tests, args.seed)):
            test_id = f"{cond}_{i:04d}"
            for j in range(len(test.sequence_images)):
                out.path(f"images/{test_id}_seq{j}.pgm")
            for j in range(len(test.choice_images)):
                out.path(f"images/{test_id}_choice{j}.pgm")
            entries.append(write_test(test, out.dir / "images", test_id))
    for e in entries:
        e["images"] = [f"images/{name}" for name in e["images"]]
    write_manifest(out.path("corpus.json"), entries)
    print(f"wrote {len(entries)} tests to {out.dir}")
    return EXIT_OK


def _solve_config(args, variant: str) -> SolveConfig:
    overrides = {}
    if args.negatives is not None:
        overrides["negatives"] = args.negatives
    return SolveConfig(variant, get_variant(variant, **overrides), args.steps, args.score)


def _load_corpus(args) -> dict[str, list]:
    if args.corpus is None:
        return {}
    tests = read_manifest(Path(args.corpus))
    by: dict[str, list] = {}
    for t in tests:
        by.setdefault(t.spec.condition_id, []).append(t)
    return by


def _run_grid(args, variant: str, specs: Sequence[TestSpec], corpus: dict) -> list:
    cfg = _solve_config(args, variant)
    stats = []
    for spec in specs:
        tests = corpus.get(spec.condition_id)
        if corpus and tests is None:
            raise UsageError(f"corpus has no tests for condition {spec.condition_id}")
        st = run_condition(spec, args.tests, cfg, args.seed, args.threads, tests=tests)
        if args.verbose:
            print(f"  {variant:16s} {st.condition_id:40s} {st.accuracy:.3f}")
        stats.append(st)
    return stats


def _throughput(stats) -> float:
    tests = sum(s.num_tests for s in stats)
    secs = sum(s.num_tests / s.tests_per_sec for s in stats if s.tests_per_sec > 0)
    return tests / secs if secs > 0 else float("inf")


def cmd_solve(args, out: Outputs) -> int:
    specs = select_specs(args)
    stats = _run_grid(args, args.model, specs, _load_corpus(args))
    write_results_csv(out.path("results.csv"), stats, timing=args.timing)
    if args.svg:
        from .plotting import accuracy_figure, render_figure
        render_figure(accuracy_figure(stats, title=args.model), out.path("results.svg"))
    print(f"total accuracy {total_accuracy(stats):.4f} over {len(stats)} conditions")
    print(f"throughput {_throughput(stats):.2f} tests/s with {args.threads} worker(s)")
    if args.check:
        return _report(easy_condition_checks(stats) + difficulty_checks(stats))
    return EXIT_OK


def cmd_ablate(args, out: Outputs) -> int:
    specs = select_specs(args)
    corpus = _load_corpus(args)
    all_stats, totals = [], {}
    for variant in args.models:
        stats = _run_grid(args, variant, specs, corpus)
        totals[variant] = total_accuracy(stats)
        all_stats += stats
        print(f"{variant:16s} total accuracy {totals[variant]:.4f}")
    write_results_csv(out.path("results.csv"), all_stats, timing=args.timing)
    with open(out.path("totals.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "total_accuracy", "conditions", "num_tests", "seed"])
        for v, t in totals.items():
            w.writerow([v, f"{t:.6f}", len(specs), args.tests, args.seed])
    if args.svg:
        from .plotting import accuracy_figure, render_figure
        render_figure(accuracy_figure(all_stats), out.path("results.svg"))
    if args.check:
        return _report(ablation_checks(totals) + latent_checks(totals))
    return EXIT_OK


def _named_conditions(names: Sequence[str] | None):
    table = easy_hard_conditions()
    if not names:
        return table
    lookup = dict(table)
    bad = [n for n in names if n not in lookup]
    if bad:
        raise UsageError(f"unknown condition(s) {', '.join(bad)}; choose from {', '.join(lookup)}")
    return [(n, lookup[n]) for n in names]


def cmd_pretrain_matrix(args, out: Outputs) -> int:
    conditions = _named_conditions(args.test_conditions)
    train = _named_conditions(args.train_conditions)

    def progress(rep, train_name, test_name, acc):
        if args.verbose:
            print(f"  rep {rep} {train_name:11s} -> {test_name:11s} {acc:.3f}")

    cells = transfer_matrix(args.episodes, args.tests, args.reps, _solve_config(args, args.model), args.seed,
                            args.threads, conditions, train, progress)
    write_transfer_csv(out.path("transfer.csv"), cells)
    names = [n for n, _ in conditions]
    print("train \\ test  " + " ".join(f"{n:>11s}" for n in names))
    for row in [n for n, _ in train] + ["naive"]:
        vals = {c.test_cond: c.mean_acc for c in cells if c.train_cond == row}
        print(f"{row:12s}  " + " ".join(f"{vals[n]:11.3f}" for n in names))
    if args.check:
        return _report(transfer_checks(cells))
    return EXIT_OK


def cmd_anomaly(args, out: Outputs) -> int:
    from .anomaly import AnomalyConfig, list_frames, load_frames, score_video, synthetic_break_video
    t_break = None
    if args.synthetic:
        frames, t_break = synthetic_break_video(args.num_frames, args.break_at, args.seed)
        files: list[str] = []
        crop = 0
    else:
        if args.frames is None:
            raise UsageError("give --frames DIR or --synthetic")
        paths = list_frames(Path(args.frames), args.pattern)
        crop = args.crop_top
        frames = load_frames(paths, crop)
        files = [p.name for p in paths]
    cfg = AnomalyConfig(args.window, args.runs, args.sigma, crop, variant=args.model, seed=args.seed)
    report = score_video(frames, cfg, args.threads, files)
    report.write_csv(out.path("anomaly.csv"))
    if args.svg:
        from .plotting import anomaly_figure, render_figure
        markers = [t_break] if t_break is not None else ([args.onset] if args.onset is not None else [])
        render_figure(anomaly_figure(report, markers), out.path("anomaly.svg"))
    peak = report.frame_indices[int(np.argmax(report.smoothed))]
    print(f"scored {len(report.frame_indices)} frames; smoothed peak at frame {peak}")
    if t_break is not None:
        print(f"synthetic rule break at frame {t_break}")
    if args.onset is not None:
        idx = np.asarray(report.frame_indices)
        pre, post = report.smoothed[idx < args.onset], report.smoothed[idx >= args.onset]
        if len(pre) and len(post):
            print(f"mean smoothed score before onset {pre.mean():.4f}, after onset {post.mean():.4f}")
    if args.check and t_break is not None:
        return _report([anomaly_break_check(report, t_break)])
    return EXIT_OK


def cmd_gradcheck(args, out: Outputs) -> int:
    results = gradient_suite(args.seed)
    with open(out.path("gradcheck.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "passed", "max_rel_err"])
        for r in results:
            w.writerow([r.name, int(r.passed), r.detail.split()[-1]])
    code = _report(results)
    return code if args.check else EXIT_OK


def host_note() -> str:
    return (f"{platform.system()} {platform.machine()}, {os.cpu_count()} logical cores, "
            f"python {platform.python_version()}, numpy {np.__version__}")


def bench_rates(spec: TestSpec, tests: list, variants: Sequence[str], cfg_for, seed: int, threads: int,
                repeats: int = 3) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
    """Best-of-``repeats`` tests/second per variant, rounds interleaved across variants.

    Interleaving keeps slow drifts of the host (frequency scaling, a busy
    neighbour) from favouring whichever variant happens to run last.
    """
    n = len(tests)
    best = {v: float("inf") for v in variants}
    acc = {}
    for v in variants:
        # one untimed test warms caches before any timing
        run_condition(spec, 1, cfg_for(v), seed, 1, tests=tests[:1])
    for _ in range(repeats):
        for v in variants:
            t0 = time.perf_counter()
            st = run_condition(spec, n, cfg_for(v), seed, threads, tests=tests)
            best[v] = min(best[v], time.perf_counter() - t0)
            acc[v] = st.accuracy
    return {v: n / best[v] for v in variants}, best, acc


def cmd_bench(args, out: Outputs) -> int:
    spec = TestSpec(args.predictive or "size", args.distractors, directions=args.directions)
    # generation stays outside the timed region
    tests = generate_tests(spec, args.tests, args.seed)
    rates, secs, acc = bench_rates(spec, tests, args.models, lambda v: _solve_config(args, v), args.seed,
                                   args.threads, args.repeats)
    rows = []
    for v in args.models:
        rows.append([v, args.threads, args.tests, f"{secs[v]:.3f}", f"{rates[v]:.3f}", f"{acc[v]:.6f}",
                     host_note()])
        print(f"{v:16s} threads={args.threads} {rates[v]:7.2f} tests/s  accuracy {acc[v]:.3f}")
    print(f"host: {host_note()}")
    with open(out.path("bench.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "threads", "num_tests", "seconds", "tests_per_sec", "accuracy", "host"])
        w.writerows(rows)
    if args.check:
        return _report(bench_checks(rates))
    return EXIT_OK


# -- parser -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--seed", type=int, default=None, help="global seed (default: $SCE_SEED or 0)")
    p.add_argument("--threads", type=_positive("threads"), default=os.cpu_count() or 1,
                   help="worker processes (default: logical cores)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--config", default=None, help="key = value file of option defaults")
    p.add_argument("--check", action="store_true", help="exit 1 when acceptance thresholds fail")
    p.add_argument("--verbose", "-v", action="store_true")


def _test_selection(p: argparse.ArgumentParser, grid_default: str) -> None:
    p.add_argument("--grid", choices=GRIDS, default=grid_default)
    p.add_argument("--predictive", choices=PREDICTIVE_FEATURES + ("color",), default=None,
                   help="single condition instead of a grid")
    p.add_argument("--distractors", type=_distractors, default=(), help="comma-separated distractor features")
    p.add_argument("--directions", choices=DIRECTIONS, default="ascending")


def _solver_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--score", choices=("full", "last-pair"), default="full")
    p.add_argument("--negatives", choices=("all", "exclude-self"), default=None)
    p.add_argument("--steps", type=_nonneg, default=1, help="optimization steps per test")


def _scale_opts(p: argparse.ArgumentParser, reps: bool = False) -> None:
    p.add_argument("--tests", type=_positive("tests"), default=None,
                   help=f"tests per condition (default {DESK_TESTS}, {PAPER_TESTS} with --paper-scale)")
    if reps:
        p.add_argument("--reps", type=_positive("reps"), default=None,
                       help=f"repetitions (default {DESK_REPS}, {PAPER_REPS} with --paper-scale)")
    p.add_argument("--paper-scale", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sce", description="Sequence-consistency tests solved by naive models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a test corpus (PGM images + JSON manifest)")
    _common(p, "out/gen")
    _test_selection(p, "easy-hard")
    p.add_argument("--tests", type=_positive("tests"), default=10, help="tests per condition")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve a grid of conditions with one model")
    _common(p, "out/solve")
    _test_selection(p, "full")
    _scale_opts(p)
    _solver_opts(p)
    p.add_argument("--model", type=_variant, default="mcpc")
    p.add_argument("--corpus", default=None, help="corpus.json written by gen")
    p.add_argument("--svg", action="store_true", help="also draw results.svg")
    p.add_argument("--timing", action="store_true", help="fill the tests_per_sec column")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ablate", help="compare model variants on a grid")
    _common(p, "out/ablate")
    _test_selection(p, "full")
    _scale_opts(p)
    _solver_opts(p)
    p.add_argument("--models", type=_variant_list, default=list(ABLATION_MODELS))
    p.add_argument("--corpus", default=None)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pretrain-matrix", help="pretraining transfer matrix over the eight conditions")
    _common(p, "out/pretrain-matrix")
    _scale_opts(p, reps=True)
    _solver_opts(p)
    p.add_argument("--model", type=_variant, default="mcpc")
    p.add_argument("--episodes", type=_nonneg, default=1000, help="pretraining episodes per train condition")
    p.add_argument("--train-conditions", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   default=None, help="comma-separated subset of the eight conditions")
    p.add_argument("--test-conditions", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   default=None)
    p.set_defaults(func=cmd_pretrain_matrix)

    p = sub.add_parser("anomaly", help="per-frame anomaly scores for an image sequence")
    _common(p, "out/anomaly")
    p.add_argument("--frames", default=None, help="directory of PGM/PNG frames")
    p.add_argument("--pattern", default=None, help="regex whose first group is the frame index")
    p.add_argument("--synthetic", action="store_true", help="score a generated rule-break sequence")
    p.add_argument("--num-frames", type=_positive("num-frames"), default=200)
    p.add_argument("--break-at", type=int, default=None, help="frame of the synthetic rule break")
    p.add_argument("--onset", type=int, default=None, help="report mean scores before/after this frame")
    p.add_argument("--crop-top", type=_nonneg, default=30)
    p.add_argument("--runs", type=_positive("runs"), default=5)
    p.add_argument("--sigma", type=_nonneg_float, default=10.0)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--model", type=_variant, default="mcpc")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_anomaly)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p, "out/gradcheck")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="tests per second on pre-generated tests")
    _common(p, "out/bench")
    _solver_opts(p)
    p.add_argument("--models", type=_variant_list, default=["mcpc", "lstm-cpc"])
    p.add_argument("--tests", type=_positive("tests"), default=40)
    p.add_argument("--repeats", type=_positive("repeats"), default=3, help="timed rounds; the best counts")
    p.add_argument("--predictive", choices=PREDICTIVE_FEATURES, default="size")
    p.add_argument("--distractors", type=_distractors, default=())
    p.add_argument("--directions", choices=DIRECTIONS, default="ascending")
    p.set_defaults(func=cmd_bench)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command {command}")


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], args) -> argparse.Namespace:
    """Re-parse with config-file values as defaults so explicit flags still win."""
    values = read_config_file(Path(args.config))
    sub = _subparser(parser, args.command)
    dests = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        if key not in dests:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        action = dests[key]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = _flag(raw)
            elif action.type is not None:
                defaults[key] = action.type(raw)
            else:
                defaults[key] = raw
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"config key {key}: {e}") from None
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"config key {key}: {raw!r} is not one of {list(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        args = _apply_config(parser, argv, args)
    if args.seed is None:
        args.seed = default_seed()
    if hasattr(args, "paper_scale"):
        if args.tests is None:
            args.tests = PAPER_TESTS if args.paper_scale else DESK_TESTS
        if hasattr(args, "reps") and args.reps is None:
            args.reps = PAPER_REPS if args.paper_scale else DESK_REPS
    if getattr(args, "predictive", None) == "color":
        args.predictive = "shade"
    return args


def _config_dict(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    out = Outputs(Path(args.out))
    started = _now()
    try:
        code = args.func(args, out)
    except (UsageError, ValueError, OSError) as e:
        out.cleanup()
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BaseException:
        out.cleanup()
        raise
    manifest = out.write_manifest(args.command, _config_dict(args), args.seed, started)
    print(f"manifest: {manifest}")
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
