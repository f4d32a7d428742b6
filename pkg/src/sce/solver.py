"""Naive test solving, condition-grid evaluation, pretraining and transfer.

Solving one test: take one optimization step of the model's loss on the
sequence images, then score every choice by the same loss evaluated on the
sequence extended by that choice, and answer with the lowest score.
"""

from __future__ import annotations

import csv
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .generator import SCETest, TestSpec, easy_hard_conditions, sample_test
from .models import ModelBundle, ModelConfig, get_variant, preprocess_images

MASK64 = (1 << 64) - 1
WILSON_Z = 1.959963984540054


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _as_u64(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    data = str(part).encode("utf-8")
    # two CRCs give a stable 64-bit string hash
    return (zlib.crc32(data) << 32 | zlib.crc32(data[::-1] + b"\x01")) & MASK64


def mix(*parts) -> int:
    """Deterministic 64-bit seed derived from ints and strings."""
    h = 0x6A09E667F3BCC909
    for p in parts:
        h = splitmix64(h ^ _as_u64(p))
    return h


def test_seed(global_seed: int, cond: str, index: int) -> int:
    return mix(mix(global_seed, cond, index), 0)


def init_seed(global_seed: int, cond: str, index: int) -> int:
    return mix(mix(global_seed, cond, index), 1)


def rep_seed(global_seed: int, rep: int) -> int:
    return global_seed if rep == 0 else mix(global_seed, "rep", rep)


@dataclass(frozen=True)
class SolveConfig:
    variant: str = "mcpc"
    model: ModelConfig | None = None
    steps_per_episode: int = 1
    score: str = "full"  # full | last-pair

    def __post_init__(self):
        if self.model is None:
            object.__setattr__(self, "model", get_variant(self.variant))
        if self.score not in ("full", "last-pair"):
            raise ValueError(f"unknown scoring mode {self.score!r}")
        if self.steps_per_episode < 0:
            raise ValueError("steps_per_episode must be >= 0")


@dataclass
class EpisodeResult:
    chosen_idx: int
    correct: bool
    scores: tuple[float, ...]
    loss_before: float
    loss_after: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class AccuracyStats:
    variant: str
    predictive: str
    distractors: tuple[str, ...]
    num_tests: int
    num_correct: int
    seed: int
    tests_per_sec: float = field(default=0.0, compare=False)

    @property
    def condition_id(self) -> str:
        d = "+".join(self.distractors) if self.distractors else "-"
        return f"{self.predictive}:{d}"

    @property
    def difficulty(self) -> int:
        return len(self.distractors)

    @property
    def accuracy(self) -> float:
        return self.num_correct / self.num_tests

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.num_correct, self.num_tests)


def wilson_interval(k: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def binomial_sf(k: int, n: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(n, p)."""
    from scipy.stats import binom
    return float(binom.sf(k - 1, n, p))


def argmin_lowest(scores: Sequence[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def score_choices(bundle: ModelBundle, z_seq: np.ndarray, z_choices: np.ndarray,
                  score: str = "full") -> list[float]:
    """Scores of each candidate latent appended to the sequence latents."""
    cfg = bundle.config
    dtype = bundle.dtype
    k = z_seq.shape[0]
    z_seq = np.asarray(z_seq, dtype=dtype)
    ctx = None
    if cfg.loss != "rn" and cfg.context != "markov":
        ctx = bundle.contexts(Tape(), Tensor(z_seq)).data
    scores = []
    for c in range(z_choices.shape[0]):
        zc = np.asarray(z_choices[c:c + 1], dtype=dtype)
        tape = Tape()
        if score == "last-pair":
            if cfg.loss == "rn":
                pair = Tensor(np.concatenate([z_seq[k - 1:k], zc], axis=1))
                g = bundle.relate(tape, pair).data
                scores.append(float(((g - 1.0) ** 2).sum()))
            else:
                src = Tensor((z_seq if ctx is None else ctx)[k - 1:k])
                pred = bundle.predict(tape, src).data
                scores.append(float(((pred - zc) ** 2).sum()))
            continue
        z = Tensor(np.concatenate([z_seq, zc]))
        c_t = None if ctx is None else Tensor(ctx)
        scores.append(bundle.loss_from_latents(tape, z, c_t).item())
    return scores


def solve_test(bundle: ModelBundle, test: SCETest, cfg: SolveConfig = SolveConfig()) -> EpisodeResult:
    """Run one episode; ``bundle`` is modified in place by the optimization step."""
    t0 = time.perf_counter()
    seq = test.sequence_images
    choices = test.choice_images
    loss_before = float("nan")
    for s in range(cfg.steps_per_episode):
        loss = bundle.train_step(seq)
        if s == 0:
            loss_before = loss
    tape = Tape()
    z = bundle.encode(tape, Tensor(preprocess_images(list(seq) + list(choices), bundle.dtype))).data
    k = len(seq)
    z_seq, z_choices = z[:k], z[k:]
    ctx = None
    if bundle.config.loss != "rn":
        ctx = bundle.contexts(Tape(), Tensor(z_seq))
    loss_after = bundle.loss_from_latents(Tape(), Tensor(z_seq), ctx).item()
    if cfg.steps_per_episode == 0:
        loss_before = loss_after
    scores = score_choices(bundle, z_seq, z_choices, cfg.score)
    chosen = argmin_lowest(scores)
    return EpisodeResult(chosen, chosen == test.correct_idx, tuple(scores), loss_before, loss_after,
                         time.perf_counter() - t0)


def generate_tests(spec: TestSpec, num_tests: int, global_seed: int) -> list[SCETest]:
    cond = spec.condition_id
    return [sample_test(spec.with_seed(test_seed(global_seed, cond, i)),
                        np.random.default_rng(test_seed(global_seed, cond, i)))
            for i in range(num_tests)]


def _episode(args) -> EpisodeResult:
    spec, cfg, global_seed, index, base, test = args
    cond = spec.condition_id
    if test is None:
        seed = test_seed(global_seed, cond, index)
        test = sample_test(spec.with_seed(seed), np.random.default_rng(seed))
    bundle = base.clone() if base is not None else ModelBundle.fresh(cfg.model, init_seed(global_seed, cond, index))
    return solve_test(bundle, test, cfg)


def _limit_blas_threads() -> None:
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(1)


def _run_chunk(args) -> list:
    fn, items = args
    _limit_blas_threads()
    return [fn(x) for x in items]


def parallel_map(fn, items: Sequence, threads: int = 1) -> list:
    """``[fn(x) for x in items]`` on up to ``threads`` worker processes.

    Items are dealt round-robin into chunks and the results put back in input
    order, so the output never depends on scheduling.  ``fn`` must be a
    module-level function.
    """
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return _run_chunk((fn, items))
    n_chunks = min(len(items), threads * 4)
    chunks = [(fn, items[i::n_chunks]) for i in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    out: list = [None] * len(items)
    for c, part in enumerate(parts):
        for j, res in enumerate(part):
            out[c + j * n_chunks] = res
    return out


def run_episodes(jobs: list, threads: int = 1) -> list[EpisodeResult]:
    """Evaluate independent episodes; output order = job order."""
    return parallel_map(_episode, jobs, threads)


def run_condition(spec: TestSpec, num_tests: int, cfg: SolveConfig = SolveConfig(), global_seed: int = 0,
                  threads: int = 1, base: ModelBundle | None = None,
                  tests: Sequence[SCETest] | None = None, return_episodes: bool = False):
    """Accuracy of ``cfg`` on ``num_tests`` generated tests of one condition.

    ``base=None`` is naive mode (fresh bundle per test); otherwise every test
    starts from a clone of ``base``.  ``tests`` supplies a pre-generated
    corpus (it must match what ``generate_tests`` would produce to stay
    comparable with generated runs).
    """
    if num_tests < 1:
        raise ValueError("num_tests must be >= 1")
    if tests is not None and len(tests) < num_tests:
        raise ValueError("pre-generated corpus is smaller than num_tests")
    jobs = [(spec, cfg, global_seed, i, base, None if tests is None else tests[i]) for i in range(num_tests)]
    t0 = time.perf_counter()
    episodes = run_episodes(jobs, threads)
    elapsed = time.perf_counter() - t0
    stats = AccuracyStats(cfg.variant, spec.predictive, spec.distractors, num_tests,
                          sum(e.correct for e in episodes), global_seed,
                          num_tests / elapsed if elapsed > 0 else float("inf"))
    return (stats, episodes) if return_episodes else stats


def total_accuracy(stats: Iterable[AccuracyStats]) -> float:
    accs = [s.accuracy for s in stats]
    return float(np.mean(accs))


def pretrain(bundle: ModelBundle, train_spec: TestSpec, episodes: int, seed: int = 0) -> ModelBundle:
    """Self-supervised pretraining: one step per generated test sequence."""
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if episodes == 0:
        return bundle
    out = bundle.clone()
    cond = train_spec.condition_id
    for e in range(episodes):
        s = mix(seed, "pretrain", cond, e)
        test = sample_test(train_spec.with_seed(s), np.random.default_rng(s))
        out.train_step(test.sequence_images)
    return out


@dataclass
class TransferCell:
    train_cond: str
    test_cond: str
    accuracies: list[float]
    episodes: int
    seed: int

    @property
    def reps(self) -> int:
        return len(self.accuracies)

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def sem(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1) / math.sqrt(len(self.accuracies)))


def transfer_matrix(episodes: int, tests_per_cell: int, reps: int, cfg: SolveConfig = SolveConfig(),
                    global_seed: int = 0, threads: int = 1,
                    conditions: Sequence[tuple[str, TestSpec]] | None = None,
                    train_conditions: Sequence[tuple[str, TestSpec]] | None = None,
                    progress=None) -> list[TransferCell]:
    """Pretrain on each train condition, evaluate on each test condition, plus a naive row.

    Every repetition pretrains one bundle per train condition; evaluation
    clones it per test so tests stay independent.  The naive row uses fresh
    bundles and the same test seeds as :func:`run_condition`.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    conditions = list(conditions or easy_hard_conditions())
    train_conditions = list(train_conditions or conditions)
    rows = [name for name, _ in train_conditions] + ["naive"]
    acc: dict[tuple[str, str], list[float]] = {(r, c): [] for r in rows for c, _ in conditions}
    for rep in range(reps):
        rseed = rep_seed(global_seed, rep)
        corpus = {name: generate_tests(spec, tests_per_cell, rseed) for name, spec in conditions}
        for name, spec in conditions:
            st = run_condition(spec, tests_per_cell, cfg, rseed, threads, tests=corpus[name])
            acc[("naive", name)].append(st.accuracy)
        for train_name, train_spec in train_conditions:
            base = None
            if episodes > 0:
                start = ModelBundle.fresh(cfg.model, mix(rseed, "pretrain-init", train_spec.condition_id))
                base = pretrain(start, train_spec, episodes, mix(rseed, "pretrain-seed", train_spec.condition_id))
            for name, spec in conditions:
                st = run_condition(spec, tests_per_cell, cfg, rseed, threads, base=base, tests=corpus[name])
                acc[(train_name, name)].append(st.accuracy)
                if progress is not None:
                    progress(rep, train_name, name, st.accuracy)
    return [TransferCell(r, c, acc[(r, c)], episodes, global_seed) for r in rows for c, _ in conditions]


# -- CSV output -------------------------------------------------------------

RESULTS_HEADER = ("variant", "predictive", "distractors", "difficulty", "num_tests", "accuracy",
                  "ci_low", "ci_high", "tests_per_sec", "seed")
TRANSFER_HEADER = ("train_cond", "test_cond", "mean_acc", "sem", "reps", "episodes", "seed")


def write_results_csv(path, stats: Iterable[AccuracyStats], timing: bool = False) -> None:
    """Results rows; ``tests_per_sec`` stays empty unless ``timing`` so reruns are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for s in stats:
            lo, hi = s.ci
            w.writerow([s.variant, s.predictive, "+".join(s.distractors) or "-", s.difficulty, s.num_tests,
                        f"{s.accuracy:.6f}", f"{lo:.6f}", f"{hi:.6f}",
                        f"{s.tests_per_sec:.3f}" if timing else "", s.seed])


def read_results_csv(path) -> list[AccuracyStats]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            n = int(row["num_tests"])
            d = () if row["distractors"] == "-" else tuple(row["distractors"].split("+"))
            out.append(AccuracyStats(row["variant"], row["predictive"], d, n,
                                     round(float(row["accuracy"]) * n), int(row["seed"]),
                                     float(row["tests_per_sec"] or 0.0)))
    return out


def write_transfer_csv(path, cells: Iterable[TransferCell]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSFER_HEADER)
        for c in cells:
            w.writerow([c.train_cond, c.test_cond, f"{c.mean_acc:.6f}", f"{c.sem:.6f}", c.reps,
                        c.episodes, c.seed])
