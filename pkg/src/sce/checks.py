"""Gradient suite and the pass/fail thresholds used by ``--check`` runs."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, grad_check
from .models import ModelBundle, get_variant

GRAD_TOL = 1e-3
EASY_FLOORS = {"size": 0.80, "shade": 0.80, "number": 0.45, "shape": 0.50}
EASY_P_VALUE = 1e-3
DIFFICULTY_DROP = {"size": 0.15, "shade": 0.15}
ABLATION_MARGINS = (("mcpc", "rn", 0.03), ("mcpc", "mcpc-nonres", 0.10),
                    ("mcpc", "mcpc-nocontrast", 0.02), ("rn", "rn-deep", 0.05))
LATENT_SPREAD = 0.05
BENCH_MIN_RATE = 2.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# -- gradient suite -------------------------------------------------------

def _rand(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _layer_cases(rng) -> list[tuple[str, dict, Callable]]:
    """(name, params, loss builder) for every tape operation."""
    x4 = _rand(rng, 2, 6, 6, 2)
    w = _rand(rng, 3, 2, 3, 3)
    b = _rand(rng, 3)
    a = _rand(rng, 3, 4)
    c = _rand(rng, 3, 4)
    lw = _rand(rng, 5, 4)
    lb = _rand(rng, 5)
    z = _rand(rng, 4, 3)
    mask = ~np.eye(3, 4, dtype=bool)
    # keep relu inputs away from the kink
    r = Tensor(rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)), requires_grad=True)
    weights = Tensor(rng.uniform(-1, 1, size=(3, 4)))

    def wsum(t: Tape, out: Tensor) -> Tensor:
        # weighted sum so every output element carries a distinct gradient
        wts = Tensor(np.resize(weights.data.reshape(-1), out.data.size).reshape(out.shape))
        return t.sum(t.mul(out, wts))

    return [
        ("conv2d stride 2 pad 1", {"x": x4, "w": w, "b": b},
         lambda t: t.sum(t.square(t.conv2d(x4, w, b, stride=2, pad=1)))),
        ("conv2d stride 1 pad 0", {"x": x4, "w": w, "b": b},
         lambda t: t.sum(t.square(t.conv2d(x4, w, b, stride=1, pad=0)))),
        ("avg_pool", {"x": x4}, lambda t: t.sum(t.square(t.avg_pool(x4, 3)))),
        ("linear", {"x": a, "w": lw, "b": lb}, lambda t: t.sum(t.square(t.linear(a, lw, lb)))),
        ("relu", {"x": r}, lambda t: wsum(t, t.relu(r))),
        ("tanh", {"x": a}, lambda t: wsum(t, t.tanh(a))),
        ("sigmoid", {"x": a}, lambda t: wsum(t, t.sigmoid(a))),
        ("add/sub/mul", {"a": a, "c": c}, lambda t: wsum(t, t.mul(t.add(a, c), t.sub(a, c)))),
        ("scale/shift/square", {"a": a}, lambda t: wsum(t, t.square(t.shift(t.scale(a, -1.5), 0.25)))),
        ("mean", {"a": a}, lambda t: t.mean(t.square(a))),
        ("logsumexp", {"a": a}, lambda t: wsum(t, t.logsumexp(a))),
        ("logsumexp masked", {"a": a}, lambda t: wsum(t, t.logsumexp(a, mask))),
        ("concat/reshape", {"a": a, "c": c},
         lambda t: wsum(t, t.reshape(t.concat([a, c], axis=0), (4, 6)))),
        ("take_rows/cols/elements", {"a": a},
         lambda t: t.add(t.add(wsum(t, t.take_rows(a, [2, 0])), wsum(t, t.take_cols(a, 1, 3))),
                         t.sum(t.take_elements(a, [0, 1, 2], [1, 2, 3])))),
        ("pairwise_sqdist", {"a": a, "z": z},
         lambda t: wsum(t, t.pairwise_sqdist(t.take_cols(a, 0, 3), z))),
    ]


LOSS_CASES = {
    "infonce": ("mcpc", {}),
    "infonce exclude-self": ("mcpc", {"negatives": "exclude-self"}),
    "infonce non-residual": ("mcpc-nonres", {}),
    "infonce d=10": ("mcpc-d10", {}),
    "no-contrast": ("mcpc-nocontrast", {}),
    "rn": ("rn", {}),
    "rnn context": ("rnn-cpc", {}),
    "lstm context": ("lstm-cpc", {}),
}


def _loss_case(variant: str, overrides: dict, seed: int, m: int = 6):
    """Loss of a head-only model on random latents; returns (params, loss builder)."""
    cfg = replace(get_variant(variant, **overrides), dtype="float64")
    bundle = ModelBundle.fresh(cfg, seed).astype("float64")
    rng = np.random.default_rng(seed)
    z = Tensor(rng.normal(size=(m, cfg.latent_dim)), requires_grad=True)
    params = {"z": z}
    params.update({k: p for k, p in bundle.params.items() if not k.startswith("enc.")})

    def loss(t: Tape) -> Tensor:
        ctx = bundle.contexts(t, z) if cfg.loss != "rn" else None
        return bundle.loss_from_latents(t, z, ctx)

    return params, loss


def gradient_suite(seed: int = 0, step: float = 1e-5) -> list[CheckResult]:
    """Central-difference checks in float64 for every op and every loss variant.

    Loss variants are checked on random latents rather than images: a full
    encoder has thousands of ReLUs, and a 1e-5 nudge of a first-layer
    weight flips some of them, which central differences cannot follow.
    The encoder's ops are covered one by one instead.
    """
    rng = np.random.default_rng(seed)
    results = []
    for name, params, fn in _layer_cases(rng):
        err = grad_check(fn, params, step=step)
        results.append(CheckResult(f"grad {name}", err < GRAD_TOL, f"max rel err {err:.2e}"))
    for name, (variant, overrides) in LOSS_CASES.items():
        params, fn = _loss_case(variant, overrides, seed)
        err = grad_check(fn, params, step=step)
        results.append(CheckResult(f"grad loss {name}", err < GRAD_TOL, f"max rel err {err:.2e}"))
    return results


# -- thresholds over experiment outputs ----------------------------------

def easy_condition_checks(stats: Iterable, n_choices: int = 4) -> list[CheckResult]:
    """Accuracy floors and above-chance tests on zero-distractor conditions."""
    from .solver import binomial_sf
    pooled: dict[str, list[int]] = {}
    for st in stats:
        if st.distractors:
            continue
        k, n = pooled.setdefault(st.predictive, [0, 0])
        pooled[st.predictive] = [k + st.num_correct, n + st.num_tests]
    out = []
    for feat, floor in EASY_FLOORS.items():
        if feat not in pooled:
            continue
        k, n = pooled[feat]
        acc = k / n
        p = binomial_sf(k, n, 1.0 / n_choices)
        ok = acc >= floor and p < EASY_P_VALUE
        out.append(CheckResult(f"easy {feat}", ok, f"accuracy {acc:.3f} (floor {floor}), p={p:.1e}"))
    return out


def difficulty_checks(stats: Sequence) -> list[CheckResult]:
    by = {(s.predictive, s.difficulty): s.accuracy for s in stats}
    out = []
    for feat, drop in DIFFICULTY_DROP.items():
        if (feat, 0) in by and (feat, 4) in by:
            d = by[(feat, 0)] - by[(feat, 4)]
            out.append(CheckResult(f"difficulty {feat}", d >= drop,
                                   f"{by[(feat, 0)]:.3f} - {by[(feat, 4)]:.3f} = {d:.3f} (min {drop})"))
    return out


def ablation_checks(totals: dict[str, float]) -> list[CheckResult]:
    out = []
    for better, worse, margin in ABLATION_MARGINS:
        if better in totals and worse in totals:
            d = totals[better] - totals[worse]
            out.append(CheckResult(f"{better} - {worse}", d >= margin,
                                   f"{totals[better]:.3f} - {totals[worse]:.3f} = {d:.3f} (min {margin})"))
    return out


def latent_checks(totals: dict[str, float], variants: Sequence[str] = ("mcpc-d1", "mcpc-d10", "mcpc-d100")
                  ) -> list[CheckResult]:
    vals = [totals[v] for v in variants if v in totals]
    if len(vals) < 2:
        return []
    spread = max(vals) - min(vals)
    return [CheckResult("latent-dim spread", spread <= LATENT_SPREAD,
                        f"{', '.join(f'{v}={totals[v]:.3f}' for v in variants if v in totals)}; "
                        f"spread {spread:.3f} (max {LATENT_SPREAD})")]


def transfer_checks(cells: Sequence) -> list[CheckResult]:
    acc = {(c.train_cond, c.test_cond): c.mean_acc for c in cells}
    rules = [("size-easy -> size-easy", ("size-easy", "size-easy"), ">=", 0.90),
             ("size-easy -> size-hard", ("size-easy", "size-hard"), ">=", 0.80),
             ("shade-easy -> shade-easy", ("shade-easy", "shade-easy"), ">=", 0.90),
             ("shape-hard -> size-easy", ("shape-hard", "size-easy"), "<=", 0.40)]
    out = []
    for name, key, op, thr in rules:
        if key not in acc:
            continue
        v = acc[key]
        ok = v >= thr if op == ">=" else v <= thr
        out.append(CheckResult(f"transfer {name}", ok, f"{v:.3f} ({op} {thr})"))
    if ("shape-easy", "size-easy") in acc and ("naive", "size-easy") in acc:
        d = acc[("naive", "size-easy")] - acc[("shape-easy", "size-easy")]
        out.append(CheckResult("transfer shape-easy -> size-easy below naive", d >= 0.3,
                               f"naive {acc[('naive', 'size-easy')]:.3f} - "
                               f"{acc[('shape-easy', 'size-easy')]:.3f} = {d:.3f} (min 0.3)"))
    return out


def bench_checks(rates: dict[str, float]) -> list[CheckResult]:
    out = []
    if "mcpc" in rates:
        out.append(CheckResult("bench mcpc rate", rates["mcpc"] >= BENCH_MIN_RATE,
                               f"{rates['mcpc']:.2f} tests/s (min {BENCH_MIN_RATE})"))
    if "mcpc" in rates and "lstm-cpc" in rates:
        out.append(CheckResult("bench mcpc faster than lstm-cpc", rates["mcpc"] > rates["lstm-cpc"],
                               f"{rates['mcpc']:.2f} vs {rates['lstm-cpc']:.2f} tests/s"))
    return out


def anomaly_break_check(report, t_break: int, tolerance: int = 5) -> CheckResult:
    peak = report.frame_indices[int(np.argmax(report.smoothed))]
    ok = abs(peak - t_break) <= tolerance
    return CheckResult("anomaly peak near rule break", ok, f"peak at frame {peak}, break at {t_break}")
