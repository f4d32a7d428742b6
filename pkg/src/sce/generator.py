"""Procedural generation of sequence-consistency tests.

A test is a short image sequence in which one *predictive* feature follows a
deterministic rule, plus ``n`` candidate continuations of which exactly one
obeys the rule.  Features that are neither predictive nor distractors stay
constant across every image of the test; distractors are redrawn i.i.d. for
each image.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .render import RenderConfig, render, write_pgm


class Shape(str, Enum):
    CIRCLE = "circle"
    TRIANGLE = "triangle"
    SQUARE = "square"
    STAR = "star"
    HEXAGON = "hexagon"


FEATURES = ("number", "shade", "shape", "size", "positions")
PREDICTIVE_FEATURES = ("number", "shade", "shape", "size")
ORDERED_FEATURES = ("number", "shade", "size")
# monotonic rules step upward by default; "both" draws the direction per test
DIRECTIONS = ("ascending", "both")

NUMBER_DOMAIN = tuple(range(1, 10))
SHADE_DOMAIN = tuple(range(6))
SHAPE_DOMAIN = tuple(Shape)
SIZE_DOMAIN = tuple(range(6))
NUM_CELLS = 9

# "color" is what the figures call the shade feature
FEATURE_ALIASES = {"color": "shade", "colour": "shade"}


class GenerationError(ValueError):
    pass


class OutOfRange(GenerationError):
    pass


class WrongFeature(GenerationError):
    pass


class InfeasibleSpec(GenerationError):
    pass


def canonical_feature(name: str) -> str:
    name = FEATURE_ALIASES.get(name.lower(), name.lower())
    if name not in FEATURES:
        raise WrongFeature(f"unknown feature {name!r}")
    return name


def feature_domain(name: str) -> tuple:
    name = canonical_feature(name)
    if name == "number":
        return NUMBER_DOMAIN
    if name == "shade":
        return SHADE_DOMAIN
    if name == "shape":
        return SHAPE_DOMAIN
    if name == "size":
        return SIZE_DOMAIN
    raise WrongFeature("positions has no enumerable value domain")


@dataclass(frozen=True)
class FeatureVector:
    number: int
    shade_idx: int
    shape: Shape
    size_idx: int
    positions: tuple[int, ...]

    def __post_init__(self):
        if self.number not in NUMBER_DOMAIN:
            raise OutOfRange(f"number {self.number} outside 1..9")
        if self.shade_idx not in SHADE_DOMAIN:
            raise OutOfRange(f"shade index {self.shade_idx} outside 0..5")
        if self.size_idx not in SIZE_DOMAIN:
            raise OutOfRange(f"size index {self.size_idx} outside 0..5")
        object.__setattr__(self, "shape", Shape(self.shape))
        positions = tuple(int(p) for p in self.positions)
        if sorted(positions) != list(range(NUM_CELLS)):
            raise OutOfRange(f"positions {positions} is not a permutation of 0..8")
        object.__setattr__(self, "positions", positions)

    def get(self, feature: str):
        feature = canonical_feature(feature)
        return {
            "number": self.number,
            "shade": self.shade_idx,
            "shape": self.shape,
            "size": self.size_idx,
            "positions": self.positions,
        }[feature]

    @property
    def occupied_cells(self) -> tuple[int, ...]:
        return self.positions[: self.number]

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "shade_idx": self.shade_idx,
            "shape": self.shape.value,
            "size_idx": self.size_idx,
            "positions": list(self.positions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVector":
        return cls(d["number"], d["shade_idx"], Shape(d["shape"]), d["size_idx"], tuple(d["positions"]))


@dataclass(frozen=True)
class MonotonicStep:
    feature: str
    direction: int

    def __post_init__(self):
        if self.feature not in ORDERED_FEATURES:
            raise WrongFeature(f"monotonic rules need an ordered feature, got {self.feature!r}")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

    def to_dict(self) -> dict:
        return {"kind": "monotonic", "feature": self.feature, "direction": self.direction}


@dataclass(frozen=True)
class Alternating:
    shape_a: Shape
    shape_b: Shape
    feature: str = field(default="shape", init=False)

    def __post_init__(self):
        object.__setattr__(self, "shape_a", Shape(self.shape_a))
        object.__setattr__(self, "shape_b", Shape(self.shape_b))
        if self.shape_a == self.shape_b:
            raise ValueError("alternating rule needs two distinct shapes")

    def to_dict(self) -> dict:
        return {"kind": "alternating", "feature": "shape",
                "shape_a": self.shape_a.value, "shape_b": self.shape_b.value}


Rule = Union[MonotonicStep, Alternating]


def rule_from_dict(d: dict) -> Rule:
    if d["kind"] == "monotonic":
        return MonotonicStep(d["feature"], d["direction"])
    return Alternating(Shape(d["shape_a"]), Shape(d["shape_b"]))


def apply_rule(rule: Rule, value):
    """Return the successor of ``value`` under ``rule``."""
    if isinstance(rule, Alternating):
        if not isinstance(value, (Shape, str)):
            raise WrongFeature(f"alternating rule applies to shapes, got {value!r}")
        try:
            value = Shape(value)
        except ValueError as exc:
            raise WrongFeature(str(exc)) from None
        if value == rule.shape_a:
            return rule.shape_b
        if value == rule.shape_b:
            return rule.shape_a
        raise OutOfRange(f"{value.value} is not part of {rule.shape_a.value}/{rule.shape_b.value}")
    if isinstance(value, (Shape, str)) or isinstance(value, (bool, np.bool_)):
        raise WrongFeature(f"monotonic rule on {rule.feature} got {value!r}")
    if int(value) != value:
        raise WrongFeature(f"monotonic rule on {rule.feature} got {value!r}")
    domain = feature_domain(rule.feature)
    if value not in domain:
        raise OutOfRange(f"{value} outside the {rule.feature} domain")
    nxt = int(value) + rule.direction
    if nxt not in domain:
        raise OutOfRange(f"{rule.feature} step from {value} leaves the domain")
    return nxt


@dataclass(frozen=True)
class TestSpec:
    predictive: str
    distractors: tuple[str, ...] = ()
    K: int = 5
    n: int = 4
    seed: int = 0
    random_shape_pair: bool = False
    directions: str = "ascending"

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        predictive = canonical_feature(self.predictive)
        if predictive not in PREDICTIVE_FEATURES:
            raise WrongFeature(f"{predictive!r} cannot be predictive")
        distractors = sorted({canonical_feature(d) for d in self.distractors})
        if predictive in distractors:
            raise ValueError("the predictive feature cannot also be a distractor")
        if self.directions not in DIRECTIONS:
            raise ValueError(f"directions must be one of {DIRECTIONS}")
        if self.K < 1 or self.n < 2:
            raise ValueError("need K >= 1 and n >= 2")
        object.__setattr__(self, "predictive", predictive)
        object.__setattr__(self, "distractors", tuple(distractors))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def difficulty(self) -> int:
        return len(self.distractors)

    @property
    def constants(self) -> tuple[str, ...]:
        return tuple(f for f in FEATURES if f != self.predictive and f not in self.distractors)

    @property
    def condition_id(self) -> str:
        return condition_id(self.predictive, self.distractors)

    def with_seed(self, seed: int) -> "TestSpec":
        return TestSpec(self.predictive, self.distractors, self.K, self.n, seed, self.random_shape_pair,
                        self.directions)

    def to_dict(self) -> dict:
        return {"predictive": self.predictive, "distractors": list(self.distractors),
                "K": self.K, "n": self.n, "seed": self.seed,
                "random_shape_pair": self.random_shape_pair, "directions": self.directions}


def condition_id(predictive: str, distractors: Iterable[str]) -> str:
    d = sorted(canonical_feature(x) for x in distractors)
    return f"{canonical_feature(predictive)}:{'+'.join(d) if d else '-'}"


@dataclass
class SCETest:
    spec: TestSpec
    rule: Rule
    sequence_features: list[FeatureVector]
    choice_features: list[FeatureVector]
    correct_idx: int
    render_cfg: RenderConfig = field(default_factory=RenderConfig)
    _seq_images: list | None = field(default=None, repr=False)
    _choice_images: list | None = field(default=None, repr=False)

    __test__ = False

    @property
    def sequence_images(self) -> list[np.ndarray]:
        if self._seq_images is None:
            self._seq_images = [render(f, self.render_cfg) for f in self.sequence_features]
        return self._seq_images

    @property
    def choice_images(self) -> list[np.ndarray]:
        if self._choice_images is None:
            self._choice_images = [render(f, self.render_cfg) for f in self.choice_features]
        return self._choice_images

    def manifest(self, test_id: str, image_files: Sequence[str] = ()) -> dict:
        return {
            "test_id": test_id,
            "spec": self.spec.to_dict(),
            "rule": self.rule.to_dict(),
            "sequence_features": [f.to_dict() for f in self.sequence_features],
            "choice_features": [f.to_dict() for f in self.choice_features],
            "correct_idx": self.correct_idx,
            "images": list(image_files),
        }

    @classmethod
    def from_manifest(cls, d: dict, render_cfg: RenderConfig | None = None) -> "SCETest":
        s = d["spec"]
        spec = TestSpec(s["predictive"], tuple(s["distractors"]), s["K"], s["n"], s["seed"],
                        s.get("random_shape_pair", False), s.get("directions", "ascending"))
        return cls(spec, rule_from_dict(d["rule"]),
                   [FeatureVector.from_dict(f) for f in d["sequence_features"]],
                   [FeatureVector.from_dict(f) for f in d["choice_features"]],
                   d["correct_idx"], render_cfg or RenderConfig())


def _sample_value(feature: str, rng: np.random.Generator):
    if feature == "positions":
        return tuple(int(p) for p in rng.permutation(NUM_CELLS))
    domain = feature_domain(feature)
    return domain[int(rng.integers(len(domain)))]


def _sample_rule(spec: TestSpec, rng: np.random.Generator) -> tuple[Rule, object]:
    """Pick the rule and the first sequence value so that K + 1 steps stay in range."""
    p = spec.predictive
    if p == "shape":
        if spec.random_shape_pair:
            a, b = rng.choice(len(SHAPE_DOMAIN), size=2, replace=False)
            rule = Alternating(SHAPE_DOMAIN[int(a)], SHAPE_DOMAIN[int(b)])
        else:
            rule = Alternating(Shape.TRIANGLE, Shape.SQUARE)
        start = rule.shape_a if rng.integers(2) == 0 else rule.shape_b
        return rule, start
    direction = 1
    if spec.directions == "both":
        direction = 1 if rng.integers(2) == 0 else -1
    rule = MonotonicStep(p, direction)
    if p == "number":
        starts = (1, 2, 3, 4) if direction == 1 else (6, 7, 8, 9)
        start = starts[int(rng.integers(4))]
    else:
        start = 0 if direction == 1 else 5
    return rule, start


def _make_vector(values: dict) -> FeatureVector:
    return FeatureVector(values["number"], values["shade"], values["shape"],
                         values["size"], values["positions"])


def sample_test(spec: TestSpec, rng: np.random.Generator | None = None,
                render_cfg: RenderConfig | None = None) -> SCETest:
    """Draw one test for ``spec``.

    The draw order is fixed (rule, constants, sequence distractors, correct
    index, incorrect values, choice distractors) so a seeded generator always
    yields the same test.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    p = spec.predictive
    domain = feature_domain(p)
    if len(domain) - 1 < spec.n - 1:
        raise InfeasibleSpec(f"{p} cannot supply {spec.n - 1} distinct incorrect values")

    rule, value = _sample_rule(spec, rng)
    # validates that the whole sequence plus the answer stays in the domain
    values = [value]
    for _ in range(spec.K):
        try:
            values.append(apply_rule(rule, values[-1]))
        except OutOfRange:
            raise InfeasibleSpec(f"rule {rule} cannot be applied {spec.K} times") from None

    constants = {f: _sample_value(f, rng) for f in spec.constants}

    def image_values(pred_value) -> dict:
        v = dict(constants)
        v[p] = pred_value
        for d in spec.distractors:
            v[d] = _sample_value(d, rng)
        return v

    sequence = [_make_vector(image_values(values[j])) for j in range(spec.K)]

    correct_value = values[spec.K]
    correct_idx = int(rng.integers(spec.n))
    pool = [v for v in domain if v != correct_value]
    picks = rng.choice(len(pool), size=spec.n - 1, replace=False)
    wrong = [pool[int(i)] for i in picks]
    choice_values = wrong[:correct_idx] + [correct_value] + wrong[correct_idx:]
    choices = [_make_vector(image_values(v)) for v in choice_values]

    return SCETest(spec, rule, sequence, choices, correct_idx, render_cfg or RenderConfig())


def condition_grid(predictive: str) -> list[TestSpec]:
    """All 16 distractor subsets for one predictive feature."""
    predictive = canonical_feature(predictive)
    if predictive not in PREDICTIVE_FEATURES:
        raise WrongFeature(f"{predictive!r} cannot be predictive")
    others = sorted(f for f in FEATURES if f != predictive)
    subsets = [tuple(sorted(c)) for r in range(len(others) + 1)
               for c in itertools.combinations(others, r)]
    subsets.sort(key=lambda s: (len(s), s))
    return [TestSpec(predictive, s) for s in subsets]


def full_grid(features: Sequence[str] = PREDICTIVE_FEATURES) -> list[TestSpec]:
    return [spec for f in features for spec in condition_grid(f)]


def easy_hard_conditions() -> list[tuple[str, TestSpec]]:
    """The eight pretraining/testing conditions, in table order."""
    out = []
    for f in ("size", "shade", "number", "shape"):
        grid = condition_grid(f)
        out.append((f"{f}-easy", grid[0]))
        out.append((f"{f}-hard", grid[-1]))
    return out


def write_test(test: SCETest, out_dir: Path, test_id: str) -> dict:
    """Write a test's PGM images and return its manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for j, img in enumerate(test.sequence_images):
        name = f"{test_id}_seq{j}.pgm"
        write_pgm(out_dir / name, img)
        names.append(name)
    for j, img in enumerate(test.choice_images):
        name = f"{test_id}_choice{j}.pgm"
        write_pgm(out_dir / name, img)
        names.append(name)
    return test.manifest(test_id, names)


def write_manifest(path: Path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: Path, render_cfg: RenderConfig | None = None) -> list[SCETest]:
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SCETest.from_manifest(e, render_cfg) for e in entries]
