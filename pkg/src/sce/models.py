"""Encoders, predictors, recurrent contexts and the sequence losses.

Each model variant is a :class:`ModelConfig`; a :class:`ModelBundle` carries
one freshly initialized (or pretrained) set of parameters plus optimizer
state.  Loss functions take a bundle and a list of uint8 images.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import OptimizerConfig, Tape, Tensor, optimizer_step, uniform_fan_in


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class TooShort(ModelError):
    pass


class MissingHead(ModelError):
    pass


IMAGE_SIZE = 64
# stride-2 3x3 conv stages, then average pooling down to a POOL_GRID x POOL_GRID map
ENCODER_CHANNELS = {
    "simple": (16, 32, 64),
    "deep": (32, 64, 128, 128),
    "flat": (8, 16, 32, 32),
}
POOL_GRID = 2
DEEP_HIDDEN = 64
PREDICTOR_HIDDEN = 32
RELATION_HIDDEN = 32


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "simple"
    latent_dim: int = 1

    def __post_init__(self):
        if self.variant not in ENCODER_CHANNELS:
            raise ValueError(f"unknown encoder variant {self.variant!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    predictor: str = "residual"      # residual | non-residual | none
    context: str = "markov"          # markov | rnn | lstm
    loss: str = "infonce"            # infonce | nocontrast | rn
    optimizer: OptimizerConfig = OptimizerConfig()
    negatives: str = "all"           # all | exclude-self
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss not in ("infonce", "nocontrast", "rn"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.context not in ("markov", "rnn", "lstm"):
            raise ValueError(f"unknown context {self.context!r}")
        if self.negatives not in ("all", "exclude-self"):
            raise ValueError(f"unknown negatives mode {self.negatives!r}")
        if self.loss == "rn":
            if self.context != "markov":
                raise ValueError("relation models use no recurrent context")
        elif self.predictor not in ("residual", "non-residual"):
            raise ValueError(f"unknown predictor {self.predictor!r}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.latent_dim

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.variant, "latent_dim": self.latent_dim,
                "predictor": self.predictor, "context": self.context, "loss": self.loss,
                "optimizer": self.optimizer.to_dict(), "negatives": self.negatives,
                "dtype": self.dtype}


_CPC = ModelConfig()
_RN = ModelConfig(predictor="none", loss="rn")

VARIANTS: dict[str, ModelConfig] = {
    "mcpc": _CPC,
    "mcpc-nonres": replace(_CPC, predictor="non-residual"),
    "mcpc-nocontrast": replace(_CPC, loss="nocontrast"),
    "mcpc-d1": _CPC,
    "mcpc-d10": replace(_CPC, encoder=EncoderConfig("simple", 10)),
    "mcpc-d100": replace(_CPC, encoder=EncoderConfig("simple", 100)),
    "mcpc-d1000": replace(_CPC, encoder=EncoderConfig("simple", 1000)),
    "mcpc-sgd": replace(_CPC, optimizer=OptimizerConfig("sgd", 40.0)),
    "rnn-cpc": replace(_CPC, context="rnn"),
    "lstm-cpc": replace(_CPC, context="lstm"),
    "rn": _RN,
    "rn-deep": replace(_RN, encoder=EncoderConfig("deep", 1), optimizer=OptimizerConfig("rmsprop", 4e-6)),
}


def get_variant(name: str, **overrides) -> ModelConfig:
    try:
        cfg = VARIANTS[name]
    except KeyError:
        raise ModelError(f"unknown model variant {name!r}; choose from {', '.join(VARIANTS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def preprocess_images(images: Sequence[np.ndarray], dtype=np.float32) -> np.ndarray:
    """uint8 (H, W) images -> (N, H, W, 1) array scaled to [-1, 1]."""
    arr = np.stack([np.asarray(im) for im in images])
    if arr.ndim != 3 or arr.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        from .autodiff import ShapeMismatch
        raise ShapeMismatch(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} gray images, got {arr.shape[1:]}")
    x = arr.astype(np.float64) * (2.0 / 255.0) - 1.0
    return x.astype(dtype)[..., None]


def _layer_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every parameter, in initialization order."""
    specs = []
    d = cfg.latent_dim
    variant = cfg.encoder.variant
    chans = ENCODER_CHANNELS[variant]
    c_in = 1
    for i, c in enumerate(chans):
        specs.append((f"enc.conv{i}.w", (c, c_in, 3, 3), c_in * 9))
        specs.append((f"enc.conv{i}.b", (c,), c_in * 9))
        c_in = c
    spatial = POOL_GRID if variant != "flat" else IMAGE_SIZE // 2 ** len(chans)
    flat = c_in * spatial * spatial
    if variant != "deep":
        specs += [("enc.fc.w", (d, flat), flat), ("enc.fc.b", (d,), flat)]
    else:
        specs += [("enc.fc0.w", (DEEP_HIDDEN, flat), flat), ("enc.fc0.b", (DEEP_HIDDEN,), flat),
                  ("enc.fc1.w", (d, DEEP_HIDDEN), DEEP_HIDDEN), ("enc.fc1.b", (d,), DEEP_HIDDEN)]
    if cfg.context == "rnn":
        specs += [("ctx.wz", (d, d), d), ("ctx.wc", (d, d), d), ("ctx.b", (d,), d)]
    elif cfg.context == "lstm":
        specs += [("ctx.wx", (4 * d, d), d), ("ctx.wh", (4 * d, d), d), ("ctx.b", (4 * d,), d)]
    if cfg.loss == "rn":
        specs += [("rel.fc0.w", (RELATION_HIDDEN, 2 * d), 2 * d), ("rel.fc0.b", (RELATION_HIDDEN,), 2 * d),
                  ("rel.fc1.w", (1, RELATION_HIDDEN), RELATION_HIDDEN), ("rel.fc1.b", (1,), RELATION_HIDDEN)]
    else:
        h = PREDICTOR_HIDDEN
        specs += [("pred.fc0.w", (h, d), d), ("pred.fc0.b", (h,), d),
                  ("pred.fc1.w", (d, h), h), ("pred.fc1.b", (d,), h)]
    return specs


@dataclass
class ModelBundle:
    config: ModelConfig
    params: dict[str, Tensor]
    seed: int = 0
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def fresh(cls, config: ModelConfig, seed: int) -> "ModelBundle":
        rng = np.random.default_rng(seed)
        dtype = np.dtype(config.dtype)
        params = {name: Tensor(uniform_fan_in(rng, shape, fan_in, dtype), requires_grad=True, name=name)
                  for name, shape, fan_in in _layer_specs(config)}
        return cls(config, params, seed)

    def clone(self) -> "ModelBundle":
        params = {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()}
        state = {k: v.copy() for k, v in self.opt_state.items()}
        return ModelBundle(self.config, params, self.seed, state, self.steps)

    def astype(self, dtype: str) -> "ModelBundle":
        cfg = replace(self.config, dtype=dtype)
        params = {k: Tensor(p.data.astype(dtype), requires_grad=True, name=k) for k, p in self.params.items()}
        return ModelBundle(cfg, params, self.seed, copy.deepcopy(self.opt_state), self.steps)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_bytes(self) -> bytes:
        parts = [self.params[k].data.tobytes() for k in sorted(self.params)]
        parts += [self.opt_state[k].tobytes() for k in sorted(self.opt_state)]
        return b"".join(parts)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.config.optimizer, self.opt_state, self.params)
        self.steps += 1
        self.zero_grad()

    # -- forward pieces ---------------------------------------------------

    def encode(self, tape: Tape, x: Tensor) -> Tensor:
        """Latents ``(N, d)`` for preprocessed images ``(N, 64, 64, 1)``."""
        p = self.params
        variant = self.config.encoder.variant
        h = x
        for i in range(len(ENCODER_CHANNELS[variant])):
            h = tape.relu(tape.conv2d(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride=2, pad=1))
        if variant != "flat":
            h = tape.avg_pool(h, h.shape[1] // POOL_GRID)
        h = tape.reshape(h, (h.shape[0], -1))
        if variant != "deep":
            return tape.linear(h, p["enc.fc.w"], p["enc.fc.b"])
        h = tape.relu(tape.linear(h, p["enc.fc0.w"], p["enc.fc0.b"]))
        return tape.linear(h, p["enc.fc1.w"], p["enc.fc1.b"])

    def contexts(self, tape: Tape, z: Tensor) -> Tensor:
        """Recurrent contexts ``(m, d)`` from zero initial state (identity for markov)."""
        kind = self.config.context
        if kind == "markov":
            return z
        p = self.params
        d = self.config.latent_dim
        out = []
        if kind == "rnn":
            c = None
            for j in range(z.shape[0]):
                pre = tape.linear(tape.take_rows(z, [j]), p["ctx.wz"], p["ctx.b"])
                if c is not None:
                    pre = tape.add(pre, tape.linear(c, p["ctx.wc"]))
                c = tape.tanh(pre)
                out.append(c)
        else:
            h = cell = None
            for j in range(z.shape[0]):
                gates = tape.linear(tape.take_rows(z, [j]), p["ctx.wx"], p["ctx.b"])
                if h is not None:
                    gates = tape.add(gates, tape.linear(h, p["ctx.wh"]))
                i = tape.sigmoid(tape.take_cols(gates, 0, d))
                f = tape.sigmoid(tape.take_cols(gates, d, 2 * d))
                g = tape.tanh(tape.take_cols(gates, 2 * d, 3 * d))
                o = tape.sigmoid(tape.take_cols(gates, 3 * d, 4 * d))
                ig = tape.mul(i, g)
                cell = ig if cell is None else tape.add(tape.mul(f, cell), ig)
                h = tape.mul(o, tape.tanh(cell))
                out.append(h)
        return tape.concat(out, axis=0)

    def predict(self, tape: Tape, src: Tensor) -> Tensor:
        p = self.params
        if "pred.fc0.w" not in p:
            raise ModelError("this model has no predictor")
        h = tape.relu(tape.linear(src, p["pred.fc0.w"], p["pred.fc0.b"]))
        delta = tape.linear(h, p["pred.fc1.w"], p["pred.fc1.b"])
        if self.config.predictor == "residual":
            return tape.add(src, delta)
        return delta

    def relate(self, tape: Tape, pairs: Tensor) -> Tensor:
        p = self.params
        if "rel.fc0.w" not in p:
            raise MissingHead("this model has no relation head")
        h = tape.relu(tape.linear(pairs, p["rel.fc0.w"], p["rel.fc0.b"]))
        return tape.sigmoid(tape.linear(h, p["rel.fc1.w"], p["rel.fc1.b"]))

    def epsilons(self, tape: Tape, z: Tensor, ctx: Tensor) -> Tensor:
        """Prediction-error matrix ``(m-1, m)``: row j predicts from source j."""
        m = z.shape[0]
        src = tape.take_rows(ctx, list(range(m - 1)))
        return tape.pairwise_sqdist(self.predict(tape, src), z)

    def loss_from_latents(self, tape: Tape, z: Tensor, ctx: Tensor | None = None) -> Tensor:
        m = z.shape[0]
        if m < 2:
            raise TooShort(f"need at least 2 images, got {m}")
        loss = self.config.loss
        if loss == "rn":
            return _rn_from_latents(self, tape, z)
        eps = self.epsilons(tape, z, z if ctx is None else ctx)
        pos = tape.take_elements(eps, range(m - 1), range(1, m))
        if loss == "nocontrast":
            return tape.mean(pos)
        mask = None
        if self.config.negatives == "exclude-self":
            mask = ~np.eye(m - 1, m, dtype=bool)
        lse = tape.logsumexp(tape.scale(eps, -1.0), mask)
        return tape.mean(tape.add(pos, lse))

    def forward_loss(self, tape: Tape, images: Sequence[np.ndarray]) -> Tensor:
        x = Tensor(preprocess_images(images, self.dtype))
        z = self.encode(tape, x)
        ctx = self.contexts(tape, z) if self.config.loss != "rn" else None
        return self.loss_from_latents(tape, z, ctx)

    def train_step(self, images: Sequence[np.ndarray]) -> float:
        """One optimization step on ``images``; returns the pre-step loss."""
        self.zero_grad()
        tape = Tape()
        loss = self.forward_loss(tape, images)
        tape.backward(loss)
        self.step()
        return loss.item()


def rn_pairs(m: int) -> tuple[list[int], list[int], np.ndarray]:
    """All ordered pairs a != b with target 1 iff b == a + 1."""
    a_idx, b_idx, y = [], [], []
    for a in range(m):
        for b in range(m):
            if a != b:
                a_idx.append(a)
                b_idx.append(b)
                y.append(1.0 if b == a + 1 else 0.0)
    return a_idx, b_idx, np.asarray(y)


def _rn_from_latents(bundle: ModelBundle, tape: Tape, z: Tensor) -> Tensor:
    m = z.shape[0]
    a_idx, b_idx, y = rn_pairs(m)
    pairs = tape.concat([tape.take_rows(z, a_idx), tape.take_rows(z, b_idx)], axis=1)
    scores = bundle.relate(tape, pairs)
    err = tape.shift(scores, -y[:, None].astype(bundle.dtype))
    return tape.mean(tape.square(err))


# -- plain-value entry points -----------------------------------------------

def encode_sequence(bundle: ModelBundle, images: Sequence[np.ndarray]):
    """Latents (and contexts, for recurrent variants) as numpy arrays."""
    tape = Tape()
    z = bundle.encode(tape, Tensor(preprocess_images(images, bundle.dtype)))
    if bundle.config.context == "markov" or bundle.config.loss == "rn":
        return z.data
    return z.data, bundle.contexts(tape, z).data


def prediction_error(z_pred, z_b) -> float:
    """Squared Euclidean distance between a prediction and a target latent."""
    a = np.atleast_1d(np.asarray(z_pred, dtype=np.float64))
    b = np.atleast_1d(np.asarray(z_b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def infonce_from_epsilons(eps: np.ndarray, exclude_self: bool = False) -> float:
    """Contrastive loss from an ``(m-1, m)`` matrix of prediction errors."""
    eps = np.asarray(eps, dtype=np.float64)
    k, m = eps.shape
    if m < 2 or k != m - 1:
        raise TooShort("need an (m-1, m) error matrix with m >= 2")
    logits = -eps
    if exclude_self:
        logits = np.where(np.eye(k, m, dtype=bool), -np.inf, logits)
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    pos = eps[np.arange(k), np.arange(1, m)]
    return float(np.mean(pos + lse))


def _check_loss(bundle: ModelBundle, images, kind: str) -> float:
    if len(images) < 2:
        raise TooShort(f"need at least 2 images, got {len(images)}")
    cfg = bundle.config
    if cfg.loss != kind:
        if kind == "rn":
            raise MissingHead("bundle has no relation head")
        bundle = ModelBundle(replace(cfg, loss=kind), bundle.params, bundle.seed)
    return bundle.forward_loss(Tape(), images).item()


def infonce_loss(bundle: ModelBundle, images: Sequence[np.ndarray]) -> float:
    return _check_loss(bundle, images, "infonce")


def nocontrast_loss(bundle: ModelBundle, images: Sequence[np.ndarray]) -> float:
    return _check_loss(bundle, images, "nocontrast")


def rn_loss(bundle: ModelBundle, images: Sequence[np.ndarray]) -> float:
    return _check_loss(bundle, images, "rn")
