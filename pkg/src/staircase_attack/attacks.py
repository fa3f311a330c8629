"""
Iterative L-infinity attacks with optional gradient composers.

One loop covers the whole I-FGSM family. Per iteration the gradient is taken
(optionally averaged over scaled copies, SI, at a randomly resized and padded
input, DI), accumulated with momentum (MI), smoothed with a Gaussian (TI),
and finally turned into an update direction by the staircase sign
(K = 1 is the plain sign method). The step is projected back onto the
epsilon ball around the clean image and onto [-1, 1].
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .staircase import StaircaseConfig, staircase_sign, staircase_weights
from .tensor import as_tensor, clip_linf, clip_range, conv2d_same, gaussian_kernel, l1_normalize

PIXEL_SCALE = 127.5


@dataclass(frozen=True)
class Composers:
    momentum_mu: float | None = None
    di_probability: float | None = None
    ti_kernel_len: int | None = None
    si_copies: int | None = None

    def __post_init__(self):
        p = self.di_probability
        if p is not None and not 0.0 <= p <= 1.0:
            raise ValueError("DI probability must lie in [0, 1]")
        if self.ti_kernel_len is not None and (self.ti_kernel_len < 1 or self.ti_kernel_len % 2 == 0):
            raise ValueError("TI kernel length must be a positive odd integer")
        if self.si_copies is not None and self.si_copies < 1:
            raise ValueError("SI copies must be >= 1")

    def tag(self):
        parts = []
        if self.ti_kernel_len is not None:
            parts.append("T")
        if self.momentum_mu is not None:
            parts.append("M")
        if self.di_probability is not None:
            parts.append("DI")
        if self.si_copies is not None:
            parts.append("SI")
        return "-".join(parts)


@dataclass(frozen=True)
class AttackConfig:
    """
    ``epsilon_255`` is the budget in 0-255 pixel units; internally images
    live in [-1, 1] so the working radius is ``epsilon_255 / 127.5`` and the
    step is that radius divided by the iteration count.
    """

    epsilon_255: float = 16.0
    iterations: int = 10
    staircase: StaircaseConfig = field(default_factory=StaircaseConfig)
    targeted: bool = False
    composers: Composers = field(default_factory=Composers)
    seed: int = 0

    def __post_init__(self):
        if self.epsilon_255 < 0:
            raise ValueError("epsilon_255 must be non-negative")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be an integer >= 1")
        if not isinstance(self.staircase, StaircaseConfig):
            object.__setattr__(self, "staircase", StaircaseConfig(self.staircase))

    @property
    def epsilon(self):
        return self.epsilon_255 / PIXEL_SCALE

    @property
    def alpha(self):
        return self.epsilon / self.iterations

    @property
    def K(self):
        return self.staircase.K

    def name(self):
        base = "I-FGSM" if self.K == 1 else f"I-FGS2M(K={self.K})"
        tag = self.composers.tag()
        return f"{tag}-{base}" if tag else base


@dataclass
class IterationRecord:
    raw_gradient: np.ndarray
    composed_gradient: np.ndarray
    weights: np.ndarray
    update: np.ndarray
    iterate: np.ndarray
    linf: float


@dataclass
class AttackTrace:
    clean: np.ndarray
    records: list
    adversarial: np.ndarray

    @property
    def delta(self):
        return self.adversarial - self.clean


# ---------------------------------------------------------------------------
# composers


def momentum_step(prev, G, mu):
    """mu * prev + G / ||G||_1."""
    prev, G = as_tensor(prev), as_tensor(G)
    if prev.shape != G.shape:
        raise ValueError("momentum accumulator and gradient shapes differ")
    return mu * prev + l1_normalize(G)


@dataclass(frozen=True)
class Placement:
    """Nearest-neighbour resize to ``size`` then zero-pad at (``top``, ``left``)."""

    side: int
    size: int
    top: int
    left: int

    def _source(self):
        return (np.arange(self.size) * self.side) // self.size

    def apply(self, x):
        src = self._source()
        out = np.zeros_like(x)
        out[:, self.top:self.top + self.size, self.left:self.left + self.size] = x[:, src[:, None], src[None, :]]
        return out

    def pullback(self, g):
        """Map a gradient at the transformed input back to source pixels."""
        src = self._source()
        out = np.zeros_like(g)
        # the index map is injective because size < side
        out[:, src[:, None], src[None, :]] = g[:, self.top:self.top + self.size, self.left:self.left + self.size]
        return out


def sample_placement(shape, p, rng):
    """Draw a DI placement, or None when the transform is skipped (probability 1 - p)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("DI probability must lie in [0, 1]")
    _, h, w = shape
    if h != w or h < 4:
        raise ValueError("diverse input needs a square image of side >= 4")
    if rng.random() >= p:
        return None
    lo = min(math.ceil(0.9 * h), h - 1)
    size = int(rng.integers(lo, h))
    top = int(rng.integers(0, h - size, endpoint=True))
    left = int(rng.integers(0, h - size, endpoint=True))
    return Placement(h, size, top, left)


def diverse_input_transform(x, p, rng):
    x = as_tensor(x)
    placement = sample_placement(x.shape, p, rng)
    return x.copy() if placement is None else placement.apply(x)


def ti_smooth(G, kernel_len):
    return conv2d_same(G, gaussian_kernel(kernel_len))


def si_gradient(model, x, label, m):
    """Average input gradient over the copies x / 2^i, i = 0..m-1."""
    if m < 1:
        raise ValueError("SI copies must be >= 1")
    total = 0.0
    for i in range(m):
        total = total + model.input_gradient(clip_range(x / 2.0**i, -1.0, 1.0), label)
    return total / m


# ---------------------------------------------------------------------------
# the loop


def _raw_gradient(model, x, label, composers, rng):
    placement = None
    if composers.di_probability is not None:
        placement = sample_placement(x.shape, composers.di_probability, rng)
    point = x if placement is None else placement.apply(x)
    if composers.si_copies is not None:
        g = si_gradient(model, point, label, composers.si_copies)
    else:
        g = model.input_gradient(point, label)
    return g if placement is None else placement.pullback(g)


def _compose(g, momentum, composers):
    if composers.momentum_mu is not None:
        if np.any(g):
            momentum = momentum_step(momentum, g, composers.momentum_mu)
        else:
            momentum = composers.momentum_mu * momentum
        g = momentum
    if composers.ti_kernel_len is not None:
        g = ti_smooth(g, composers.ti_kernel_len)
    return g, momentum


def _check_labels(cfg, y, y_star):
    if cfg.targeted:
        if y_star is None:
            raise ValueError("targeted attack needs a target label")
        if y_star == y:
            raise ValueError("target label equals the true label")


def run_attack(cfg, model, x, y, y_star=None, rng=None):
    """
    Run ``cfg.iterations`` steps against ``model`` starting from the clean
    image ``x``. Targeted attacks descend the loss of ``y_star``; untargeted
    ones ascend the loss of ``y``.
    """
    _check_labels(cfg, y, y_star)
    x = as_tensor(x)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("clean image must lie in [-1, 1]")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    label = y_star if cfg.targeted else y
    step = -cfg.alpha if cfg.targeted else cfg.alpha
    eps = cfg.epsilon
    comp = cfg.composers

    x_adv = x.copy()
    momentum = np.zeros_like(x)
    records = []
    for _ in range(cfg.iterations):
        g = _raw_gradient(model, x_adv, label, comp, rng)
        composed, momentum = _compose(g, momentum, comp)
        weights = staircase_weights(composed, cfg.staircase).weights
        direction = staircase_sign(composed, cfg.staircase)
        update = step * direction
        x_adv = clip_range(clip_linf(x_adv + update, x, eps), -1.0, 1.0)
        records.append(IterationRecord(g, composed, weights, update, x_adv, float(np.abs(x_adv - x).max())))
    return AttackTrace(x, records, x_adv)


def first_direction(cfg, model, x, y, y_star=None, rng=None):
    """The update direction of the first iteration (before scaling by the step)."""
    _check_labels(cfg, y, y_star)
    x = as_tensor(x)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    label = y_star if cfg.targeted else y
    g = _raw_gradient(model, x, label, cfg.composers, rng)
    composed, _ = _compose(g, np.zeros_like(x), cfg.composers)
    return staircase_sign(composed, cfg.staircase)


def sample_rng(seed, index):
    """Independent per-sample stream, so batch results do not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def attack_dataset(cfg, model, data, indices=None):
    """Attack every selected sample; returns the list of traces in index order."""
    indices = range(len(data)) if indices is None else indices
    traces = []
    for i in indices:
        y_star = None if data.target_labels is None else int(data.target_labels[i])
        traces.append(run_attack(cfg, model, data.images[i], int(data.labels[i]), y_star, rng=sample_rng(cfg.seed, i)))
    return traces
