"""
Sign Method and Staircase Sign Method.

The staircase method sorts gradient units by magnitude into K percentile
buckets of equal width ``tau = 100 / K`` and weights the units of bucket k by
``(2k + 1) / K`` before multiplying with the gradient sign. Bucket upper
bounds are inclusive and lower bounds exclusive, and the first bucket also
includes the minimum, so a magnitude sitting exactly on a percentile goes to
the lower bucket.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import as_tensor, hadamard, sign, sorted_percentiles


@dataclass(frozen=True)
class StaircaseConfig:
    K: int = 64
    tau: float = field(init=False)

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("staircase count K must be an integer >= 1")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "tau", 100.0 / self.K)

    def levels(self) -> np.ndarray:
        """The admissible weights (2k+1)/K, k = 0..K-1."""
        return (2 * np.arange(self.K) + 1) / self.K


@dataclass(frozen=True)
class StaircaseWeights:
    weights: np.ndarray
    config: StaircaseConfig


def _config(cfg) -> StaircaseConfig:
    if isinstance(cfg, StaircaseConfig):
        return cfg
    return StaircaseConfig(cfg)


def bucket_counts(sorted_abs: np.ndarray, K: int) -> np.ndarray:
    """
    Number of units in each of the K buckets, given magnitudes sorted
    ascending. Bucket k holds the units with ``g^{k tau} < |G| <= g^{(k+1) tau}``
    (the first bucket also takes ``|G| == g^0``).
    """
    thresholds = sorted_percentiles(sorted_abs, np.arange(1, K + 1), K)
    at_or_below = np.searchsorted(sorted_abs, thresholds, side="right")
    # the last threshold is the maximum, so every unit lands somewhere
    at_or_below[-1] = sorted_abs.shape[0]
    return np.diff(at_or_below, prepend=0)


def staircase_weights(G, cfg) -> StaircaseWeights:
    """Assign every gradient unit its staircase weight (same shape as ``G``)."""
    cfg = _config(cfg)
    G = as_tensor(G)
    if G.size == 0:
        raise ValueError("empty tensor")
    mag = np.abs(G).ravel()
    # buckets are decided by value, so equal magnitudes agree whatever their order
    order = np.argsort(mag)
    counts = bucket_counts(mag[order], cfg.K)
    w = np.empty_like(mag)
    w[order] = np.repeat(cfg.levels(), counts)
    return StaircaseWeights(w.reshape(G.shape), cfg)


def staircase_sign(G, cfg) -> np.ndarray:
    """sign(G) weighted elementwise by the staircase weights of |G|."""
    return hadamard(sign(G), staircase_weights(G, cfg).weights)


def sign_method(G) -> np.ndarray:
    return sign(G)
