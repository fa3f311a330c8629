"""
Success rates, perturbation-budget statistics and gradient alignment.

Success is judged by the argmax of logits. A targeted attack succeeds on a
model when it predicts the preset target. An untargeted one succeeds when
the prediction differs from the true label. Samples that were already
misclassified stay in the denominator.
"""

from dataclasses import dataclass, field

import numpy as np

from .attacks import PIXEL_SCALE, first_direction, sample_rng
from .models import Ensemble
from .staircase import StaircaseConfig, bucket_counts
from .tensor import cosine_similarity


@dataclass
class CosineStats:
    mean: float
    std: float
    n: int
    skipped: int = 0


@dataclass
class EvalReport:
    attack: str
    n: int
    per_model_counts: list
    per_model_rates: list
    ensemble_rate: float
    aoe_rate: float
    holdout_count: int
    holdout_rate: float
    mean_linf_255: float = float("nan")
    max_linf_255: float = float("nan")
    cosine: dict = field(default_factory=dict)


def _hits(model, adv, data, targeted):
    pred = model.predict_batch(adv)
    return pred == data.target_labels if targeted else pred != data.labels


def success_rates(adv, data, whitebox, holdout, targeted, attack=""):
    """Ensemble / AoE / Hold-out rates of ``adv`` (aligned with ``data``)."""
    adv = np.asarray(adv, dtype=np.float64)
    if len(adv) != len(data):
        raise ValueError("adversarial set and dataset differ in length")
    if targeted and data.target_labels is None:
        raise ValueError("targeted evaluation needs target labels")
    whitebox = list(whitebox)
    if not whitebox:
        raise ValueError("need at least one white-box model")
    n = len(data)
    counts = [int(_hits(m, adv, data, targeted).sum()) for m in whitebox]
    rates = [c / n for c in counts]
    ens = Ensemble.uniform(whitebox)
    ens_rate = float(_hits(ens, adv, data, targeted).sum()) / n
    hold = int(_hits(holdout, adv, data, targeted).sum())
    delta = np.abs(adv - data.images).reshape(n, -1).max(axis=1) * PIXEL_SCALE
    return EvalReport(
        attack=attack,
        n=n,
        per_model_counts=counts,
        per_model_rates=rates,
        ensemble_rate=ens_rate,
        aoe_rate=float(np.mean(rates)),
        holdout_count=hold,
        holdout_rate=hold / n,
        mean_linf_255=float(delta.mean()),
        max_linf_255=float(delta.max()),
    )


@dataclass
class BudgetStats:
    max_linf_255: float
    within_budget: bool
    mean_abs_ratio: float  # mean final |delta| / epsilon
    at_boundary: float  # fraction of final pixels with |delta| == epsilon (to 1e-12)
    quantiles: dict


def linf_report(traces, epsilon_255):
    """Largest perturbation over every iterate, and the final |delta| distribution."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces")
    eps = epsilon_255 / PIXEL_SCALE
    worst = max(r.linf for t in traces for r in t.records) if any(t.records for t in traces) else 0.0
    final = np.concatenate([np.abs(t.delta).ravel() for t in traces])
    ratio = final / eps if eps > 0 else np.zeros_like(final)
    return BudgetStats(
        max_linf_255=worst * PIXEL_SCALE,
        within_budget=bool(worst <= eps + 1e-12),
        mean_abs_ratio=float(ratio.mean()),
        at_boundary=float(np.mean(np.abs(final - eps) <= 1e-12)),
        quantiles={q: float(np.quantile(ratio, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)},
    )


def cosine_report(reference, data, directions, targeted=False):
    """
    Mean/std cosine between each direction source and the raw gradient of
    ``reference`` at the clean input. ``directions`` maps a name to a callable
    ``(x, y, y_star, index) -> direction``. Samples where either vector is
    zero are skipped and counted.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    values = {name: [] for name in directions}
    skipped = {name: 0 for name in directions}
    for i in range(len(data)):
        x, y = data.images[i], int(data.labels[i])
        y_star = None if data.target_labels is None else int(data.target_labels[i])
        ref = reference.input_gradient(x, y_star if targeted else y)
        for name, fn in directions.items():
            d = fn(x, y, y_star, i)
            if not np.any(ref) or not np.any(d):
                skipped[name] += 1
                continue
            values[name].append(cosine_similarity(d, ref))
    out = {}
    for name, vals in values.items():
        arr = np.array(vals)
        out[name] = CosineStats(
            float(arr.mean()) if arr.size else float("nan"),
            float(arr.std()) if arr.size else float("nan"),
            int(arr.size),
            skipped[name],
        )
    return out


def attack_direction(cfg, model):
    """Direction source for :func:`cosine_report`: first-iteration update of ``cfg`` on ``model``."""

    def direction(x, y, y_star, index):
        return first_direction(cfg, model, x, y, y_star, rng=sample_rng(cfg.seed, index))

    return direction


def gaussian_alignment(num, dim, K=64, seed=0, chunk=500):
    """
    Cosine of the SM and S2M(K) directions with i.i.d. standard normal
    gradients. Staircase weights depend only on each unit's magnitude rank
    and the cosine is permutation invariant, so every row is sorted once and
    scored in sorted order.
    """
    cfg = StaircaseConfig(K)
    levels = cfg.levels()
    rng = np.random.default_rng(seed)
    sm, s2m = np.empty(num), np.empty(num)
    done = 0
    while done < num:
        b = min(chunk, num - done)
        mag = np.sort(np.abs(rng.standard_normal((b, dim))), axis=1)
        norm = np.sqrt(np.einsum("ij,ij->i", mag, mag))
        sm[done:done + b] = mag.sum(axis=1) / (norm * np.sqrt(dim))
        for r in range(b):
            w = np.repeat(levels, bucket_counts(mag[r], K))
            s2m[done + r] = mag[r] @ w / (norm[r] * np.sqrt(w @ w))
        done += b
    return (
        CosineStats(float(sm.mean()), float(sm.std()), num),
        CosineStats(float(s2m.mean()), float(s2m.std()), num),
    )
