"""
Dense float64 array primitives shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects. Every function here is pure: it
never mutates its arguments and always returns a fresh array. Non-finite
values are rejected on entry.
"""

import numpy as np


def as_tensor(values) -> np.ndarray:
    """Return ``values`` as a finite float64 array (copy if needed)."""
    t = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def sorted_percentiles(sorted_values: np.ndarray, numerators, denominator: int) -> np.ndarray:
    """
    Linear-interpolation percentiles of an already sorted 1-D array.

    The percentile levels are given as exact fractions ``numerators[j] /
    denominator`` of 100 %, so the rank ``(N - 1) * numerator / denominator``
    is split into integer and fractional parts without rounding error.
    """
    n = sorted_values.shape[0]
    num = np.asarray(numerators, dtype=np.int64) * (n - 1)
    lower = num // denominator
    frac = (num % denominator) / denominator
    upper = np.minimum(lower + 1, n - 1)
    a = sorted_values[lower]
    return a + frac * (sorted_values[upper] - a)


def percentile(values, p: float) -> float:
    """
    Percentile of the flattened ``values`` using linear interpolation between
    closest ranks: with sorted ``a`` and ``r = p/100 * (N-1)``,
    ``a[floor(r)] + (r - floor(r)) * (a[floor(r)+1] - a[floor(r)])``.
    """
    a = np.sort(as_tensor(values).ravel())
    if a.size == 0:
        raise ValueError("empty tensor")
    if not 0.0 <= p <= 100.0:
        raise ValueError("percentile out of range")
    r = p / 100.0 * (a.size - 1)
    lo = int(np.floor(r))
    if lo >= a.size - 1:
        return float(a[-1])
    return float(a[lo] + (r - lo) * (a[lo + 1] - a[lo]))


def sign(t) -> np.ndarray:
    # np.sign maps 0.0 (and -0.0) to 0.0
    return np.sign(as_tensor(t))


def hadamard(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b)
    return a * b


def clip_linf(candidate, anchor, eps: float) -> np.ndarray:
    """Project ``candidate`` onto the L-infinity ball of radius ``eps`` around ``anchor``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    candidate, anchor = as_tensor(candidate), as_tensor(anchor)
    _same_shape(candidate, anchor)
    return np.minimum(anchor + eps, np.maximum(anchor - eps, candidate))


def clip_range(t, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ValueError("clip_range requires lo <= hi")
    return np.minimum(hi, np.maximum(lo, as_tensor(t)))


def l1_normalize(t) -> np.ndarray:
    t = as_tensor(t)
    norm = np.abs(t).sum()
    if norm == 0:
        raise ValueError("zero L1 norm")
    return t / norm


def cosine_similarity(a, b) -> float:
    a, b = as_tensor(a).ravel(), as_tensor(b).ravel()
    _same_shape(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("undefined cosine")
    return float(np.dot(a, b) / (na * nb))


def conv2d_same(t, kernel) -> np.ndarray:
    """
    Per-channel 2-D cross-correlation of a C x H x W tensor with a k x k
    kernel, zero padded by (k-1)/2 so the output keeps the input shape.
    """
    t, kernel = as_tensor(t), as_tensor(kernel)
    if t.ndim != 3 or kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError("conv2d_same expects a CxHxW tensor and a square kernel")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ValueError("kernel side must be odd")
    _, h, w = t.shape
    if k > min(h, w):
        raise ValueError("kernel larger than image")
    pad = (k - 1) // 2
    padded = np.pad(t, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros_like(t)
    for i in range(k):
        for j in range(k):
            out += kernel[i, j] * padded[:, i:i + h, j:j + w]
    return out


def gaussian_kernel(length: int, sigma: float | None = None) -> np.ndarray:
    """Square Gaussian kernel of odd side ``length`` normalized to unit sum (sigma defaults to length/3)."""
    if length < 1 or length % 2 == 0:
        raise ValueError("kernel length must be a positive odd integer")
    sigma = length / 3.0 if sigma is None else sigma
    r = np.arange(length) - (length - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()
