"""Training losses: MSE, residual autocorrelations, and the Ljung-Box
whitening penalty with exact analytic gradients.

Residual conventions
--------------------
A residual block is a ``(batch, n)`` float64 matrix: one lookforward window
per row for a single output channel.  Lagged correlations are normalized by
the zero-lag energy plus a small floor,

    rho_k = sum_{t=k}^{n-1} r_t r_{t-k} / (sum_t r_t^2 + eps),

with no mean subtraction; the whitening statistic per row is

    n (n + 2) * sum_{k=1}^{L} rho_k^2 / (n - k),

and batch values are arithmetic means over rows.  Normalizing by the energy
makes the penalty invariant to residual scale, so it never competes with MSE
over magnitude; ``eps`` removes the 0/0 at a perfect fit, where the value and
gradient are exactly zero.

The 2-D variant correlates an (H, W) residual image at integer lag pairs
(p, q), weighting each squared correlation by the overlap count
(H - p)(W - q) in place of the 1-D (n - k).

Hot kernels are numba-jitted loop builds with vectorized numpy fallbacks
(see :mod:`whitenet.accel`); both builds are exported for the benchmark and
cross-checked in the tests.
"""

from dataclasses import dataclass

import numpy as np

from .accel import NUMBA_ENABLED, njit
from .errors import DomainError, ShapeError


@dataclass
class LossConfig:
    """Weights and window sizes for the composite whitening loss."""

    lam: float = 1.0
    lags: int = 5
    epsilon: float = 1e-8
    two_d_lags: int = 2

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if self.lags < 1:
            raise DomainError(f"lags must be >= 1, got {self.lags}")
        if self.epsilon <= 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if self.two_d_lags < 1:
            raise DomainError(f"two_d_lags must be >= 1, got {self.two_d_lags}")


def _check_residuals(r, min_n=2):
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.ndim != 2:
        raise ShapeError(f"residuals must be 2-D (batch, n), got ndim={r.ndim}")
    if r.shape[1] < min_n:
        raise DomainError(f"residual window length {r.shape[1]} < {min_n}")
    return r


def mse(pred, target):
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def autocorr_1d(r, k, epsilon=1e-8):
    """Energy-normalized lag-``k`` autocorrelation, averaged over rows."""
    r = _check_residuals(r)
    n = r.shape[1]
    if not 0 <= k < n:
        raise DomainError(f"lag {k} out of range for window length {n}")
    s = np.sum(r * r, axis=1) + epsilon
    if k == 0:
        c = np.sum(r * r, axis=1)
    else:
        c = np.sum(r[:, k:] * r[:, :n - k], axis=1)
    return float(np.mean(c / s))


def autocorr_1d_per_lag(r, lags, epsilon=1e-8, subtract_mean=False):
    """Batch-averaged rho_k for k = 1..lags as an array (diagnostic helper).

    ``subtract_mean`` removes each row's mean first; the loss itself never
    does, but the evaluation report can request the centered variant.
    """
    r = _check_residuals(r)
    n = r.shape[1]
    if not 1 <= lags < n:
        raise DomainError(f"lags {lags} out of range for window length {n}")
    if subtract_mean:
        r = r - r.mean(axis=1, keepdims=True)
    s = np.sum(r * r, axis=1) + epsilon
    out = np.empty(lags)
    for k in range(1, lags + 1):
        c = np.sum(r[:, k:] * r[:, :n - k], axis=1)
        out[k - 1] = np.mean(c / s)
    return out


# ---------------------------------------------------------------------------
# 1-D Ljung-Box kernels: loop build (numba) and vectorized numpy build.
# Both return (mean statistic, gradient of the mean statistic w.r.t. r).

def _ljb_value_grad_numpy(r, lags, epsilon):
    b, n = r.shape
    coef = float(n * (n + 2))
    s = np.sum(r * r, axis=1) + epsilon
    stat = np.zeros(b)
    grad = np.zeros_like(r)
    for k in range(1, lags + 1):
        c = np.sum(r[:, k:] * r[:, :n - k], axis=1)
        rho = c / s
        stat += coef * rho * rho / (n - k)
        w = 2.0 * coef * rho / ((n - k) * s)
        grad[:, k:] += w[:, None] * r[:, :n - k]
        grad[:, :n - k] += w[:, None] * r[:, k:]
    grad -= (4.0 * stat / s)[:, None] * r
    grad /= b
    return float(np.mean(stat)), grad


@njit(cache=True)
def _ljb_value_grad_loop(r, lags, epsilon):  # pragma: no cover - jitted
    b, n = r.shape
    coef = float(n * (n + 2))
    stat_sum = 0.0
    grad = np.zeros((b, n))
    for i in range(b):
        s = epsilon
        for t in range(n):
            s += r[i, t] * r[i, t]
        stat = 0.0
        for k in range(1, lags + 1):
            c = 0.0
            for t in range(k, n):
                c += r[i, t] * r[i, t - k]
            rho = c / s
            stat += coef * rho * rho / (n - k)
            w = 2.0 * coef * rho / ((n - k) * s)
            for t in range(k, n):
                grad[i, t] += w * r[i, t - k]
                grad[i, t - k] += w * r[i, t]
        for t in range(n):
            grad[i, t] -= 4.0 * stat * r[i, t] / s
        stat_sum += stat
    inv_b = 1.0 / b
    for i in range(b):
        for t in range(n):
            grad[i, t] *= inv_b
    return stat_sum * inv_b, grad


_ljb_value_grad = _ljb_value_grad_loop if NUMBA_ENABLED else _ljb_value_grad_numpy


def ljb_statistic(r, cfg):
    """Batch-averaged Ljung-Box statistic of residual rows (value only)."""
    r = _check_residuals(r)
    n = r.shape[1]
    if cfg.lags >= n:
        raise DomainError(f"lags {cfg.lags} must be < window length {n}")
    coef = float(n * (n + 2))
    s = np.sum(r * r, axis=1) + cfg.epsilon
    stat = np.zeros(r.shape[0])
    for k in range(1, cfg.lags + 1):
        rho = np.sum(r[:, k:] * r[:, :n - k], axis=1) / s
        stat += coef * rho * rho / (n - k)
    return float(np.mean(stat))


def ljb_loss(r, cfg):
    """Ljung-Box statistic and its exact gradient w.r.t. every residual."""
    r = _check_residuals(r)
    n = r.shape[1]
    if cfg.lags >= n:
        raise DomainError(f"lags {cfg.lags} must be < window length {n}")
    loss, grad = _ljb_value_grad(r, cfg.lags, cfg.epsilon)
    return loss, grad


def composite_loss(pred, target, cfg, n_channels=1):
    """MSE plus lambda times the channel-averaged Ljung-Box penalty.

    ``pred`` and ``target`` are ``(batch, lf * n_channels)`` with the step-major
    layout column = step * n_channels + channel.  With ``lam == 0`` the result
    is bit-identical to :func:`mse`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.shape[1] % n_channels != 0:
        raise ShapeError(
            f"width {pred.shape[1]} not divisible by n_channels {n_channels}")
    lf = pred.shape[1] // n_channels
    loss, grad = mse(pred, target)
    if cfg.lam == 0.0:
        return loss, grad
    if lf < cfg.lags + 1:
        raise DomainError(f"lookforward {lf} too small for {cfg.lags} lags")
    resid = pred - target
    scale = cfg.lam / n_channels
    for m in range(n_channels):
        rm = np.ascontiguousarray(resid[:, m::n_channels])
        lv, lg = _ljb_value_grad(rm, cfg.lags, cfg.epsilon)
        loss += scale * lv
        grad[:, m::n_channels] += scale * lg
    return loss, grad


# ---------------------------------------------------------------------------
# 2-D (spatial) variant for residual images.

def autocorr_2d(residual_image, p, q, epsilon=1e-8):
    """Energy-normalized spatial autocorrelation at lag pair (p, q)."""
    img = as_image(residual_image)
    h, w = img.shape
    if not (0 <= p < h and 0 <= q < w):
        raise DomainError(f"lag ({p}, {q}) out of range for image {img.shape}")
    s = float(np.sum(img * img)) + epsilon
    c = float(np.sum(img[p:, q:] * img[:h - p, :w - q]))
    return c / s


def as_image(x):
    img = np.ascontiguousarray(x, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"residual image must be 2-D, got ndim={img.ndim}")
    return img


def _ljb2d_value_grad_numpy(img, lags, epsilon):
    h, w = img.shape
    n = h * w
    coef = float(n * (n + 2))
    s = float(np.sum(img * img)) + epsilon
    loss = 0.0
    grad = np.zeros_like(img)
    for p in range(lags + 1):
        for q in range(lags + 1):
            if p == 0 and q == 0:
                continue
            nv = (h - p) * (w - q)
            c = float(np.sum(img[p:, q:] * img[:h - p, :w - q]))
            rho = c / s
            loss += coef * rho * rho / nv
            wgt = 2.0 * coef * rho / (nv * s)
            grad[p:, q:] += wgt * img[:h - p, :w - q]
            grad[:h - p, :w - q] += wgt * img[p:, q:]
    grad -= (4.0 * loss / s) * img
    return loss, grad


@njit(cache=True)
def _ljb2d_value_grad_loop(img, lags, epsilon):  # pragma: no cover - jitted
    h, w = img.shape
    n = h * w
    coef = float(n * (n + 2))
    s = epsilon
    for i in range(h):
        for j in range(w):
            s += img[i, j] * img[i, j]
    loss = 0.0
    grad = np.zeros((h, w))
    for p in range(lags + 1):
        for q in range(lags + 1):
            if p == 0 and q == 0:
                continue
            nv = (h - p) * (w - q)
            c = 0.0
            for i in range(p, h):
                for j in range(q, w):
                    c += img[i, j] * img[i - p, j - q]
            rho = c / s
            loss += coef * rho * rho / nv
            wgt = 2.0 * coef * rho / (nv * s)
            for i in range(p, h):
                for j in range(q, w):
                    grad[i, j] += wgt * img[i - p, j - q]
                    grad[i - p, j - q] += wgt * img[i, j]
    for i in range(h):
        for j in range(w):
            grad[i, j] -= 4.0 * loss * img[i, j] / s
    return loss, grad


_ljb2d_value_grad = _ljb2d_value_grad_loop if NUMBA_ENABLED else _ljb2d_value_grad_numpy


def ljb_loss_2d(residual_image, cfg):
    """Spatial Ljung-Box penalty over lag pairs (p, q) in [0, L]^2 \\ (0, 0)."""
    img = as_image(residual_image)
    if cfg.two_d_lags >= min(img.shape):
        raise DomainError(
            f"two_d_lags {cfg.two_d_lags} must be < min of image shape {img.shape}")
    loss, grad = _ljb2d_value_grad(img, cfg.two_d_lags, cfg.epsilon)
    return loss, grad
