"""Coopetitive soft gating.

Turns a tuple of error scores ``Omega`` into weights that sum to one::

    gate(Omega, w) = 1 / ((w**eta + eps) * sum_n 1 / (Omega_n**eta + eps))

``eta = 0`` gives plain averaging, large ``eta`` approaches hard gating on the
smallest score.  The score tuple is divided by its smallest positive entry
before exponentiation.  At ``eps = 0`` this is an exact identity of the
formula; with ``eps > 0`` it keeps ``eps`` a pure division guard instead of a
hidden, scale-dependent cap on ``eta`` (``0.1**50`` would otherwise vanish
under ``eps = 1e-10``).
"""

from __future__ import annotations

import numpy as np

from .core import DomainError

EPSILON = 1e-10


def _check(scores, eta):
    if np.any(np.asarray(eta) < 0):
        raise DomainError(f"eta must be >= 0, got {eta}")
    if np.any(scores < 0):
        raise DomainError("scores must be >= 0")


def _reference(scores, mask, axis):
    positive = scores > 0 if mask is None else (scores > 0) & mask
    ref = np.min(np.where(positive, scores, np.inf), axis=axis, keepdims=True)
    return np.where(np.isfinite(ref), ref, 1.0)


def soft_gate_all(scores, eta, epsilon: float = EPSILON, axis: int = -1, mask=None) -> np.ndarray:
    """Weights for every score along ``axis``.

    Parameters
    ----------
    scores : array_like
        Nonnegative error scores; lower is better.
    eta : float or array_like
        Gating exponent, broadcast against ``scores``.
    epsilon : float
        Division guard.
    axis : int
        Axis holding the competing set.
    mask : array_like of bool, optional
        Only ``True`` entries compete; masked-out entries get weight 0.  A
        competing set with no members yields all zeros.

    Returns
    -------
    numpy.ndarray
        Same shape as ``scores``; sums to one along ``axis`` for every
        nonempty competing set.
    """
    scaled, mask = prepare_scores(scores, mask, axis)
    return gate_prepared(scaled, mask, eta, epsilon, axis)


def prepare_scores(scores, mask=None, axis: int = -1):
    """Validate and rescale a competing set; returns ``(scaled, mask)``.

    The exponent-independent half of :func:`soft_gate_all`, for callers that
    gate the same scores under many exponents.
    """
    scores = np.asarray(scores, dtype=float)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if np.any((scores < 0) if mask is None else (scores < 0) & mask):
        raise DomainError("scores must be >= 0")
    if mask is not None:
        scores = np.where(mask, scores, 1.0)
    return scores / _reference(scores, mask, axis), mask


def gate_prepared(scaled, mask, eta, epsilon: float = EPSILON, axis: int = -1) -> np.ndarray:
    if np.any(np.asarray(eta) < 0):
        raise DomainError(f"eta must be >= 0, got {eta}")
    with np.errstate(over="ignore"):
        inv = 1.0 / (np.power(scaled, eta) + epsilon)
    if mask is not None:
        inv = np.where(mask, inv, 0.0)
    total = inv.sum(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, inv / total, 0.0)


def soft_gate(omega: float, scores, eta: float, epsilon: float = EPSILON) -> float:
    """Weight of a single score ``omega`` against the tuple ``scores``.

    ``omega`` is normally an element of ``scores``; only then do the values
    over all elements sum to one.
    """
    scores = np.atleast_1d(np.asarray(scores, dtype=float))
    if scores.ndim != 1 or scores.size == 0:
        raise DomainError("scores must be a nonempty 1-d tuple")
    if omega < 0:
        raise DomainError("omega must be >= 0")
    _check(scores, eta)
    ref = _reference(scores, None, -1)[0]
    with np.errstate(over="ignore"):
        own = np.power(omega / ref, eta) + epsilon
        denom = np.sum(1.0 / (np.power(scores / ref, eta) + epsilon))
    return float(1.0 / (own * denom))
