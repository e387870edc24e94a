"""Convex divergence generators and their Fenchel conjugates.

Four classical generators are supported, each a convex function ``phi`` on
the nonnegative half-line with ``phi(1) = 0`` so that the induced divergence
between discrete distributions vanishes exactly at equality:

================  =====================  ============================
kind              phi(t)                 conjugate phi*(s)
================  =====================  ============================
chi-square        (t - 1)^2              s + s^2/4 for s >= -2, else -1
Kullback-Leibler  t log t - t + 1        e^s - 1
Burg entropy      -log t + t - 1         -log(1 - s) for s < 1
Hellinger         (sqrt(t) - 1)^2        s / (1 - s) for s < 1
================  =====================  ============================

Conjugates are taken over t >= 0, which is the relevant domain when the
argument of ``phi`` is a ratio of probability weights.  Outside their
domain the conjugates return ``+inf`` (a barrier, never an exception) so
that line searches in the dual solvers can treat the boundary naturally.

The Hellinger conjugate is implemented on the open domain ``s < 1``; the
value grows without bound as ``s -> 1``, so there is no finite extension
to the closed endpoint.
"""

from __future__ import annotations

import enum

import numpy as np

__all__ = [
    "DivergenceKind",
    "phi",
    "phi_conjugate",
    "conjugate_derivative",
    "conjugate_second_derivative",
    "scaled_conjugate",
    "scaled_conjugate_grad",
    "divergence_value",
    "curvature_at_one",
]


class DivergenceKind(enum.Enum):
    """The supported divergence generators."""

    CHI_SQUARE = "chi2"
    KL = "kl"
    BURG = "burg"
    HELLINGER = "hellinger"

    @classmethod
    def from_name(cls, name: str) -> "DivergenceKind":
        """Resolve a (case-insensitive) kind name such as ``"chi2"`` or ``"kl"``."""
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "chi2": cls.CHI_SQUARE,
            "chisquare": cls.CHI_SQUARE,
            "kl": cls.KL,
            "kullbackleibler": cls.KL,
            "burg": cls.BURG,
            "hellinger": cls.HELLINGER,
        }
        if key not in aliases:
            raise ValueError(f"unknown divergence kind: {name!r}")
        return aliases[key]


# Second derivative of phi at t = 1.  Controls the local quadratic shape of
# the divergence ball around the uniform weighting, and hence how an
# ambiguity radius translates into estimator variance units.
_CURVATURE = {
    DivergenceKind.CHI_SQUARE: 2.0,
    DivergenceKind.KL: 1.0,
    DivergenceKind.BURG: 1.0,
    DivergenceKind.HELLINGER: 0.5,
}


def curvature_at_one(kind: DivergenceKind) -> float:
    """Return ``phi''(1)`` for the given generator."""
    return _CURVATURE[kind]


def _maybe_scalar(out: np.ndarray, like) -> "float | np.ndarray":
    if np.ndim(like) == 0:
        return float(out)
    return out


def phi(kind: DivergenceKind, t) -> "float | np.ndarray":
    """Evaluate the generator ``phi(t)``.

    Parameters
    ----------
    kind:
        Which generator to evaluate.
    t:
        Nonnegative scalar or array.  Burg entropy additionally requires
        ``t > 0`` since ``-log t`` diverges at zero.

    Raises
    ------
    ValueError
        If ``t`` is outside the generator's domain.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("phi requires t >= 0")
    if kind is DivergenceKind.CHI_SQUARE:
        out = (arr - 1.0) ** 2
    elif kind is DivergenceKind.KL:
        # t log t -> 0 as t -> 0, so phi(0) = 1 by continuity.
        safe = np.where(arr > 0, arr, 1.0)
        out = np.where(arr > 0, arr * np.log(safe) - arr + 1.0, 1.0)
    elif kind is DivergenceKind.BURG:
        if np.any(arr == 0):
            raise ValueError("Burg generator requires t > 0")
        out = -np.log(arr) + arr - 1.0
    elif kind is DivergenceKind.HELLINGER:
        out = (np.sqrt(arr) - 1.0) ** 2
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unhandled kind {kind}")
    return _maybe_scalar(out, t)


def phi_conjugate(kind: DivergenceKind, s) -> "float | np.ndarray":
    """Evaluate the Fenchel conjugate ``phi*(s) = sup_{t>=0} (s t - phi(t))``.

    Values outside the conjugate's domain (``s >= 1`` for Burg and
    Hellinger) return ``+inf`` rather than raising, so callers can use the
    conjugate as a barrier.
    """
    arr = np.asarray(s, dtype=float)
    if kind is DivergenceKind.CHI_SQUARE:
        out = np.where(arr >= -2.0, arr + arr * arr / 4.0, -1.0)
    elif kind is DivergenceKind.KL:
        with np.errstate(over="ignore"):
            out = np.expm1(arr)
    elif kind is DivergenceKind.BURG:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(arr < 1.0, -np.log1p(-np.minimum(arr, 1.0 - 1e-300)), np.inf)
    elif kind is DivergenceKind.HELLINGER:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(arr < 1.0, arr / np.where(arr < 1.0, 1.0 - arr, 1.0), np.inf)
    else:  # pragma: no cover
        raise ValueError(f"unhandled kind {kind}")
    return _maybe_scalar(out, s)


def conjugate_derivative(kind: DivergenceKind, s) -> "float | np.ndarray":
    """First derivative of the conjugate, ``(phi*)'(s)``.

    Nondecreasing and nonnegative on the conjugate's domain; ``+inf``
    outside it.  For the chi-square generator the derivative is 0 on the
    flat branch ``s < -2``.
    """
    arr = np.asarray(s, dtype=float)
    if kind is DivergenceKind.CHI_SQUARE:
        out = np.maximum(0.0, 1.0 + arr / 2.0)
    elif kind is DivergenceKind.KL:
        with np.errstate(over="ignore"):
            out = np.exp(arr)
    elif kind is DivergenceKind.BURG:
        with np.errstate(divide="ignore"):
            out = np.where(arr < 1.0, 1.0 / np.where(arr < 1.0, 1.0 - arr, 1.0), np.inf)
    elif kind is DivergenceKind.HELLINGER:
        with np.errstate(divide="ignore"):
            denom = np.where(arr < 1.0, 1.0 - arr, 1.0)
            out = np.where(arr < 1.0, 1.0 / (denom * denom), np.inf)
    else:  # pragma: no cover
        raise ValueError(f"unhandled kind {kind}")
    return _maybe_scalar(out, s)


def conjugate_second_derivative(kind: DivergenceKind, s) -> "float | np.ndarray":
    """Second derivative of the conjugate where it is twice differentiable."""
    arr = np.asarray(s, dtype=float)
    if kind is DivergenceKind.CHI_SQUARE:
        out = np.where(arr > -2.0, 0.5, 0.0)
    elif kind is DivergenceKind.KL:
        with np.errstate(over="ignore"):
            out = np.exp(arr)
    elif kind is DivergenceKind.BURG:
        with np.errstate(divide="ignore"):
            denom = np.where(arr < 1.0, 1.0 - arr, 1.0)
            out = np.where(arr < 1.0, 1.0 / (denom * denom), np.inf)
    elif kind is DivergenceKind.HELLINGER:
        with np.errstate(divide="ignore"):
            denom = np.where(arr < 1.0, 1.0 - arr, 1.0)
            out = np.where(arr < 1.0, 2.0 / (denom * denom * denom), np.inf)
    else:  # pragma: no cover
        raise ValueError(f"unhandled kind {kind}")
    return _maybe_scalar(out, s)


def scaled_conjugate(kind: DivergenceKind, gamma: float, s) -> "float | np.ndarray":
    """Evaluate the scaled conjugate ``(gamma phi)*(s) = gamma phi*(s / gamma)``.

    At ``gamma = 0`` the convention is ``+inf`` for ``s > 0`` and ``0``
    otherwise, which is the pointwise limit of the scaled conjugate from
    above for every supported generator.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    arr = np.asarray(s, dtype=float)
    if gamma == 0.0:
        out = np.where(arr > 0, np.inf, 0.0)
        return _maybe_scalar(out, s)
    with np.errstate(over="ignore", invalid="ignore"):
        out = gamma * np.asarray(phi_conjugate(kind, arr / gamma), dtype=float)
    return _maybe_scalar(out, s)


def scaled_conjugate_grad(kind: DivergenceKind, gamma: float, s: float) -> "tuple[float, float]":
    """Analytic partials of ``gamma phi*(s / gamma)`` with respect to ``s`` and ``gamma``.

    Requires ``gamma > 0`` and ``s / gamma`` strictly inside the conjugate's
    domain; a boundary point raises so that callers can back off.

    Returns
    -------
    (d_ds, d_dgamma):
        ``d_ds = (phi*)'(u)`` and ``d_dgamma = phi*(u) - u (phi*)'(u)``
        evaluated at ``u = s / gamma``.
    """
    if gamma <= 0:
        raise ValueError("scaled_conjugate_grad requires gamma > 0")
    u = s / gamma
    if kind in (DivergenceKind.BURG, DivergenceKind.HELLINGER) and u >= 1.0:
        raise ValueError("s / gamma is outside the conjugate domain")
    d1 = float(conjugate_derivative(kind, u))
    val = float(phi_conjugate(kind, u))
    if not (np.isfinite(d1) and np.isfinite(val)):
        raise ValueError("conjugate gradient is not finite at this point")
    return d1, val - u * d1


def divergence_value(kind: DivergenceKind, q, p) -> float:
    """Divergence ``d(q, p) = sum_i p_i phi(q_i / p_i)`` between two discrete distributions.

    Parameters
    ----------
    q, p:
        Probability vectors of equal length.  ``q`` must be absolutely
        continuous with respect to ``p``.

    Returns
    -------
    float
        Nonnegative, zero iff ``q == p``.  ``+inf`` is possible for the
        Burg generator when some ``q_i = 0`` with ``p_i > 0``.
    """
    qa = np.asarray(q, dtype=float)
    pa = np.asarray(p, dtype=float)
    if qa.shape != pa.shape or qa.ndim != 1:
        raise ValueError("q and p must be 1-D vectors of equal length")
    if np.any(qa < -1e-12) or np.any(pa < -1e-12):
        raise ValueError("distributions must be nonnegative")
    if abs(qa.sum() - 1.0) > 1e-8 or abs(pa.sum() - 1.0) > 1e-8:
        raise ValueError("distributions must sum to 1")
    qa = np.maximum(qa, 0.0)
    pa = np.maximum(pa, 0.0)
    if np.any((qa > 1e-15) & (pa == 0.0)):
        raise ValueError("q is not absolutely continuous w.r.t. p")
    mask = pa > 0
    t = qa[mask] / pa[mask]
    if kind is DivergenceKind.BURG and np.any(t == 0.0):
        return float("inf")
    return float(np.sum(pa[mask] * np.asarray(phi(kind, t), dtype=float)))
