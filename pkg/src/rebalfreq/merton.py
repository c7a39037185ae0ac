"""Frictionless optimal portfolio and the diffusion geometry around it.

The local mean-variance objective is maximised pointwise by the weight
vector ``w* = Sigma^{-1} mu / gamma``. Everything the small-cost frequency
formulas need is derived here:

* ``sigma_tilde`` -- the diffusion coefficient of ``t -> w*(Y_t)``, obtained
  from the chain rule ``(dw*/dy) g(y)``;
* ``beta`` -- the gap between ``sigma_tilde`` and the diffusion coefficient
  of the weights of an untraded (buy-and-hold) portfolio held at ``w*``:
  ``beta^i = sigma_tilde^i - w*^i (sigma^i - sum_k w*^k sigma^k)``.

``beta`` is stored with the sign the definition produces; downstream
formulas consume only row norms and the quadratic form ``tr(beta' Sigma
beta)``, which are sign-insensitive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .markets import _as_batch, evaluate_coefficients, jacobians

__all__ = [
    "MertonState",
    "AssumptionWarning",
    "merton_state",
    "merton_weights",
    "merton_diffusion",
    "beta_matrix",
    "frictionless_rate",
    "l21_norm",
    "tr_beta_sigma_beta",
]


class AssumptionWarning(UserWarning):
    """Raised (as a warning) when target weights short or leverage."""


def l21_norm(a):
    """Sum over rows of Euclidean row norms, batched over leading axes.

    For a matrix this is ``sum_i sqrt(sum_j a_ij^2)``; the row index is the
    second-to-last axis.
    """
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.sum(a * a, axis=-1)).sum(axis=-1)


def tr_beta_sigma_beta(beta, Sigma):
    """Quadratic form ``tr(beta^T Sigma beta)``, batched over leading axes."""
    return np.einsum("...md,...mk,...kd->...", beta, Sigma, beta)


@dataclass(frozen=True)
class MertonState:
    """Everything derived from the frictionless optimiser at a state point.

    Field shapes carry a leading batch axis iff the query did. Units:
    ``Sigma`` in 1/years, ``sigma_tilde`` and ``beta`` in 1/sqrt(years),
    ``f_rate`` (the frictionless objective rate ``mu' Sigma^{-1} mu / 2
    gamma``) in 1/years. ``assumption_ok`` is True where the weights neither
    short nor leverage (each component in ``[0, 1)``, total in ``(0, 1]``).
    """

    y: np.ndarray
    gamma: float
    w_star: np.ndarray
    Sigma: np.ndarray
    Sigma_inv: np.ndarray
    sigma_tilde: np.ndarray
    beta: np.ndarray
    f_rate: np.ndarray
    assumption_ok: np.ndarray

    @property
    def beta_l21(self):
        return l21_norm(self.beta)


def merton_state(model, y, gamma):
    """Compute the frictionless target and its diffusion geometry at ``y``.

    ``y`` may be a single state of shape ``(p,)`` (or a scalar for ``p = 1``)
    or a batch ``(n, p)``. Requires ``gamma > 0`` and a positive definite
    covariance at every evaluated state.
    """
    if gamma <= 0:
        raise ParameterError(f"risk aversion must be positive, got gamma={gamma}")
    batch, batched = _as_batch(y, model.p)
    coefs = evaluate_coefficients(model, batch)
    mu, sigma, g = coefs.mu, coefs.sigma, coefs.g
    Sigma, Sigma_inv = coefs.Sigma, coefs.Sigma_inv

    w = np.einsum("nij,nj->ni", Sigma_inv, mu) / gamma
    dmu, dsig = jacobians(model, batch)
    # chain rule for w*(y) = Sigma^{-1}(y) mu(y) / gamma:
    #   dw/dy_j = -Sigma^{-1} (dSigma/dy_j) w + Sigma^{-1} (dmu/dy_j) / gamma
    dSw = np.einsum("nklp,nl->nkp", dsig, w)
    dw = np.einsum("nik,nkp->nip", Sigma_inv, dmu / gamma - dSw)
    sigma_tilde = np.einsum("nip,npd->nid", dw, g)

    sbar = np.einsum("nm,nmd->nd", w, sigma)
    beta = sigma_tilde - w[:, :, None] * (sigma - sbar[:, None, :])
    f_rate = 0.5 * np.einsum("nm,nm->n", mu, w)
    ok = (
        np.all((w >= 0.0) & (w < 1.0), axis=1)
        & (w.sum(axis=1) > 0.0)
        & (w.sum(axis=1) <= 1.0)
    )
    if not batched:
        return MertonState(
            batch[0], gamma, w[0], Sigma[0], Sigma_inv[0],
            sigma_tilde[0], beta[0], f_rate[0], ok[0],
        )
    return MertonState(batch, gamma, w, Sigma, Sigma_inv, sigma_tilde, beta, f_rate, ok)


def merton_weights(model, y, gamma):
    """Target weights ``Sigma^{-1}(y) mu(y) / gamma``.

    Emits an :class:`AssumptionWarning` (never clips) when any evaluated
    state shorts or leverages; use :func:`merton_state` to inspect the flag
    programmatically.
    """
    st = merton_state(model, y, gamma)
    if not np.all(st.assumption_ok):
        warnings.warn(
            "target weights short or leverage at some evaluated states "
            "(components outside [0, 1) or total outside (0, 1])",
            AssumptionWarning,
            stacklevel=2,
        )
    return st.w_star


def merton_diffusion(model, y, gamma):
    """Diffusion coefficient of the target-weight process, shape (m, d)."""
    return merton_state(model, y, gamma).sigma_tilde


def beta_matrix(model, y, gamma):
    """Target-versus-drift diffusion gap, shape (m, d); rows in asset order."""
    return merton_state(model, y, gamma).beta


def frictionless_rate(model, y, gamma):
    """Annualised frictionless objective rate ``mu' Sigma^{-1} mu / (2 gamma)``."""
    return merton_state(model, y, gamma).f_rate
