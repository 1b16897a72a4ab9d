"""Pure-NumPy likelihood kernel (fallback when the compiled one is absent).

Both kernels implement the same contract: given per-codec natural
parameters and an aggregated directed-question table, return the total
negative log-likelihood and, optionally, its gradient with respect to the
natural parameters (alpha, beta, gamma1, gamma2 per codec).

Each side's log-probability is evaluated from its own tail (log_ndtr),
never as log(1 - p): the complement loses all precision once p rounds to
within one ulp of 1, which would put a staircase in the objective right
where fits with strong preferences operate. Probabilities are clamped
into [eps, 1 - eps]; the gradient of a clamped term is exactly zero,
consistent with the clamped objective.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _side_distortion(params, codec, r, boosted):
    """Distortion of one side and its partials w.r.t. the side's params."""
    is_stim = codec >= 0
    idx = np.where(is_stim, codec, 0)
    alpha = params[idx, 0]
    beta = params[idx, 1]
    gamma1 = params[idx, 2]
    gamma2 = params[idx, 3]

    e = alpha * np.exp(-beta * r)
    chain = np.where(boosted == 1, gamma1 + 2.0 * gamma2 * e, 1.0)
    d = np.where(boosted == 1, gamma1 * e + gamma2 * e * e, e)

    d_alpha = chain * e / alpha
    d_beta = -chain * r * e
    d_gamma1 = np.where(boosted == 1, e, 0.0)
    d_gamma2 = np.where(boosted == 1, e * e, 0.0)

    zero = ~is_stim
    d = np.where(zero, 0.0, d)
    d_alpha = np.where(zero, 0.0, d_alpha)
    d_beta = np.where(zero, 0.0, d_beta)
    d_gamma1 = np.where(zero, 0.0, d_gamma1)
    d_gamma2 = np.where(zero, 0.0, d_gamma2)
    return d, np.stack([d_alpha, d_beta, d_gamma1, d_gamma2], axis=1)


def nll_and_grad(
    params: np.ndarray,
    codec_left: np.ndarray,
    r_left: np.ndarray,
    codec_right: np.ndarray,
    r_right: np.ndarray,
    boosted: np.ndarray,
    n_left: np.ndarray,
    n_right: np.ndarray,
    k: float,
    eps: float = 1e-12,
    want_grad: bool = True,
):
    """Return (nll, grad) with grad of shape (K, 4), or (nll, None)."""
    params = np.asarray(params, dtype=float)
    d_l, j_l = _side_distortion(params, codec_left, r_left, boosted)
    d_r, j_r = _side_distortion(params, codec_right, r_right, boosted)

    z = k * (d_l - d_r)
    lp = log_ndtr(z)            # log P(left judged more distorted)
    lq = log_ndtr(-z)           # log of the complement, tail-accurate
    log_eps = np.log(eps)
    log_1m_eps = np.log1p(-eps)
    clamp_lo = lp < log_eps     # p below eps
    clamp_hi = lq < log_eps     # p above 1 - eps
    log_p = np.where(clamp_lo, log_eps, np.where(clamp_hi, log_1m_eps, lp))
    log_q = np.where(clamp_hi, log_eps, np.where(clamp_lo, log_1m_eps, lq))

    nll = float(-(n_left * log_p + n_right * log_q).sum())
    if not want_grad:
        return nll, None

    # phi / p and phi / (1 - p) in log space; clamped rows are flat
    log_phi = -0.5 * z * z - _LOG_SQRT_2PI
    g_z = np.where(clamp_lo | clamp_hi, 0.0,
                   -n_left * np.exp(log_phi - log_p)
                   + n_right * np.exp(log_phi - log_q))
    g_delta = k * g_z

    grad = np.zeros_like(params)
    valid_l = codec_left >= 0
    valid_r = codec_right >= 0
    np.add.at(grad, codec_left[valid_l],
              (g_delta[valid_l, None] * j_l[valid_l]))
    np.add.at(grad, codec_right[valid_r],
              (-g_delta[valid_r, None] * j_r[valid_r]))
    return nll, grad
