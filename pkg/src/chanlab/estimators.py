"""Classical channel estimators, their MSE formulas and MMSE oracles."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from chanlab.channel_model import gaussian, rapp_inverse, sample_channels
from chanlab.linalg import psd_cholesky, right_solve, spd_solve

MIN_ESS = 50.0


@dataclass
class AffineEstimator:
    """``x -> weight @ x + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("bias length must match weight rows")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("affine estimator has non-finite entries")

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias


@dataclass
class MseReport:
    empirical_mse: float
    n_samples: int
    theory_mse: Optional[float] = None


def _check_tau(tau):
    if tau * tau != 1.0:
        raise ValueError("pilot tau must satisfy tau**2 == 1")


# ---------------------------------------------------------------------------
# LS
# ---------------------------------------------------------------------------


def ls_estimate(x, tau=1.0):
    _check_tau(tau)
    return np.asarray(x, dtype=np.float64) / tau


def ls_mse_theory(d, sigma_n2):
    if d < 1 or not sigma_n2 > 0:
        raise ValueError("need d >= 1 and sigma_n2 > 0")
    return d * sigma_n2


# ---------------------------------------------------------------------------
# LMMSE, matched and mismatched
# ---------------------------------------------------------------------------


def lmmse_matrix(R, sigma_n2, tau=1.0):
    """Weight ``tau * R (R + sigma_n2 I)^-1`` of the linear MMSE map."""
    _check_tau(tau)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    d = R.shape[0]
    # R (R + s I)^-1 == ((R + s I)^-1 R)^T since both are symmetric
    return tau * spd_solve(R + sigma_n2 * np.eye(d), R).T


def lmmse_estimate(x, cov, sigma_n2, tau=1.0):
    x = np.asarray(x, dtype=np.float64)
    W = lmmse_matrix(cov.as_matrix(x.shape[-1]), sigma_n2, tau)
    return x @ W.T


def lmmse_mse_theory(cov, sigma_n2, d):
    """``tr{R (I + R / sigma_n2)^-1}``."""
    R = cov.as_matrix(d)
    return float(np.trace(right_solve(R, np.eye(d) + R / sigma_n2)))


def lmmse_mismatched_estimate(x, cov_assumed, sigma_n2, tau=1.0):
    """LMMSE map built from an assumed (possibly wrong) covariance."""
    return lmmse_estimate(x, cov_assumed, sigma_n2, tau)


def lm_er_mse_diag(d, sigma2, sigma_e2_list, sigma_n2, include_d_factor=True):
    """MSE of the LMMSE estimator with covariance error, diagonal channel.

    With ``include_d_factor`` the sum term carries the extra factor ``d`` as
    the formula is usually printed; ``include_d_factor=False`` gives the
    variant whose per-antenna terms match a direct derivation. The two agree
    at ``d == 1``.
    """
    e = np.asarray(sigma_e2_list, dtype=np.float64)
    if e.shape != (d,):
        raise ValueError("need one error variance per antenna")
    if np.any(sigma2 + e <= 0):
        raise ValueError("assumed covariance must stay positive")
    base = d * sigma2 * sigma_n2 / (sigma2 + sigma_n2)
    factor = d if include_d_factor else 1
    extra = e**2 * sigma_n2**2 * factor / ((sigma2 + e + sigma_n2) ** 2 * (sigma2 + sigma_n2))
    return float(base + extra.sum())


def lm_er_mse_general(R, R_assumed, sigma_n2):
    """Exact MSE of the assumed-covariance LMMSE map for any true R.

    With ``A = R1 (R1 + s I)^-1`` the error ``A x - h = (A - I) h + A n`` has
    MSE ``tr{(A - I) R (A - I)^T} + s tr{A A^T}``.
    """
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    A = lmmse_matrix(R_assumed, sigma_n2)
    E = A - np.eye(R.shape[0])
    return float(np.trace(E @ R @ E.T) + sigma_n2 * np.trace(A @ A.T))


def mm_er_estimate(x, cov, zeta_cov, sigma_n2, tau=1.0):
    """Linear MMSE map of the broadened (case1) training distribution."""
    return lmmse_estimate(x, cov + zeta_cov, sigma_n2, tau)


def dl_er_mse_diag(d, sigma2, sigma_zeta2_list, sigma_n2):
    z = np.asarray(sigma_zeta2_list, dtype=np.float64)
    if z.shape != (d,):
        raise ValueError("need one error variance per antenna")
    base = d * sigma2 * sigma_n2 / (sigma2 + sigma_n2)
    extra = z**2 * sigma_n2**2 / ((sigma2 + z + sigma_n2) ** 2 * (sigma2 + sigma_n2))
    return float(base + extra.sum())


# ---------------------------------------------------------------------------
# MMSE under Rapp distortion
# ---------------------------------------------------------------------------


def _require_rapp(model):
    if model.distortion is None:
        raise ValueError("model has no Rapp distortion")
    return model.distortion


def mmse_rapp_semianalytic(x, cov, model, tau=None):
    """Exact conditional mean E{h | x} under Rapp-distorted observations.

    The Rapp map is strictly increasing, so inverting it recovers the
    undistorted ``tau * h + n`` and the linear-Gaussian posterior applies.
    """
    g = _require_rapp(model)
    tau = model.tau if tau is None else tau
    u = rapp_inverse(x, g.x_sat, g.omega)
    return lmmse_estimate(u, cov, model.sigma_n2, tau)


def _prior_logpdf(L, H):
    z = solve_triangular(L, H.T, lower=True)
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L)))


def mmse_monte_carlo(x, cov, model, trials, rng, return_ess=False, proposal="mixture"):
    """Self-normalized importance sampling estimate of E{h | x}.

    Each draw is weighted by prior times the Gaussian likelihood of the
    pre-distortion residual over the proposal density. ``proposal="prior"``
    draws everything from N(0, R), which collapses at high SNR;
    ``"mixture"`` (default) draws half from the prior and half from a
    Gaussian of variance ``4 sigma_n^2`` centred on the likelihood peak, and
    weights against the two-component mixture. Falls back to the prior when
    R is singular. Accepts a single observation or an (m, d) batch.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    if proposal not in ("prior", "mixture"):
        raise ValueError(f"unknown proposal {proposal!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = X.shape[1]
    u = X if model.distortion is None else rapp_inverse(X, model.distortion.x_sat, model.distortion.omega)
    s = model.sigma_n2
    L = psd_cholesky(cov.as_matrix(d))
    if np.any(np.diag(L) == 0.0):
        proposal = "prior"
    n_prior = trials if proposal == "prior" else trials // 2
    H_prior = sample_channels(cov, d, n_prior, rng)
    Z = gaussian(rng, (trials - n_prior, d))
    loc_var = 4.0 * s
    if proposal == "mixture":
        lp_prior = _prior_logpdf(L, H_prior)
    out = np.empty_like(X)
    ess = np.empty(X.shape[0])
    for i, ui in enumerate(u):
        if proposal == "prior":
            H = H_prior
            logw = np.zeros(len(H))
        else:
            center = model.tau * ui
            H = np.vstack([H_prior, center + np.sqrt(loc_var) * Z])
            lp = np.concatenate([lp_prior, _prior_logpdf(L, H[n_prior:])])
            dc = H - center
            # common Gaussian normalizers cancel in the self-normalized ratio
            lq_loc = -0.5 * np.einsum("ij,ij->i", dc, dc) / loc_var - 0.5 * d * np.log(loc_var)
            logw = lp - np.logaddexp(lp, lq_loc)
        resid = ui[None, :] - model.tau * H
        logw = logw - 0.5 * np.einsum("ij,ij->i", resid, resid) / s
        w = np.exp(logw - logw.max())
        w /= w.sum()
        ess[i] = 1.0 / np.dot(w, w)
        if ess[i] < MIN_ESS:
            raise ArithmeticError("degenerate importance weights")
        out[i] = w @ H
    if return_ess:
        return (out[0] if single else out), ess
    return out[0] if single else out


# ---------------------------------------------------------------------------
# best linear estimator under Rapp distortion
# ---------------------------------------------------------------------------

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(120)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def rapp_linear_moments(cov, model, d):
    """Cross- and auto-covariance ``(C_hx, C_xx)`` for Rapp observations.

    Uses the Bussgang decomposition for ``C_hx`` and Gauss-Hermite
    quadrature (1-D for variances, 2-D for pairs) for ``C_xx``.
    """
    g = _require_rapp(model)
    R = cov.as_matrix(d)
    Cu = R + model.sigma_n2 * np.eye(d)
    var_u = np.diag(Cu)
    sd = np.sqrt(var_u)
    # E[u g(u)] / var(u) per antenna
    bussgang = np.array([np.sum(_GH_WEIGHTS * (s * _GH_NODES) * g(s * _GH_NODES)) / v for s, v in zip(sd, var_u)])
    C_hx = model.tau * R * bussgang[None, :]
    C_xx = np.empty((d, d))
    z1, z2 = np.meshgrid(_GH_NODES, _GH_NODES, indexing="ij")
    w2 = np.outer(_GH_WEIGHTS, _GH_WEIGHTS)
    for i in range(d):
        C_xx[i, i] = np.sum(_GH_WEIGHTS * g(sd[i] * _GH_NODES) ** 2)
        for j in range(i):
            rho = np.clip(Cu[i, j] / (sd[i] * sd[j]), -1.0, 1.0)
            ui = sd[i] * z1
            uj = sd[j] * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)
            C_xx[i, j] = C_xx[j, i] = np.sum(w2 * g(ui) * g(uj))
    return C_hx, C_xx


def lmmse_rapp_estimate(x, cov, model):
    """Best linear estimator ``C_hx C_xx^-1 x`` for Rapp-distorted pilots."""
    x = np.asarray(x, dtype=np.float64)
    C_hx, C_xx = rapp_linear_moments(cov, model, x.shape[-1])
    return x @ right_solve(C_hx, C_xx).T


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def empirical_mse(predict: Callable, test, theory_mse=None):
    """Mean squared error ``mean ||predict(x) - h||^2`` over ``test``."""
    if len(test) == 0:
        raise ValueError("empty test set")
    err = predict(test.x) - test.h
    mse = float(np.mean(np.sum(err * err, axis=1)))
    return MseReport(mse, len(test), theory_mse)

