"""Channels, pilot observations and training/test datasets.

All randomness flows through an explicitly passed ``numpy.random.Generator``
backed by the counter-based Philox bit generator. Gaussian variates are
produced with a Box-Muller transform over its uniform stream, so a given
seed reproduces the same bytes on every platform.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from chanlab.linalg import LinAlgError, psd_cholesky

PSD_EPS = 1e-10


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def make_rng(seed, *stream):
    """Philox generator keyed by ``seed`` and an optional sub-stream path.

    ``make_rng(7, 3)`` and ``make_rng(7, 4)`` are statistically independent,
    which is how sweep points get their own streams.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def gaussian(rng, shape):
    """Standard normal array of ``shape`` via Box-Muller."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceSpec:
    """Channel covariance: ``sigma2 * I`` (diagonal) or an explicit matrix."""

    kind: str = "diagonal"
    sigma2: float = 1.0
    matrix: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "diagonal":
            if not self.sigma2 > 0:
                raise ValueError("diagonal covariance needs sigma2 > 0")
        elif self.kind == "full":
            m = np.asarray(self.matrix, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("full covariance needs a square matrix")
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError("covariance not symmetric")
            if np.linalg.eigvalsh(m).min() < -PSD_EPS * max(1.0, np.abs(m).max()):
                raise ValueError("covariance not PSD")
            object.__setattr__(self, "matrix", m)
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    @classmethod
    def diagonal(cls, sigma2=1.0):
        return cls("diagonal", float(sigma2))

    @classmethod
    def full(cls, matrix):
        return cls("full", matrix=np.array(matrix, dtype=np.float64))

    def as_matrix(self, d):
        if self.kind == "diagonal":
            return self.sigma2 * np.eye(d)
        if self.matrix.shape[0] != d:
            raise ValueError(f"covariance is {self.matrix.shape[0]}x{self.matrix.shape[0]}, expected d={d}")
        return self.matrix.copy()

    def variances(self, d):
        return np.diag(self.as_matrix(d)).copy()

    def __add__(self, other):
        if self.kind == other.kind == "diagonal":
            return CovarianceSpec.diagonal(self.sigma2 + other.sigma2)
        if self.kind == "full":
            d = self.matrix.shape[0]
        else:
            d = other.matrix.shape[0]
        return CovarianceSpec.full(self.as_matrix(d) + other.as_matrix(d))


@dataclass(frozen=True)
class Rapp:
    """Solid-state amplifier compression with saturation level and smoothness."""

    x_sat: float = 1.5
    omega: float = 1.0

    def __post_init__(self):
        if not self.x_sat > 0:
            raise ValueError("rapp x_sat must be positive")
        if not self.omega >= 1:
            raise ValueError("rapp omega must be >= 1")

    def __call__(self, u):
        return rapp(u, self.x_sat, self.omega)

    def inverse(self, x):
        return rapp_inverse(x, self.x_sat, self.omega)


@dataclass(frozen=True)
class ObservationModel:
    """Pilot observation ``x = g(tau * h + n)``; ``distortion=None`` means g = identity."""

    sigma_n2: float
    tau: float = 1.0
    distortion: Optional[Rapp] = None

    def __post_init__(self):
        if self.tau not in (1.0, -1.0):
            raise ValueError("pilot tau must be +1 or -1")
        if not self.sigma_n2 > 0:
            raise ValueError("noise variance must be positive")

    @property
    def is_linear(self):
        return self.distortion is None

    @classmethod
    def from_snr_db(cls, snr_db, tau=1.0, distortion=None):
        return cls(sigma_n2=snr_db_to_noise(snr_db), tau=tau, distortion=distortion)


@dataclass(frozen=True)
class MismatchSpec:
    """Training-data mismatch: case1 (``h_er = h + zeta``) or case2 (``h = h_er + zeta``)."""

    case: str
    zeta_cov: CovarianceSpec

    def __post_init__(self):
        if self.case not in ("case1", "case2"):
            raise ValueError(f"unknown mismatch case {self.case!r}")


@dataclass
class SampleSet:
    """Paired observations ``x`` and channels ``h``, each of shape (m, d)."""

    x: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.h = np.atleast_2d(np.asarray(self.h, dtype=np.float64))
        if self.x.shape != self.h.shape:
            raise ValueError(f"x shape {self.x.shape} != h shape {self.h.shape}")

    @property
    def dim(self):
        return self.x.shape[1]

    def __len__(self):
        return self.x.shape[0]

    def subset(self, index):
        return SampleSet(self.x[index], self.h[index])

    def pairs(self):
        return list(zip(self.x, self.h))


def snr_db_to_noise(snr_db):
    """Noise variance for an SNR defined as ``1 / sigma_n2``."""
    return 10.0 ** (-float(snr_db) / 10.0)


# ---------------------------------------------------------------------------
# Rapp nonlinearity
# ---------------------------------------------------------------------------


def rapp(u, x_sat, omega):
    u = np.asarray(u, dtype=np.float64)
    r = (np.abs(u) / x_sat) ** (2.0 * omega)
    return u * (1.0 + r) ** (-1.0 / (2.0 * omega))


def rapp_derivative(u, x_sat, omega):
    r = (np.abs(np.asarray(u, dtype=np.float64)) / x_sat) ** (2.0 * omega)
    return (1.0 + r) ** (-1.0 - 1.0 / (2.0 * omega))


def rapp_inverse(x, x_sat, omega, tol=1e-12, max_iter=200):
    """Invert the Rapp map element-wise by bisection followed by Newton polish.

    The bracket starts at ``+-x_sat * 1e6``; every entry must satisfy
    ``|x| < x_sat``.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(np.abs(x) >= x_sat):
        raise ValueError("observation outside distortion range")
    lo = np.full(x.shape, -x_sat * 1e6)
    hi = np.full(x.shape, x_sat * 1e6)
    mid = np.zeros(x.shape)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = rapp(mid, x_sat, omega)
        below = val < x
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(np.abs(val - x), initial=0.0) <= tol and np.max(hi - lo, initial=0.0) <= 1e-9 * x_sat:
            break
    u = mid
    for _ in range(4):
        step = (rapp(u, x_sat, omega) - x) / rapp_derivative(u, x_sat, omega)
        u = np.clip(u - step, lo, hi)
    if np.max(np.abs(rapp(u, x_sat, omega) - x), initial=0.0) > tol:
        raise ArithmeticError("rapp inversion did not converge")
    return u


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _factor(cov, d):
    if cov.kind == "diagonal":
        return None
    try:
        return psd_cholesky(cov.as_matrix(d))
    except LinAlgError as exc:
        raise ValueError("covariance not PSD") from exc


def sample_channels(cov, d, size, rng):
    """``size`` i.i.d. draws of h ~ N(0, R), shape (size, d)."""
    z = gaussian(rng, (size, d))
    L = _factor(cov, d)
    if L is None:
        return np.sqrt(cov.sigma2) * z
    return z @ L.T


def sample_channel(cov, d, rng):
    """One channel vector h ~ N(0, R)."""
    return sample_channels(cov, d, 1, rng)[0]


def observe(h, model, rng):
    """Received pilot signal for channel(s) ``h`` (vector or (m, d) batch)."""
    h = np.asarray(h, dtype=np.float64)
    u = model.tau * h + np.sqrt(model.sigma_n2) * gaussian(rng, h.shape)
    if model.distortion is None:
        return u
    return model.distortion(u)


def gen_dataset(cov, model, size, d, rng):
    if size < 1:
        raise ValueError("dataset size must be >= 1")
    h = sample_channels(cov, d, size, rng)
    return SampleSet(observe(h, model, rng), h)


def gen_mismatched_dataset(cov, mismatch, model, size, d, rng):
    """Training pairs ``(x_er, h_er)`` drawn under a mismatch model.

    case1: ``h ~ N(0, cov)``, ``h_er = h + zeta`` with ``zeta ~ N(0, zeta_cov)``.
    case2: ``h_er ~ N(0, cov)`` directly; the deployment channel
    ``h = h_er + zeta`` has covariance ``cov + zeta_cov`` and is drawn by
    the caller.
    """
    if not model.is_linear:
        raise ValueError("mismatch requires linear model")
    if size < 1:
        raise ValueError("dataset size must be >= 1")
    if mismatch.case == "case1":
        h = sample_channels(cov, d, size, rng)
        h_er = h + sample_channels(mismatch.zeta_cov, d, size, rng)
    else:
        h_er = sample_channels(cov, d, size, rng)
    return SampleSet(observe(h_er, model, rng), h_er)
