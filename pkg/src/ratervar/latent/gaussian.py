"""
Per-rater Gaussian latent posteriors q(z|r) = N(mu_r, L_r L_r^T) and the
fixed prior N(0, prior_var * I).

The bank holds one latent per human rater plus a final slot for the gold
(consensus) distribution, addressed exactly like a rater. Cholesky factors
are stored as an unconstrained raw matrix: entries below the diagonal are
used as they are, entries above it are ignored, and the diagonal passes
through softplus so it stays strictly positive.
"""

from typing import Dict, List, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg

from ratervar.autodiff import ops
from ratervar.autodiff.tensor import Tensor, as_tensor
from ratervar.exception.exception import (
    ConfigError,
    NumericalError,
    PreconditionError,
    ShapeError,
)
from ratervar.misc.utils import get_logger

FARRAY_1D = npt.NDArray[np.float64]
FARRAY_2D = npt.NDArray[np.float64]

DEFAULT_LATENT_DIM = 8
DEFAULT_PRIOR_VAR = 2.0
DEFAULT_POST_VAR = 8.0
MAX_CONDITION = 1e12


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    """Raw value whose softplus is y (y > 0)."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise NumericalError("inverse_softplus needs strictly positive values")
    large = y > 20
    safe = np.where(large, 1.0, y)
    return np.where(large, y + np.log(-np.expm1(-y)), np.log(np.expm1(safe)))


class GaussianLatent:
    def __init__(self, mu: Tensor, cholRaw: Tensor):
        if mu.ndim != 1:
            raise ShapeError(f"latent mean must be a vector, got shape {mu.shape}")
        D = mu.shape[0]
        if cholRaw.shape != (D, D):
            raise ShapeError(f"raw Cholesky parameters must be ({D}, {D}), got {cholRaw.shape}")
        self.mu = mu
        self.chol_raw = cholRaw

    @classmethod
    def from_cholesky(cls, mu, chol, dtype=np.float32, name: str = "") -> "GaussianLatent":
        """
        Build a latent from an explicit mean and lower-triangular factor with
        a positive diagonal.
        """
        mu = np.asarray(mu, dtype=np.float64)
        chol = np.asarray(chol, dtype=np.float64)
        if np.any(np.triu(chol, 1) != 0):
            raise ShapeError("Cholesky factor must be lower triangular")
        raw = np.tril(chol, -1) + np.diag(inverse_softplus(np.diag(chol)))
        return cls(
            Tensor.parameter(mu, name=f"{name}mu", dtype=dtype),
            Tensor.parameter(raw, name=f"{name}chol_raw", dtype=dtype),
        )

    @property
    def D(self) -> int:
        return self.mu.shape[0]

    def chol(self) -> Tensor:
        """Differentiable L: strict lower part of the raw matrix plus softplus diagonal."""
        diag = ops.softplus(ops.diagonal(self.chol_raw))
        return ops.tril(self.chol_raw, -1) + ops.diag_embed(diag)

    def chol_value(self) -> FARRAY_2D:
        raw = self.chol_raw.data.astype(np.float64)
        return np.tril(raw, -1) + np.diag(np.logaddexp(0, np.diag(raw)))

    def covariance(self) -> FARRAY_2D:
        L = self.chol_value()
        return L @ L.T

    def mean(self) -> FARRAY_1D:
        return self.mu.data.astype(np.float64)


class RaterBank:
    """
    Latents for M human raters (indices 0..M-1) and the gold slot (index M).

    Parameters
    ----------
        latents : List[GaussianLatent]
            M + 1 latents of equal dimension; the last one is gold.
        priorVar : float
            Variance of the isotropic prior N(0, priorVar * I).
    """

    def __init__(self, latents: List[GaussianLatent], priorVar: float):
        if len(latents) < 2:
            raise PreconditionError("a rater bank needs at least one rater plus the gold slot")
        dims = {lat.D for lat in latents}
        if len(dims) != 1:
            raise ShapeError(f"all latents must share one dimension, got {sorted(dims)}")
        if priorVar <= 0:
            raise ConfigError(f"prior variance must be positive, got {priorVar}")
        self.latents = latents
        self.prior_var = float(priorVar)

    @property
    def num_raters(self) -> int:
        return len(self.latents) - 1

    @property
    def gold(self) -> int:
        return len(self.latents) - 1

    @property
    def latent_dim(self) -> int:
        return self.latents[0].D

    def check_rater(self, r: int) -> int:
        if not isinstance(r, (int, np.integer)) or r < 0 or r > self.gold:
            raise PreconditionError(
                f"rater id {r} out of range; valid ids are 0..{self.gold} ({self.gold} is gold)"
            )
        return int(r)

    def __getitem__(self, r: int) -> GaussianLatent:
        return self.latents[self.check_rater(r)]

    def __len__(self) -> int:
        return len(self.latents)

    def parameters(self) -> Dict[str, Tensor]:
        params = dict()
        for r, latent in enumerate(self.latents):
            params[f"latent.{r}.mu"] = latent.mu
            params[f"latent.{r}.chol_raw"] = latent.chol_raw
        return params

    def rater_parameters(self, r: int) -> Dict[str, Tensor]:
        latent = self[r]
        return {f"latent.{r}.mu": latent.mu, f"latent.{r}.chol_raw": latent.chol_raw}


def init_bank(
    M: int,
    D: int = DEFAULT_LATENT_DIM,
    prior_var: float = DEFAULT_PRIOR_VAR,
    post_var: float = DEFAULT_POST_VAR,
    seed: int = 0,
    dtype=np.float32,
) -> RaterBank:
    """
    Initialize M rater latents and the gold latent. Mean entries are drawn
    i.i.d. from N(0, post_var); every covariance starts at prior_var * I.

    Parameters
    ----------
        M : int
            Number of human raters (>= 1).
        D : int, default=8
            Latent dimension.
        prior_var : float, default=2.0
            Prior variance, also the initial posterior variance.
        post_var : float, default=8.0
            Variance of the distribution the initial means are drawn from.
        seed : int, default=0
            Seed of the mean draw.
        dtype : numpy dtype, default=np.float32
            Storage dtype of the parameters.

    Returns
    -------
        bank : RaterBank
            Bank with M + 1 latents.

    Examples
    --------
    >>> bank = init_bank(4, seed=3)
    >>> len(bank), bank.gold
    (5, 4)
    """
    if M < 1 or D < 1:
        raise ConfigError(f"need M >= 1 and D >= 1, got M={M}, D={D}")
    if prior_var <= 0 or post_var <= 0:
        raise ConfigError(
            f"variances must be positive, got prior_var={prior_var}, post_var={post_var}"
        )
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, np.sqrt(post_var), size=(M + 1, D))
    chol = np.sqrt(prior_var) * np.eye(D)

    latents = [
        GaussianLatent.from_cholesky(means[r], chol, dtype=dtype, name=f"latent.{r}.")
        for r in range(M + 1)
    ]
    get_logger("ratervar.latent.gaussian").info(
        f"Initialized rater bank: M={M}, D={D}, prior_var={prior_var}, post_var={post_var}"
    )
    return RaterBank(latents, prior_var)


def sample(bank: RaterBank, r: int, eps: Union[np.ndarray, Tensor]) -> Tensor:
    """
    Reparametrized draw z = mu_r + L_r eps, differentiable in mu_r and L_r.
    """
    latent = bank[r]
    eps = as_tensor(eps, latent.mu.dtype)
    if eps.shape != (latent.D,):
        raise ShapeError(f"eps must have shape ({latent.D},), got {eps.shape}")
    return latent.mu + latent.chol() @ eps


def kl_to_prior(bank: RaterBank, r: int) -> Tensor:
    """
    Closed-form KL(N(mu, Sigma) || N(0, s^2 I)) with Sigma = L L^T:

        0.5 * [tr(Sigma)/s^2 + mu.mu/s^2 - D + D ln s^2 - ln det Sigma]

    where tr(Sigma) is the squared Frobenius norm of L and
    ln det Sigma = 2 sum_d ln L_dd.
    """
    latent = bank[r]
    s2 = bank.prior_var
    D = latent.D
    L = latent.chol()
    trace = (L * L).sum()
    muSq = (latent.mu * latent.mu).sum()
    logDet = ops.log(ops.diagonal(L)).sum() * 2.0
    const = -D + D * np.log(s2)
    return (trace * (1.0 / s2) + muSq * (1.0 / s2) + const - logDet) * 0.5


def bhattacharyya(mu1: FARRAY_1D, cov1: FARRAY_2D, mu2: FARRAY_1D, cov2: FARRAY_2D) -> float:
    """
    Bhattacharyya distance between two Gaussians,

        1/8 dmu^T S^-1 dmu + 1/2 ln(det S / sqrt(det S1 det S2)),  S = (S1 + S2) / 2

    Raises
    ------
        NumericalError
            If the averaged covariance is numerically singular.
    """
    avg = 0.5 * (cov1 + cov2)
    condition = np.linalg.cond(avg)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericalError(
            f"averaged covariance is singular (condition number {condition:.3e})"
        )
    try:
        factor = linalg.cho_factor(avg, lower=True)
        L1 = linalg.cholesky(cov1, lower=True)
        L2 = linalg.cholesky(cov2, lower=True)
    except linalg.LinAlgError as err:
        raise NumericalError(
            f"Cholesky factorization failed (condition number {condition:.3e}): {err}"
        ) from err
    dmu = mu1 - mu2
    mahalanobis = float(dmu @ linalg.cho_solve(factor, dmu))
    logDetAvg = 2.0 * np.sum(np.log(np.diag(factor[0])))
    logDet1 = 2.0 * np.sum(np.log(np.diag(L1)))
    logDet2 = 2.0 * np.sum(np.log(np.diag(L2)))
    return mahalanobis / 8.0 + 0.5 * (logDetAvg - 0.5 * (logDet1 + logDet2))


def pairwise_overlap(bank: RaterBank) -> FARRAY_2D:
    """
    Symmetric (M+1) x (M+1) matrix of Bhattacharyya distances between all
    latents, zero on the diagonal.
    """
    n = len(bank)
    means = [lat.mean() for lat in bank.latents]
    covs = [lat.covariance() for lat in bank.latents]
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = bhattacharyya(means[i], covs[i], means[j], covs[j])
            out[i, j] = out[j, i] = max(d, 0.0)
    return out
