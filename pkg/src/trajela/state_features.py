"""CMA-ES internal state variables used as predictor features.

Five scalars summarize the strategy state at a snapshot generation:
step size, Mahalanobis distance of the population mean from the
distribution mean (under sigma^2 C), the two evolution path lengths
(sigma path normalized by chi_n), and the mean log-likelihood of the
population under the sampling distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SV_NAMES = (
    "step_size",
    "mahalanobis_dist",
    "c_evol_path",
    "sigma_evol_path",
    "cma_simil_lh",
)

_LOG_2PI = float(np.log(2.0 * np.pi))


class DegenerateStateError(RuntimeError):
    """Sampling covariance sigma^2 C is numerically singular."""


@dataclass(frozen=True)
class StateVariables:
    step_size: float
    mahalanobis_dist: float
    c_evol_path: float
    sigma_evol_path: float
    cma_simil_lh: float
    evals_at_snapshot: int

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in SV_NAMES}


def extract_state_variables(state, population) -> StateVariables:
    """Compute the five state variables from a strategy state and its population.

    `state` needs mean, sigma, C, p_c, p_sigma and params.chi_n; any object
    with those attributes works. `population` is the (n, d) candidate matrix
    of the snapshot generation, n >= 1.
    """
    X = np.atleast_2d(np.asarray(population, dtype=float))
    mean = np.asarray(state.mean, dtype=float)
    dim = mean.shape[0]
    if X.shape[1] != dim:
        raise ValueError(f"population dimension {X.shape[1]} != state dimension {dim}")
    if X.shape[0] < 1:
        raise ValueError("population must contain at least one candidate")

    sigma = float(state.sigma)
    C = np.asarray(state.C, dtype=float)
    eigvals, B = np.linalg.eigh((C + C.T) / 2.0)
    cov_eigs = sigma**2 * eigvals
    if not np.all(np.isfinite(cov_eigs)) or cov_eigs.min() < 1e-300:
        raise DegenerateStateError(
            f"sampling covariance eigenvalue {cov_eigs.min()} below 1e-300"
        )

    # squared Mahalanobis norms under sigma^2 C, via the eigenbasis
    def maha_sq(v):
        w = v @ B
        return np.sum(w**2 / cov_eigs, axis=-1)

    xbar = X.mean(axis=0)
    mahalanobis = float(np.sqrt(maha_sq(xbar - mean)))

    log_det = float(np.sum(np.log(cov_eigs)))
    lh = -0.5 * (dim * _LOG_2PI + log_det + maha_sq(X - mean))
    simil_lh = float(np.mean(lh))

    chi_n = float(state.params.chi_n)
    out = StateVariables(
        step_size=sigma,
        mahalanobis_dist=mahalanobis,
        c_evol_path=float(np.linalg.norm(state.p_c)),
        sigma_evol_path=float(np.linalg.norm(state.p_sigma)) / chi_n,
        cma_simil_lh=simil_lh,
        evals_at_snapshot=int(getattr(state, "evals", 0)),
    )
    for name in SV_NAMES:
        if not np.isfinite(getattr(out, name)):
            raise DegenerateStateError(f"non-finite state variable {name}")
    return out
