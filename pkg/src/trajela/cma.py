"""Standard (mu/mu_w, lambda) CMA-ES with per-evaluation logging.

Implements the tutorial parameterization of non-elitist CMA-ES with
cumulative step-size adaptation and rank-one plus rank-mu covariance
updates. Fixed population size, no restarts, no boundary handling:
candidates outside the search box are evaluated as-is. Every function
evaluation is logged, and the internal strategy state can be snapshot
at the first generation boundary at or past a requested evaluation
count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import bbob


class NumericalBreakdownError(RuntimeError):
    """Covariance decomposition or fitness became non-finite; run aborted."""


@dataclass(frozen=True)
class CmaParameters:
    dim: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float

    @classmethod
    def default(cls, dim: int, lam: int | None = None) -> "CmaParameters":
        if lam is None:
            lam = 4 + int(np.floor(3.0 * np.log(dim)))
        mu = lam // 2
        raw = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1, dtype=float))
        weights = raw / raw.sum()
        mu_eff = 1.0 / float(np.sum(weights**2))
        c_sigma = (mu_eff + 2.0) / (dim + mu_eff + 5.0)
        d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (dim + 1.0)) - 1.0) + c_sigma
        c_c = (4.0 + mu_eff / dim) / (dim + 4.0 + 2.0 * mu_eff / dim)
        c_1 = 2.0 / ((dim + 1.3) ** 2 + mu_eff)
        c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dim + 2.0) ** 2 + mu_eff))
        chi_n = np.sqrt(dim) * (1.0 - 1.0 / (4.0 * dim) + 1.0 / (21.0 * dim**2))
        weights.setflags(write=False)
        return cls(
            dim=dim,
            lam=lam,
            mu=mu,
            weights=weights,
            mu_eff=mu_eff,
            c_sigma=float(c_sigma),
            d_sigma=float(d_sigma),
            c_c=float(c_c),
            c_1=float(c_1),
            c_mu=float(c_mu),
            chi_n=float(chi_n),
        )


@dataclass(frozen=True)
class CmaState:
    """Strategy state after `generation` completed generations.

    Treated as immutable: `tell` builds a new state rather than updating
    in place, so snapshots stay valid however long the run continues.
    """

    params: CmaParameters
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    B: np.ndarray
    D: np.ndarray
    generation: int
    evals: int


@dataclass(frozen=True)
class CmaStateSnapshot:
    """State plus the candidate population of the generation it closed."""

    state: CmaState
    population: np.ndarray
    evals: int


@dataclass(frozen=True)
class Trajectory:
    eval_index: np.ndarray
    X: np.ndarray
    y: np.ndarray
    best_so_far: np.ndarray
    precision_at_budget: float


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init(inst, seed, x0: np.ndarray | None = None, sigma0: float = 2.0) -> CmaState:
    """Fresh state: m = x0 (uniform in [-4,4]^d unless given), sigma0, C = I."""
    if sigma0 <= 0:
        raise ValueError(f"sigma0 must be positive, got {sigma0}")
    rng = _as_rng(seed)
    dim = inst.dim
    if x0 is None:
        x0 = rng.uniform(-4.0, 4.0, size=dim)
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (dim,):
            raise ValueError(f"x0 must have shape ({dim},)")
    params = CmaParameters.default(dim)
    return CmaState(
        params=params,
        mean=x0.copy(),
        sigma=float(sigma0),
        C=np.eye(dim),
        p_sigma=np.zeros(dim),
        p_c=np.zeros(dim),
        B=np.eye(dim),
        D=np.ones(dim),
        generation=0,
        evals=0,
    )


def ask(state: CmaState, rng: np.random.Generator) -> np.ndarray:
    """Sample lambda candidates x_k = m + sigma * B D z_k, z_k ~ N(0, I)."""
    p = state.params
    Z = rng.standard_normal((p.lam, p.dim))
    X = state.mean + state.sigma * (Z * state.D) @ state.B.T
    if not np.all(np.isfinite(X)):
        raise NumericalBreakdownError(
            f"non-finite candidates at generation {state.generation}"
        )
    return X


def tell(state: CmaState, candidates: np.ndarray, fitnesses: np.ndarray) -> CmaState:
    """One full CMA-ES update from a ranked population; returns the new state."""
    p = state.params
    X = np.asarray(candidates, dtype=float)
    f = np.asarray(fitnesses, dtype=float)
    if X.shape != (p.lam, p.dim) or f.shape != (p.lam,):
        raise ValueError(
            f"expected {p.lam} candidates of dimension {p.dim}, got {X.shape} / {f.shape}"
        )
    if not np.all(np.isfinite(f)):
        raise NumericalBreakdownError(
            f"non-finite fitness at generation {state.generation}"
        )

    order = np.argsort(f, kind="stable")
    sel = X[order[: p.mu]]
    m_new = p.weights @ sel
    y_w = (m_new - state.mean) / state.sigma

    # C^(-1/2) y_w without forming the matrix
    c_inv_half_yw = state.B @ ((state.B.T @ y_w) / state.D)
    p_sigma = (1.0 - p.c_sigma) * state.p_sigma + np.sqrt(
        p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff
    ) * c_inv_half_yw

    gen1 = state.generation + 1
    ps_norm = float(np.linalg.norm(p_sigma))
    denom = np.sqrt(1.0 - (1.0 - p.c_sigma) ** (2 * gen1))
    h_sigma = 1.0 if ps_norm / denom < (1.4 + 2.0 / (p.dim + 1.0)) * p.chi_n else 0.0

    p_c = (1.0 - p.c_c) * state.p_c + h_sigma * np.sqrt(
        p.c_c * (2.0 - p.c_c) * p.mu_eff
    ) * y_w

    Y = (sel - state.mean) / state.sigma
    rank_mu = (p.weights[:, None] * Y).T @ Y
    delta_h = (1.0 - h_sigma) * p.c_c * (2.0 - p.c_c)
    C = (
        (1.0 + p.c_1 * delta_h - p.c_1 - p.c_mu) * state.C
        + p.c_1 * np.outer(p_c, p_c)
        + p.c_mu * rank_mu
    )
    C = (C + C.T) / 2.0

    sigma = state.sigma * np.exp((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0))
    if not np.isfinite(sigma) or sigma <= 0:
        raise NumericalBreakdownError(f"step size degenerated to {sigma}")

    try:
        eigvals, B = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError(f"eigendecomposition failed: {exc}") from exc
    if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0.0:
        raise NumericalBreakdownError(
            f"covariance lost positive definiteness at generation {gen1}"
        )
    D = np.sqrt(eigvals)

    return replace(
        state,
        mean=m_new,
        sigma=float(sigma),
        C=C,
        p_sigma=p_sigma,
        p_c=p_c,
        B=B,
        D=D,
        generation=gen1,
        evals=state.evals + p.lam,
    )


def run(
    inst,
    budget: int,
    seed,
    snapshot_at: int | None = None,
    x0: np.ndarray | None = None,
    sigma0: float = 2.0,
) -> tuple[Trajectory, CmaStateSnapshot | None]:
    """Run CMA-ES for exactly `budget` evaluations on one problem instance.

    The final generation is truncated if the budget is not a multiple of
    lambda: only the remaining candidates are evaluated and no update is
    applied. The snapshot is taken right after the update of the first
    generation whose cumulative evaluation count reaches `snapshot_at`;
    if no later generation boundary exists, the last full update wins.
    """
    rng = _as_rng(seed)
    state = init(inst, rng, x0=x0, sigma0=sigma0)
    lam = state.params.lam
    if budget < lam:
        raise ValueError(f"budget must be at least lambda = {lam}, got {budget}")
    if snapshot_at is not None and not 0 < snapshot_at <= budget:
        raise ValueError(f"snapshot_at must be in 1..{budget}, got {snapshot_at}")

    xs, ys = [], []
    snapshot = None
    last_full: CmaStateSnapshot | None = None
    done = 0
    while done < budget:
        X = ask(state, rng)
        k = min(lam, budget - done)
        y = np.atleast_1d(bbob.evaluate(inst, X[:k]))
        xs.append(X[:k])
        ys.append(y)
        done += k
        if k == lam:
            state = tell(state, X, y)
            last_full = CmaStateSnapshot(state=state, population=X.copy(), evals=state.evals)
            if snapshot_at is not None and snapshot is None and state.evals >= snapshot_at:
                snapshot = last_full

    if snapshot_at is not None and snapshot is None:
        snapshot = last_full

    y_all = np.concatenate(ys)
    best = np.minimum.accumulate(y_all)
    traj = Trajectory(
        eval_index=np.arange(1, budget + 1),
        X=np.vstack(xs),
        y=y_all,
        best_so_far=best,
        precision_at_budget=bbob.target_precision(inst, float(best[-1])),
    )
    return traj, snapshot
