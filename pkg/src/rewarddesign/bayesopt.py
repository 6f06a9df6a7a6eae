"""Gaussian-process Bayesian optimization with a UCB acquisition.

Exact GP regression under a zero-mean prior and squared-exponential kernel.
The optimizer evaluates an expensive scalar black box on an initial design
(domain endpoints plus uniform-random fill), then repeatedly fits the
posterior on a dense candidate grid, picks the UCB argmax, evaluates it, and
stops on budget exhaustion or once the chosen points cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

JITTER_START = 1e-10
JITTER_MAX = 1e-4
CANDIDATE_GRID_SIZE = 512

CONVERGENCE_THRESHOLD = 0.05
CONVERGENCE_WINDOW = 5


@dataclass(frozen=True)
class GpHyper:
    length: float = 0.2          # kernel length scale
    sigma_f: float = 1.0         # kernel signal standard deviation
    sigma_y: float = 0.01        # observation noise standard deviation
    ucb_delta: float = 0.1       # UCB confidence parameter, in (0, 1)
    dim: int = 1                 # search-space dimension entering the UCB schedule

    def __post_init__(self):
        if self.length <= 0 or self.sigma_f <= 0:
            raise ValueError("length and sigma_f must be positive")
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be nonnegative")
        if not 0.0 < self.ucb_delta < 1.0:
            raise ValueError("ucb_delta must lie in (0, 1)")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass
class GpState:
    alphas: np.ndarray           # evaluated inputs, shape (n,)
    values: np.ndarray           # observed objective values, shape (n,)
    hyper: GpHyper

    def __post_init__(self):
        self.alphas = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.alphas.shape != self.values.shape:
            raise ValueError("alphas and values must have equal length")

    def add(self, alpha: float, value: float) -> None:
        self.alphas = np.append(self.alphas, alpha)
        self.values = np.append(self.values, value)


@dataclass
class Posterior:
    candidates: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass
class BoHistory:
    """Evaluation log: initial design followed by acquisition picks."""
    alphas: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    n_initial: int = 0

    @property
    def chosen(self) -> list[float]:
        return self.alphas[self.n_initial:]


def kernel(a, b, hyper: GpHyper):
    """Squared-exponential covariance sigma_f^2 * exp(-(a-b)^2 / (2 l^2))."""
    d = np.subtract(a, b)
    return hyper.sigma_f ** 2 * np.exp(-0.5 * (d / hyper.length) ** 2)


def _kernel_matrix(xa: np.ndarray, xb: np.ndarray, hyper: GpHyper) -> np.ndarray:
    return kernel(xa[:, None], xb[None, :], hyper)


def gp_posterior(state: GpState, candidates) -> Posterior:
    """Exact posterior mean and covariance at the candidate points.

    The training matrix K + sigma_y^2 I is factorized in SPD form; on
    failure the diagonal jitter escalates tenfold up to JITTER_MAX before
    giving up.
    """
    x = state.alphas
    if x.size < 1:
        raise ValueError("posterior requires at least one observation")
    cand = np.atleast_1d(np.asarray(candidates, dtype=float))
    k_train = _kernel_matrix(x, x, state.hyper)
    k_train[np.diag_indices_from(k_train)] += state.hyper.sigma_y ** 2
    k_cross = _kernel_matrix(x, cand, state.hyper)
    k_cand = _kernel_matrix(cand, cand, state.hyper)

    factor = None
    jitter = JITTER_START
    while factor is None:
        try:
            factor = cho_factor(k_train + jitter * np.eye(x.size), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX:
                raise np.linalg.LinAlgError(
                    f"GP kernel matrix not SPD even with jitter {JITTER_MAX:g} "
                    f"(n={x.size}, length={state.hyper.length:g})"
                ) from None
    solved = cho_solve(factor, k_cross)
    mean = solved.T @ state.values
    cov = k_cand - k_cross.T @ solved
    cov = 0.5 * (cov + cov.T)
    return Posterior(cand, mean, cov)


def ucb_beta(t: int, hyper: GpHyper) -> float:
    """Exploration multiplier sqrt(2 log(t^(d/2+2) pi^2 / (3 delta)))."""
    if t < 1:
        raise ValueError("iteration index must be >= 1")
    return math.sqrt(2.0 * math.log(
        t ** (hyper.dim / 2.0 + 2.0) * math.pi ** 2 / (3.0 * hyper.ucb_delta)
    ))


def ucb(posterior: Posterior, t: int, hyper: GpHyper) -> np.ndarray:
    """Upper confidence bound per candidate: mean + beta(t) * std."""
    return posterior.mean + ucb_beta(t, hyper) * posterior.std


def next_alpha(posterior: Posterior, t: int, hyper: GpHyper) -> float:
    """UCB argmax over the candidate grid; ties go to the smallest value."""
    if posterior.candidates.size == 0:
        raise ValueError("no candidates")
    order = np.argsort(posterior.candidates, kind="stable")
    acq = ucb(posterior, t, hyper)[order]
    return float(posterior.candidates[order][int(np.argmax(acq))])


def converged(alpha_history, threshold: float = CONVERGENCE_THRESHOLD,
              window: int = CONVERGENCE_WINDOW) -> bool:
    """True once the last ``window`` chosen alphas sit within ``threshold``
    of each consecutive neighbor."""
    if window < 2:
        raise ValueError("window must be >= 2")
    tail = list(alpha_history)[-window:]
    if len(tail) < window:
        return False
    return all(abs(b - a) < threshold for a, b in zip(tail, tail[1:]))


def _refit(hyper: GpHyper, values: np.ndarray, width: float) -> GpHyper:
    spread = float(values.max() - values.min()) if values.size > 1 else 0.0
    return replace(hyper, length=0.2 * width, sigma_f=max(0.5 * spread, 1e-3))


@dataclass
class BoResult:
    best_alpha: float
    best_value: float            # posterior mean at best_alpha
    state: GpState
    history: BoHistory
    posterior: Posterior


def bo_loop(evaluator, domain, budget: int, b0: int = 5, seed: int = 0,
            hyper: GpHyper | None = None,
            threshold: float = CONVERGENCE_THRESHOLD,
            window: int = CONVERGENCE_WINDOW,
            n_candidates: int = CANDIDATE_GRID_SIZE,
            callback=None) -> BoResult:
    """Budgeted UCB optimization of a noisy scalar black box on an interval.

    The initial design takes the domain endpoints plus b0 - 2 uniform-random
    fill points. Observations are mean-centered before each regression (the
    prior has zero mean) and the offset is restored in the reported mean.
    The returned optimum maximizes the final posterior mean over the
    candidate grid.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if hi <= lo:
        raise ValueError("domain must be a nondegenerate interval")
    if not 1 <= b0 <= budget:
        raise ValueError("need budget >= b0 >= 1")
    rng = np.random.default_rng(seed)
    hyper = hyper or GpHyper()

    design = [lo, hi][:b0]
    design += list(rng.uniform(lo, hi, size=max(0, b0 - len(design))))
    history = BoHistory(n_initial=b0)

    def run(alpha: float) -> float:
        value = float(evaluator(alpha))
        if not math.isfinite(value):
            raise ValueError(f"evaluator returned non-finite objective at alpha={alpha}")
        history.alphas.append(alpha)
        history.values.append(value)
        if callback is not None:
            callback(len(history.alphas), alpha, value)
        return value

    for alpha in design:
        run(alpha)

    candidates = np.linspace(lo, hi, n_candidates)
    hyper = _refit(hyper, np.asarray(history.values), hi - lo)
    state = GpState(np.asarray(history.alphas), np.asarray(history.values), hyper)

    def centered_posterior(st: GpState) -> Posterior:
        offset = float(st.values.mean())
        shifted = GpState(st.alphas, st.values - offset, st.hyper)
        post = gp_posterior(shifted, candidates)
        post.mean = post.mean + offset
        return post

    t = len(history.alphas)
    while t < budget and not converged(history.chosen, threshold, window):
        post = centered_posterior(state)
        alpha = next_alpha(post, t, hyper)
        value = run(alpha)
        state.add(alpha, value)
        hyper = _refit(hyper, state.values, hi - lo)
        state.hyper = hyper
        t += 1

    final = centered_posterior(state)
    best = int(np.argmax(final.mean))
    return BoResult(
        best_alpha=float(candidates[best]),
        best_value=float(final.mean[best]),
        state=state,
        history=history,
        posterior=final,
    )
