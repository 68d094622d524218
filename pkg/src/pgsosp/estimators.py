"""Monte-Carlo estimators built from single trajectories.

The gradient estimator is the full-return score-function form

    g(tau) = (sum_t d log pi(a_t|s_t)) * R(tau),

unbiased for the truncated objective.  The Hessian estimator combines the
reward-to-go weighted score potential

    Phi(tau) = sum_t w_t * log pi(a_t|s_t),   w_t = sum_{i>=t} gamma^i r_{i+1},

with the trajectory score: H(tau) = dPhi (dlog p)^T + d^2 Phi, where
d log p(tau) keeps only the policy terms (transitions do not depend on
theta).  Its expectation is the exact Hessian of the truncated objective;
single samples are asymmetric, so eigenanalysis always consumes the
symmetrized mean while unbiasedness checks use the raw mean.

A variant that ties every Phi term to the final step's log-probability is
available behind ``use_printed_phi`` for comparison; it is biased and only
the default form passes the enumeration identities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mdp import TabularMdp, Trajectory, discounted_return, occupancy, sample_batch
from .util import frozen_array


def score_sum(traj: Trajectory, family, theta: np.ndarray) -> np.ndarray:
    """sum_t d log pi(a_t|s_t); raises on zero-probability (off-policy) steps."""
    scores = np.stack([
        family.grad_log_prob(theta, int(s), int(a))
        for s, a in zip(traj.states, traj.actions)
    ])
    return scores.sum(axis=0)


def pg_estimate(traj: Trajectory, family, theta: np.ndarray) -> np.ndarray:
    """Single-trajectory policy gradient estimate."""
    return score_sum(traj, family, theta) * discounted_return(traj, traj.gamma)


def reward_to_go(traj: Trajectory) -> np.ndarray:
    """w_t = sum_{i >= t} gamma^i r_{i+1} with the absolute-index discount."""
    weighted = traj.gamma ** np.arange(len(traj)) * traj.rewards
    return weighted[::-1].cumsum()[::-1]


def hessian_estimate(traj: Trajectory, family, theta: np.ndarray,
                     use_printed_phi: bool = False) -> np.ndarray:
    """Single-trajectory Hessian estimate (raw, possibly asymmetric)."""
    p = family.param_dim
    w = reward_to_go(traj)
    scores = [family.grad_log_prob(theta, int(s), int(a))
              for s, a in zip(traj.states, traj.actions)]
    if use_printed_phi:
        # Every term tied to the last step's log-probability; biased.
        s_last, a_last = int(traj.states[-1]), int(traj.actions[-1])
        grad_phi = w.sum() * family.grad_log_prob(theta, s_last, a_last)
        hess_phi = w.sum() * family.hessian_log_prob(theta, s_last, a_last)
    else:
        grad_phi = np.zeros(p)
        hess_phi = np.zeros((p, p))
        for t, (s, a) in enumerate(zip(traj.states, traj.actions)):
            grad_phi += w[t] * scores[t]
            hess_phi += w[t] * family.hessian_log_prob(theta, int(s), int(a))
    total_score = np.sum(scores, axis=0)
    return np.outer(grad_phi, total_score) + hess_phi


@dataclass(frozen=True)
class GradEstimate:
    """Batch mean of pg_estimate with dispersion diagnostics."""

    mean: np.ndarray
    per_sample_norm_max: float
    n: int
    std_error: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", frozen_array(self.mean))
        object.__setattr__(self, "std_error", frozen_array(self.std_error))
        if self.n < 1 or (self.std_error < 0).any():
            raise ConfigError("GradEstimate requires n >= 1, std_error >= 0")

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "per_sample_norm_max": self.per_sample_norm_max,
            "n": self.n,
            "std_error": self.std_error.tolist(),
        }


@dataclass(frozen=True)
class HessianEstimate:
    """Batch mean of hessian_estimate, raw and symmetrized."""

    raw_mean: np.ndarray
    symmetrized: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "raw_mean", frozen_array(self.raw_mean))
        object.__setattr__(self, "symmetrized", frozen_array(self.symmetrized))

    def to_json(self) -> dict:
        return {
            "raw_mean": self.raw_mean.tolist(),
            "symmetrized": self.symmetrized.tolist(),
            "n": self.n,
        }


def score_table(mdp: TabularMdp, family, theta: np.ndarray) -> np.ndarray:
    """(S, A, p) table of d log pi; zero rows for zero-probability actions.

    Only ever indexed at sampled (on-policy) pairs, where pi > 0.
    """
    table = np.zeros((mdp.n_states, mdp.n_actions, family.param_dim))
    for s in range(mdp.n_states):
        probs = family.action_probs(theta, s)
        for a in range(mdp.n_actions):
            if probs[a] > 0.0:
                table[s, a] = family.grad_log_prob(theta, s, a)
    return table


def _hessian_table(mdp: TabularMdp, family, theta: np.ndarray) -> np.ndarray:
    p = family.param_dim
    table = np.zeros((mdp.n_states, mdp.n_actions, p, p))
    for s in range(mdp.n_states):
        probs = family.action_probs(theta, s)
        for a in range(mdp.n_actions):
            if probs[a] > 0.0:
                table[s, a] = family.hessian_log_prob(theta, s, a)
    return table


def pg_sample_block(mdp: TabularMdp, family, theta: np.ndarray, n: int,
                    seed: int, threads: int = 1) -> np.ndarray:
    """(n, p) array of pg_estimate samples via the vectorized rollout.

    Row i is bit-identical to pg_estimate on the i-th trajectory of
    sample_batch; the estimator arithmetic never depends on the thread
    count, which only parallelizes the rollout itself.
    """
    from .mdp import rollout_batch

    states, actions, rewards = rollout_batch(mdp, family, theta, n, seed,
                                             threads=threads)
    table = score_table(mdp, family, theta)
    gammas = mdp.gamma ** np.arange(mdp.horizon)
    returns = (gammas * rewards).sum(axis=1)
    return table[states, actions].sum(axis=1) * returns[:, None]


def batch_gradient(mdp: TabularMdp, family, theta: np.ndarray, n: int,
                   seed: int, threads: int = 1,
                   center: np.ndarray | None = None,
                   sigma_bound: float | None = None) -> GradEstimate:
    """Mean of pg_estimate over n trajectories with derived seeds.

    per_sample_norm_max records max_i ||g_i - center||_2; the center
    defaults to the batch mean and callers with an exact gradient pass it
    to check the deviation bound directly.  When sigma_bound is given, an
    exceedance is a warning rather than an error: grid-estimated score
    bounds are lower bounds on the true suprema, so the derived deviation
    bound can undershoot.
    """
    samples = pg_sample_block(mdp, family, theta, n, seed, threads=threads)
    mean = samples.sum(axis=0) / n
    ref = mean if center is None else np.asarray(center, dtype=float)
    norm_max = float(np.linalg.norm(samples - ref, axis=1).max())
    if sigma_bound is not None and norm_max > sigma_bound + 1e-9:
        import warnings

        warnings.warn(
            f"per-sample deviation {norm_max:.6g} exceeds the configured "
            f"bound {sigma_bound:.6g}", stacklevel=2,
        )
    if n > 1:
        std_error = samples.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        std_error = np.zeros_like(mean)
    return GradEstimate(mean=mean, per_sample_norm_max=norm_max, n=n,
                        std_error=std_error)


def batch_hessian(mdp: TabularMdp, family, theta: np.ndarray, n: int,
                  seed: int, threads: int = 1, chunk: int = 8192,
                  use_printed_phi: bool = False) -> HessianEstimate:
    """Mean of hessian_estimate over n trajectories with derived seeds.

    Vectorized in chunks; each row matches hessian_estimate on the
    corresponding sample_batch trajectory.
    """
    from .mdp import rollout_batch

    if use_printed_phi:
        trajs = sample_batch(mdp, family, theta, n, seed, threads=threads)
        total = np.zeros((family.param_dim, family.param_dim))
        for traj in trajs:
            total += hessian_estimate(traj, family, theta, use_printed_phi=True)
        raw = total / n
        return HessianEstimate(raw_mean=raw, symmetrized=(raw + raw.T) / 2.0, n=n)

    states, actions, rewards = rollout_batch(mdp, family, theta, n, seed,
                                             threads=threads)
    scores = score_table(mdp, family, theta)
    hessians = _hessian_table(mdp, family, theta)
    gammas = mdp.gamma ** np.arange(mdp.horizon)
    p = family.param_dim
    total = np.zeros((p, p))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        sl = slice(lo, hi)
        w = (gammas * rewards[sl])[:, ::-1].cumsum(axis=1)[:, ::-1]
        s_block = scores[states[sl], actions[sl]]           # (m, h, p)
        grad_phi = np.einsum("mh,mhp->mp", w, s_block)
        total_score = s_block.sum(axis=1)                   # (m, p)
        total += np.einsum("mp,mq->pq", grad_phi, total_score)
        total += np.einsum("mh,mhpq->pq", w, hessians[states[sl], actions[sl]])
    raw = total / n
    return HessianEstimate(raw_mean=raw, symmetrized=(raw + raw.T) / 2.0, n=n)


@dataclass(frozen=True)
class FisherReport:
    matrix: np.ndarray
    lambda_min: float

    def to_json(self) -> dict:
        return {"matrix": self.matrix.tolist(), "lambda_min": self.lambda_min}


def fisher_matrix(mdp: TabularMdp, family, theta: np.ndarray) -> FisherReport:
    """Exact Fisher information at truncation h.

    F = sum_s d(s) sum_a pi(a|s) (d log pi)(d log pi)^T with the truncated
    unnormalized visitation d.  Positive semidefinite by construction; the
    reported lambda_min is the empirical check on the positivity floor
    (tabular softmax families are singular along logit shifts, so zero is
    common).
    """
    d = occupancy(mdp, family, theta)
    p = family.param_dim
    f = np.zeros((p, p))
    for s in range(mdp.n_states):
        if d[s] == 0.0:
            continue
        probs = family.action_probs(theta, s)
        for a in range(mdp.n_actions):
            if probs[a] <= 0.0:
                continue
            g = family.grad_log_prob(theta, s, a)
            f += d[s] * probs[a] * np.outer(g, g)
    f = (f + f.T) / 2.0
    lam_min = float(np.linalg.eigvalsh(f)[0])
    return FisherReport(matrix=f, lambda_min=lam_min)
