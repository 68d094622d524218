"""Exact reference quantities for small problems.

Three independent routes are maintained deliberately:

* dynamic programming (always available): objective and gradient from
  finite-horizon backward induction, with the gradient in the exact
  time-indexed visitation form;
* trajectory enumeration (small problems only): probability-weighted sums
  over every length-h trajectory, which realize the score-function forms
  of the gradient and Hessian as literal finite sums;
* central finite differences, used as the cross-check on both.

The enumeration cap keeps every oracle call interactive; beyond it only
the DP objective/gradient are offered and Hessians fall back to finite
differences of the DP gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import EnumerationCapError, OracleConsistencyError
from .mdp import TabularMdp, Trajectory, policy_matrix, value_stack, value_functions
from .policy import ExampleOnePiecewise

ENUM_CAP = 1_000_000
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Trajectory enumeration
# ---------------------------------------------------------------------------

def enumeration_size_bound(mdp: TabularMdp) -> float:
    """Upper bound on the number of length-h trajectories.

    The final transition is marginalized out (it affects neither rewards
    nor scores), so the last step contributes only an action factor.
    """
    branching = int((mdp.transition > 0).sum(axis=2).max())
    support0 = int((mdp.rho0 > 0).sum())
    return support0 * mdp.n_actions * (mdp.n_actions * branching) ** (mdp.horizon - 1)


def is_enumerable(mdp: TabularMdp, cap: int = ENUM_CAP) -> bool:
    return enumeration_size_bound(mdp) <= cap


def enumerate_trajectories(
    mdp: TabularMdp, family, theta: np.ndarray, cap: int = ENUM_CAP
) -> Iterator[tuple[float, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (probability, states, actions, rewards) over all trajectories.

    Probabilities are rho0(s0) * prod pi(a_t|s_t) * prod P(s_{t+1}|s_t,a_t)
    with the final transition marginalized out; they sum to 1 exactly.
    Zero-probability branches are pruned, so every yielded trajectory is
    on-policy.
    """
    if enumeration_size_bound(mdp) > cap:
        raise EnumerationCapError(
            f"enumeration bound {enumeration_size_bound(mdp):.3g} exceeds cap {cap}"
        )
    theta = np.asarray(theta, dtype=float)
    pi = policy_matrix(mdp, family, theta)
    h = mdp.horizon
    states = np.empty(h, dtype=np.int64)
    actions = np.empty(h, dtype=np.int64)
    rewards = np.empty(h)

    def walk(t: int, s: int, prob: float):
        states[t] = s
        for a in range(mdp.n_actions):
            p_a = prob * pi[s, a]
            if p_a <= 0.0:
                continue
            actions[t] = a
            rewards[t] = mdp.reward[s, a]
            if t == h - 1:
                yield p_a, states.copy(), actions.copy(), rewards.copy()
                continue
            for s_next in range(mdp.n_states):
                p_next = p_a * mdp.transition[s, a, s_next]
                if p_next > 0.0:
                    yield from walk(t + 1, s_next, p_next)

    for s0 in range(mdp.n_states):
        if mdp.rho0[s0] > 0.0:
            yield from walk(0, s0, float(mdp.rho0[s0]))


def as_trajectory(mdp: TabularMdp, family, theta: np.ndarray,
                  states: np.ndarray, actions: np.ndarray,
                  rewards: np.ndarray) -> Trajectory:
    """Wrap enumerated arrays as a Trajectory (for estimator-route sums)."""
    log_probs = np.array([
        math.log(family.action_probs(theta, int(s))[int(a)])
        for s, a in zip(states, actions)
    ])
    return Trajectory(states=states, actions=actions, rewards=rewards,
                      gamma=mdp.gamma, seed=-1, log_probs=log_probs)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def exact_objective(mdp: TabularMdp, family, theta: np.ndarray) -> float:
    """J = E_rho0[V_0] from backward induction (h-truncated)."""
    v, _, _ = value_functions(mdp, family, theta)
    return float(mdp.rho0 @ v)


def objective_by_enumeration(mdp: TabularMdp, family, theta: np.ndarray,
                             cap: int = ENUM_CAP) -> float:
    gammas = mdp.gamma ** np.arange(mdp.horizon)
    total = 0.0
    for prob, _, _, rewards in enumerate_trajectories(mdp, family, theta, cap):
        total += prob * float(gammas @ rewards)
    return total


# ---------------------------------------------------------------------------
# Gradient (two routes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientOracle:
    """Exact gradient from both routes; `value` is the DP route."""

    visitation: np.ndarray
    enumeration: np.ndarray | None

    @property
    def value(self) -> np.ndarray:
        return self.visitation


def _gradient_visitation(mdp: TabularMdp, family, theta: np.ndarray) -> np.ndarray:
    """Time-indexed policy-gradient-theorem form.

    grad J = sum_t sum_s gamma^t P_t(s) sum_a Q_t(s,a) * d pi(a|s), where
    Q_t comes from the same backward induction as the objective.  With
    time-indexed weights the identity with the score-function route is
    exact at truncation h, not merely up to tail terms.
    """
    theta = np.asarray(theta, dtype=float)
    pi = policy_matrix(mdp, family, theta)
    _, q = value_stack(mdp, family, theta)
    kernel = np.einsum("sa,sat->st", pi, mdp.transition)
    grad_pi = np.stack([family.grad_prob(theta, s) for s in range(mdp.n_states)])
    w = mdp.rho0.copy()
    grad = np.zeros(family.param_dim)
    for t in range(mdp.horizon):
        grad += np.einsum("s,sa,sap->p", w, q[t], grad_pi)
        w = mdp.gamma * (w @ kernel)
    return grad


def _gradient_enumeration(mdp: TabularMdp, family, theta: np.ndarray,
                          cap: int = ENUM_CAP) -> np.ndarray:
    """Score-function route: sum_tau p(tau) (sum_t dlog pi) R(tau)."""
    theta = np.asarray(theta, dtype=float)
    pi = policy_matrix(mdp, family, theta)
    score = np.zeros((mdp.n_states, mdp.n_actions, family.param_dim))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if pi[s, a] > 0.0:
                score[s, a] = family.grad_log_prob(theta, s, a)
    gammas = mdp.gamma ** np.arange(mdp.horizon)
    grad = np.zeros(family.param_dim)
    for prob, states, actions, rewards in enumerate_trajectories(
            mdp, family, theta, cap):
        ret = float(gammas @ rewards)
        grad += prob * ret * score[states, actions].sum(axis=0)
    return grad


def exact_gradient(mdp: TabularMdp, family, theta: np.ndarray,
                   cap: int = ENUM_CAP,
                   agreement_tol: float = 1e-8) -> GradientOracle:
    """Exact gradient, cross-checked between the two routes when feasible.

    Raises OracleConsistencyError if both routes exist and disagree beyond
    agreement_tol relative to the gradient scale.
    """
    visitation = _gradient_visitation(mdp, family, theta)
    enumeration = None
    if is_enumerable(mdp, cap):
        enumeration = _gradient_enumeration(mdp, family, theta, cap)
        scale = max(1.0, float(np.linalg.norm(visitation)))
        gap = float(np.linalg.norm(enumeration - visitation))
        if gap > agreement_tol * scale:
            raise OracleConsistencyError(
                f"gradient routes disagree: |enum - dp| = {gap:.3e} "
                f"(tolerance {agreement_tol * scale:.3e})"
            )
    return GradientOracle(visitation=visitation, enumeration=enumeration)


# ---------------------------------------------------------------------------
# Hessian
# ---------------------------------------------------------------------------

def exact_hessian(mdp: TabularMdp, family, theta: np.ndarray,
                  cap: int = ENUM_CAP) -> np.ndarray:
    """Exact Hessian of the truncated objective, symmetrized.

    Enumerates the expectation of the single-trajectory Hessian integrand
    when feasible; otherwise falls back to central finite differences of
    the DP gradient.
    """
    if is_enumerable(mdp, cap):
        from .estimators import hessian_estimate

        p = family.param_dim
        total = np.zeros((p, p))
        for prob, states, actions, rewards in enumerate_trajectories(
                mdp, family, theta, cap):
            traj = Trajectory(states=states, actions=actions, rewards=rewards,
                              gamma=mdp.gamma, seed=-1,
                              log_probs=np.zeros(len(states)))
            total += prob * hessian_estimate(traj, family, theta)
        return (total + total.T) / 2.0
    grad = lambda th: _gradient_visitation(mdp, family, th)
    return fd_hessian_from_gradient(grad, np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def fd_gradient(func, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        bump = np.zeros_like(theta)
        bump[j] = step
        grad[j] = (func(theta + bump) - func(theta - bump)) / (2.0 * step)
    return grad


def fd_hessian_from_gradient(grad_func, theta: np.ndarray,
                             step: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian of a gradient function, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    hess = np.zeros((p, p))
    for j in range(p):
        bump = np.zeros(p)
        bump[j] = step
        hess[:, j] = (grad_func(theta + bump) - grad_func(theta - bump)) / (2.0 * step)
    return (hess + hess.T) / 2.0


# ---------------------------------------------------------------------------
# Closed forms for the three-state benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Example1Analysis:
    objective: float
    grad: np.ndarray
    hessian: np.ndarray


def analytic_example1(theta: np.ndarray) -> Example1Analysis:
    """Closed-form objective, gradient, and Hessian of the benchmark family.

    In the closed unit box: J = (1 - t1^2 + t2^2)/sqrt(2 pi) with constant
    Hessian diag(-2, 2)/sqrt(2 pi).  Outside: J = exp((|t|^2 - 2)/2)/sqrt(2 pi)
    with gradient J * theta and Hessian J * (theta theta^T + I).
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or theta.shape != (2,):
        raise ValueError("theta must be a finite 2-vector")
    if ExampleOnePiecewise.in_box(theta):
        j = _INV_SQRT_2PI * (1.0 - theta[0] ** 2 + theta[1] ** 2)
        grad = _INV_SQRT_2PI * np.array([-2.0 * theta[0], 2.0 * theta[1]])
        hess = _INV_SQRT_2PI * np.diag([-2.0, 2.0])
    else:
        j = _INV_SQRT_2PI * math.exp((float(theta @ theta) - 2.0) / 2.0)
        grad = j * theta
        hess = j * (np.outer(theta, theta) + np.eye(2))
    return Example1Analysis(objective=float(j), grad=grad, hessian=hess)
