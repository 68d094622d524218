"""Finite tabular MDPs: sampling, discounted returns, and exact quantities.

An MDP is the tuple (states, actions, P, R, rho0, gamma) with a stored
truncation horizon h and reward bounds [r_min, r_max].  All infinite sums
(visitation measure, value functions, the objective) are truncated at h;
identities that are exact only for the infinite-horizon quantities are
asserted elsewhere with the analytic tail bound gamma^h * r_max / (1 - gamma)
folded into their tolerances.

All types are immutable after construction and safe to share across
threads.  Trajectory sampling is pure given its seed; batch samplers derive
the i-th trajectory's stream from (seed, i), so parallel execution matches
the serial order exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
import numpy as np

from .errors import ConfigError
from .util import derive_rng, frozen_array

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with dense transition tensor and deterministic rewards.

    transition[s, a, s'] = P(s'|s, a);  reward[s, a] in [r_min, r_max];
    rho0 is the initial state distribution; gamma in (0, 1); horizon >= 1
    is the trajectory truncation length.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    rho0: np.ndarray
    gamma: float
    horizon: int
    r_min: float
    r_max: float

    def __post_init__(self):
        n_s, n_a = int(self.n_states), int(self.n_actions)
        if n_s < 1 or n_a < 1:
            raise ConfigError("n_states and n_actions must be >= 1")
        transition = frozen_array(self.transition)
        reward = frozen_array(self.reward)
        rho0 = frozen_array(self.rho0)
        if transition.shape != (n_s, n_a, n_s):
            raise ConfigError(
                f"transition: expected shape {(n_s, n_a, n_s)}, got {transition.shape}"
            )
        if reward.shape != (n_s, n_a):
            raise ConfigError(
                f"reward: expected shape {(n_s, n_a)}, got {reward.shape}"
            )
        if rho0.shape != (n_s,):
            raise ConfigError(f"rho0: expected shape {(n_s,)}, got {rho0.shape}")
        if transition.min() < 0.0:
            s, a, _ = np.unravel_index(int(transition.argmin()), transition.shape)
            raise ConfigError(f"transition[{s}][{a}]: negative entry")
        sums = transition.sum(axis=2)
        bad = np.abs(sums - 1.0) > _ROW_SUM_TOL
        if bad.any():
            s, a = np.argwhere(bad)[0]
            raise ConfigError(
                f"transition[{s}][{a}]: row sums to {sums[s, a]!r}, expected 1"
            )
        if rho0.min() < 0.0:
            raise ConfigError(f"rho0[{int(rho0.argmin())}]: negative entry")
        if abs(rho0.sum() - 1.0) > _ROW_SUM_TOL:
            raise ConfigError(f"rho0: sums to {rho0.sum()!r}, expected 1")
        r_min, r_max = float(self.r_min), float(self.r_max)
        if not (r_max > 0.0 and r_min >= 0.0 and r_min <= r_max):
            # The bound pair must bracket a positive reward range; r_min = 0
            # is accepted because the benchmark MDP carries zero rewards.
            raise ConfigError("reward bounds require 0 <= r_min <= r_max, r_max > 0")
        if reward.min() < r_min - 1e-12 or reward.max() > r_max + 1e-12:
            s, a = np.unravel_index(int(reward.argmin()), reward.shape)
            if reward[s, a] >= r_min - 1e-12:
                s, a = np.unravel_index(int(reward.argmax()), reward.shape)
            raise ConfigError(
                f"reward[{s}][{a}]={reward[s, a]!r} outside [r_min, r_max]"
            )
        if not (0.0 < float(self.gamma) < 1.0):
            raise ConfigError(f"gamma: must be in (0, 1), got {self.gamma!r}")
        if int(self.horizon) < 1:
            raise ConfigError(f"horizon: must be >= 1, got {self.horizon!r}")
        object.__setattr__(self, "n_states", n_s)
        object.__setattr__(self, "n_actions", n_a)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "r_min", r_min)
        object.__setattr__(self, "r_max", r_max)
        # Cumulative tables for inverse-CDF sampling.
        object.__setattr__(self, "_trans_cdf", frozen_array(transition.cumsum(axis=2)))
        object.__setattr__(self, "_rho0_cdf", frozen_array(rho0.cumsum()))

    def to_json(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "rho0": self.rho0.tolist(),
            "gamma": self.gamma,
            "horizon": self.horizon,
            "r_min": self.r_min,
            "r_max": self.r_max,
        }


_MDP_KEYS = {
    "n_states", "n_actions", "transition", "reward", "rho0",
    "gamma", "horizon", "r_min", "r_max",
}


def mdp_from_dict(obj: dict) -> TabularMdp:
    """Build a TabularMdp from the JSON object layout, naming bad keys."""
    if not isinstance(obj, dict):
        raise ConfigError("mdp: expected a JSON object")
    missing = _MDP_KEYS - obj.keys()
    if missing:
        raise ConfigError(f"mdp: missing key {sorted(missing)[0]!r}")
    unknown = obj.keys() - _MDP_KEYS
    if unknown:
        raise ConfigError(f"mdp: unknown key {sorted(unknown)[0]!r}")
    try:
        return TabularMdp(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mdp: {exc}") from exc


def load_mdp(path: str) -> TabularMdp:
    with open(path, "r", encoding="utf-8") as fh:
        return mdp_from_dict(json.load(fh))


def example_one_mdp(gamma: float = 0.5, horizon: int = 1) -> TabularMdp:
    """Three-state benchmark MDP (start state, two absorbing states).

    From s0 the actions are right -> s1 with reward 1, left -> s2 with
    reward 1, up -> s0 with reward 0; the absorbing states self-loop with
    reward 0.  With horizon 1 the expected return equals the closed-form
    objective of the piecewise policy family exactly; larger horizons add
    re-decision mass at s0 from the `up` self-loop.
    """
    from .policy import _example_one_layout  # layout shared with the family check

    layout = _example_one_layout()
    return TabularMdp(
        n_states=3,
        n_actions=3,
        transition=layout["transition"],
        reward=layout["reward"],
        rho0=np.array([1.0, 0.0, 0.0]),
        gamma=gamma,
        horizon=horizon,
        r_min=0.0,
        r_max=1.0,
    )


@dataclass(frozen=True)
class Trajectory:
    """Exactly-h-step rollout with the sampling seed that produced it."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    gamma: float
    seed: int
    log_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", frozen_array(self.states, dtype=np.int64))
        object.__setattr__(self, "actions", frozen_array(self.actions, dtype=np.int64))
        object.__setattr__(self, "rewards", frozen_array(self.rewards))
        object.__setattr__(self, "log_probs", frozen_array(self.log_probs))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self):
        """Ordered (state, action, reward) triples."""
        return list(zip(self.states.tolist(), self.actions.tolist(),
                        self.rewards.tolist()))


def policy_matrix(mdp: TabularMdp, family, theta: np.ndarray) -> np.ndarray:
    """pi(a|s) as an (n_states, n_actions) matrix."""
    return np.stack(
        [family.action_probs(theta, s) for s in range(mdp.n_states)], axis=0
    )


def _shape_check(mdp: TabularMdp, family) -> None:
    if getattr(family, "n_states", mdp.n_states) != mdp.n_states or \
            getattr(family, "n_actions", mdp.n_actions) != mdp.n_actions:
        raise ConfigError(
            f"policy family {family.name!r} has shape "
            f"({family.n_states}, {family.n_actions}), MDP has "
            f"({mdp.n_states}, {mdp.n_actions})"
        )
    if hasattr(family, "check_mdp"):
        family.check_mdp(mdp)


def sample_trajectory(mdp: TabularMdp, family, theta: np.ndarray,
                      seed: int) -> Trajectory:
    """Roll out exactly `horizon` steps; deterministic given the seed."""
    _shape_check(mdp, family)
    theta = np.asarray(theta, dtype=float)
    rng = derive_rng(seed)
    h = mdp.horizon
    draws = rng.random(2 * h + 1)
    states = np.empty(h, dtype=np.int64)
    actions = np.empty(h, dtype=np.int64)
    rewards = np.empty(h)
    log_probs = np.empty(h)
    s = int(np.searchsorted(mdp._rho0_cdf, draws[0], side="right"))
    s = min(s, mdp.n_states - 1)
    for t in range(h):
        probs = family.action_probs(theta, s)
        a = int(np.searchsorted(probs.cumsum(), draws[2 * t + 1], side="right"))
        a = min(a, mdp.n_actions - 1)
        states[t] = s
        actions[t] = a
        rewards[t] = mdp.reward[s, a]
        log_probs[t] = math.log(probs[a])
        nxt = int(np.searchsorted(mdp._trans_cdf[s, a], draws[2 * t + 2],
                                  side="right"))
        s = min(nxt, mdp.n_states - 1)
    return Trajectory(states=states, actions=actions, rewards=rewards,
                      gamma=mdp.gamma, seed=int(seed), log_probs=log_probs)


def sample_batch(mdp: TabularMdp, family, theta: np.ndarray, n: int,
                 seed: int, threads: int = 1) -> list[Trajectory]:
    """n independent trajectories with per-index derived seeds.

    The i-th trajectory uses the stream (seed, i); results are returned in
    index order regardless of execution order, so any thread count yields
    the serial output.
    """
    if n < 1:
        raise ConfigError("batch size must be >= 1")
    _shape_check(mdp, family)

    def one(i: int) -> Trajectory:
        rng = derive_rng(seed, i)
        sub_seed = int(rng.integers(0, 2**63 - 1))
        return sample_trajectory(mdp, family, theta, sub_seed)

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


def rollout_batch(mdp: TabularMdp, family, theta: np.ndarray, n: int,
                  seed: int, threads: int = 1
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array form of sample_batch: (states, actions, rewards), each (n, h).

    Uses exactly the per-index stream derivation of sample_batch /
    sample_trajectory, so row i equals the i-th Trajectory of the object
    path; it only skips the per-trajectory object construction.  Threads
    parallelize row generation only; rows land at their index, so any
    thread count yields the same arrays.
    """
    if n < 1:
        raise ConfigError("batch size must be >= 1")
    _shape_check(mdp, family)
    theta = np.asarray(theta, dtype=float)
    h = mdp.horizon
    pi_cdf = np.stack(
        [family.action_probs(theta, s) for s in range(mdp.n_states)]
    ).cumsum(axis=1)
    states = np.empty((n, h), dtype=np.int64)
    actions = np.empty((n, h), dtype=np.int64)
    n_s, n_a = mdp.n_states, mdp.n_actions
    trans_cdf = mdp._trans_cdf
    rho0_cdf = mdp._rho0_cdf

    def fill(i: int) -> None:
        sub_seed = int(derive_rng(seed, i).integers(0, 2 ** 63 - 1))
        draws = derive_rng(sub_seed).random(2 * h + 1)
        s = min(int(np.searchsorted(rho0_cdf, draws[0], side="right")), n_s - 1)
        for t in range(h):
            a = min(int(np.searchsorted(pi_cdf[s], draws[2 * t + 1],
                                        side="right")), n_a - 1)
            states[i, t] = s
            actions[i, t] = a
            s = min(int(np.searchsorted(trans_cdf[s, a], draws[2 * t + 2],
                                        side="right")), n_s - 1)

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n)))
    else:
        for i in range(n):
            fill(i)
    rewards = mdp.reward[states, actions]
    return states, actions, rewards


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """sum_t gamma^t r_{t+1} over the recorded steps."""
    if len(traj) == 0:
        raise ConfigError("discounted_return of empty trajectory")
    weights = gamma ** np.arange(len(traj))
    return float((weights * traj.rewards).sum())


def occupancy(mdp: TabularMdp, family, theta: np.ndarray) -> np.ndarray:
    """Truncated unnormalized discounted visitation sum_{t<h} gamma^t P_t.

    Total mass is (1 - gamma^h) / (1 - gamma).
    """
    _shape_check(mdp, family)
    pi = policy_matrix(mdp, family, theta)
    kernel = np.einsum("sa,sat->st", pi, mdp.transition)
    w = mdp.rho0.copy()
    d = np.zeros(mdp.n_states)
    for _ in range(mdp.horizon):
        d += w
        w = mdp.gamma * (w @ kernel)
    return d


def occupancy_mass(mdp: TabularMdp) -> float:
    return (1.0 - mdp.gamma ** mdp.horizon) / (1.0 - mdp.gamma)


def value_functions(mdp: TabularMdp, family, theta: np.ndarray):
    """Finite-horizon backward induction; returns the t = 0 slices.

    V_h = 0,  Q_t(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) V_{t+1}(s'),
    V_t(s) = sum_a pi(a|s) Q_t(s,a),  A = Q - V (advantages sum to zero
    under pi at every state).
    """
    _shape_check(mdp, family)
    pi = policy_matrix(mdp, family, theta)
    v = np.zeros(mdp.n_states)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(mdp.horizon):
        q = mdp.reward + mdp.gamma * (mdp.transition @ v)
        v = (pi * q).sum(axis=1)
    a = q - v[:, None]
    return v, q, a


def value_stack(mdp: TabularMdp, family, theta: np.ndarray):
    """All backward-induction slices: V[t] and Q[t] for t = 0..h.

    V[h] = 0.  Used by the exact gradient, which needs time-indexed values.
    """
    pi = policy_matrix(mdp, family, theta)
    h = mdp.horizon
    v = np.zeros((h + 1, mdp.n_states))
    q = np.zeros((h, mdp.n_states, mdp.n_actions))
    for t in range(h - 1, -1, -1):
        q[t] = mdp.reward + mdp.gamma * (mdp.transition @ v[t + 1])
        v[t] = (pi * q[t]).sum(axis=1)
    return v, q


def performance_difference_check(mdp: TabularMdp, family, theta_a: np.ndarray,
                                 theta_b: np.ndarray):
    """Both sides of the performance-difference identity at truncation h.

    lhs = E_rho0[V^a - V^b];  rhs = sum_s d^a(s) sum_a pi_a(a|s) A^b(s,a).
    The two agree within 2 * gamma^h * r_max / (1 - gamma).
    """
    v_a, _, _ = value_functions(mdp, family, theta_a)
    v_b, _, adv_b = value_functions(mdp, family, theta_b)
    lhs = float(mdp.rho0 @ (v_a - v_b))
    d_a = occupancy(mdp, family, theta_a)
    pi_a = policy_matrix(mdp, family, theta_a)
    rhs = float((d_a[:, None] * pi_a * adv_b).sum())
    return lhs, rhs


def perf_diff_tail_tolerance(mdp: TabularMdp) -> float:
    return 2.0 * mdp.gamma ** mdp.horizon * mdp.r_max / (1.0 - mdp.gamma)


def random_mdp(seed: int, n_states: int = 3, n_actions: int = 2,
               horizon: int = 4, gamma: float = 0.5,
               branching: int = 2) -> TabularMdp:
    """Random small MDP with at most `branching` successors per (s, a).

    Sparse transitions keep trajectory enumeration tractable for the
    oracle identity suites.
    """
    rng = derive_rng(seed, 0xc0ffee)
    n_b = min(branching, n_states)
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            targets = rng.choice(n_states, size=n_b, replace=False)
            weights = rng.dirichlet(np.ones(n_b))
            transition[s, a, targets] = weights
    reward = rng.uniform(0.1, 1.0, size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(min(2, n_states)))
    full_rho0 = np.zeros(n_states)
    full_rho0[: len(rho0)] = rho0
    return TabularMdp(
        n_states=n_states, n_actions=n_actions, transition=transition,
        reward=reward, rho0=full_rho0, gamma=gamma, horizon=horizon,
        r_min=0.1, r_max=1.0,
    )
