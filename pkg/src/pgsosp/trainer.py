"""Instrumented REINFORCE iteration and the local-improvement verifiers.

The update is theta_{k+1} = theta_k + alpha * g_k with g_k a single-sample
(batch_size 1) stochastic gradient; larger batches average samples and are
labeled an extension in run metadata.  Runs record, at report intervals,
the objective, gradient norm, top Hessian eigenvalue, L1/L2/L3 region
label, and the bookkeeping process varsigma that advances by 1 on L1/L3
iterates and by the escape budget kappa_hat_0 on L2 iterates.

Synthetic sources isolate the saddle-escape and trapping mechanics from
MDP sampling noise:

* ``QuadraticSaddleSource`` - J(t) = 1/2 (t-c)^T H (t-c) - cubic/6 |t-c|^3
  with bounded i.i.d. gradient noise whose energy along the top eigenvector
  is controlled by construction (the curvature-correlation floor).  The
  cubic term is zero by default; a nonzero value makes the objective
  deviate from its own quadratic model, which the coupled-run gap test
  needs (an exactly quadratic objective has identically zero gap).
* ``StronglyConcaveSource`` - J(t) = -zeta/2 |t - t*|^2 with noise uniform
  on the sphere of radius noise_sigma (bounded, zero mean, second moment
  noise_sigma^2).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PreconditionError
from .estimators import pg_estimate
from .mdp import TabularMdp, sample_trajectory
from .oracle import analytic_example1, exact_gradient, exact_hessian, exact_objective
from .policy import ExampleOnePiecewise
from .sosp import (
    Region,
    SecondOrderReport,
    escape_budget,
    escape_budget_admissible,
    report_from_grad_hessian,
    trap_budget,
)
from .util import derive_rng, frozen_array

_DIVERGENCE_NORM = 1e8
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Gradient noise for synthetic sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Bounded zero-mean gradient noise.

    kinds:
      rademacher       independent +-scale per coordinate
                       (second moment along any unit u is scale^2)
      sphere           uniform direction, radius scale (moment scale^2/dim)
      signed_direction +-scale along a fixed unit direction
      orthogonal       rademacher projected off a fixed unit direction
                       (zero energy along it - the floor-violating case)
      zero             no noise

    frozen=True reuses the step-0 draw at every step.
    """

    kind: str = "rademacher"
    scale: float = 1.0
    direction: np.ndarray | None = None
    frozen: bool = False

    def __post_init__(self):
        if self.kind not in ("rademacher", "sphere", "signed_direction",
                             "orthogonal", "zero"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind in ("signed_direction", "orthogonal"):
            if self.direction is None:
                raise ConfigError(f"noise kind {self.kind!r} needs a direction")
            d = np.asarray(self.direction, dtype=float)
            if abs(np.linalg.norm(d) - 1.0) > 1e-10:
                raise ConfigError("noise direction must be a unit vector")
            object.__setattr__(self, "direction", frozen_array(d))

    def draw(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        """(n, dim) noise block."""
        if self.kind == "zero":
            return np.zeros((n, dim))
        if self.kind == "rademacher":
            return self.scale * (2.0 * rng.integers(0, 2, size=(n, dim)) - 1.0)
        if self.kind == "sphere":
            v = rng.standard_normal((n, dim))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return self.scale * v
        if self.kind == "signed_direction":
            signs = 2.0 * rng.integers(0, 2, size=(n, 1)) - 1.0
            return self.scale * signs * self.direction[None, :]
        # orthogonal: rademacher with the given direction projected out
        v = self.scale * (2.0 * rng.integers(0, 2, size=(n, dim)) - 1.0)
        return v - (v @ self.direction)[:, None] * self.direction[None, :]

    def iota_sq(self, u: np.ndarray) -> float:
        """E[<noise, u>^2] for a unit direction u, by construction."""
        u = np.asarray(u, dtype=float)
        dim = u.size
        if self.kind == "zero":
            return 0.0
        if self.kind == "rademacher":
            return self.scale ** 2
        if self.kind == "sphere":
            return self.scale ** 2 / dim
        if self.kind == "signed_direction":
            return self.scale ** 2 * float(self.direction @ u) ** 2
        # orthogonal: independent coordinates minus the projected component
        cos = float(self.direction @ u)
        return self.scale ** 2 * (1.0 - cos ** 2)


# ---------------------------------------------------------------------------
# Gradient sources
# ---------------------------------------------------------------------------

class QuadraticSaddleSource:
    """Quadratic (optionally cubic-perturbed) objective with CNC noise."""

    def __init__(self, hessian: np.ndarray, noise: NoiseSpec,
                 center: np.ndarray | None = None, cubic: float = 0.0):
        h = np.asarray(hessian, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or np.abs(h - h.T).max() > 1e-10:
            raise ConfigError("QuadraticSaddleSource needs a symmetric matrix")
        self.h = frozen_array(h)
        self.dim = h.shape[0]
        self.noise = noise
        self.center = frozen_array(np.zeros(self.dim) if center is None else center)
        self.cubic = float(cubic)
        eigvals, eigvecs = np.linalg.eigh(h)
        self.lambda_max = float(eigvals[-1])
        self.u_p = frozen_array(eigvecs[:, -1])

    def objective(self, theta: np.ndarray) -> float:
        d = np.asarray(theta, dtype=float) - self.center
        value = 0.5 * float(d @ self.h @ d)
        if self.cubic:
            value -= self.cubic / 6.0 * float(np.linalg.norm(d)) ** 3
        return value

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        d = np.asarray(theta, dtype=float) - self.center
        g = self.h @ d
        if self.cubic:
            g = g - 0.5 * self.cubic * np.linalg.norm(d) * d
        return g

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        d = np.asarray(theta, dtype=float) - self.center
        h = np.array(self.h)
        r = float(np.linalg.norm(d))
        if self.cubic and r > 0:
            h = h - 0.5 * self.cubic * (r * np.eye(self.dim) + np.outer(d, d) / r)
        return h

    def sample_gradient(self, theta, rng) -> np.ndarray:
        return self.gradient(theta) + self.noise.draw(rng, 1, self.dim)[0]

    def sample_pair(self, theta, rng):
        """One-draw (gradient sample, Hessian sample); Hessian is exact."""
        return self.sample_gradient(theta, rng), np.array(self.h)


class StronglyConcaveSource:
    """J = -zeta/2 |theta - theta_star|^2 with spherical bounded noise."""

    def __init__(self, zeta: float, theta_star: np.ndarray, noise_sigma: float,
                 noise_bound: float | None = None):
        if zeta <= 0:
            raise ConfigError("zeta must be positive")
        self.zeta = float(zeta)
        self.theta_star = frozen_array(theta_star)
        self.dim = self.theta_star.size
        if noise_bound is None:
            noise_bound = noise_sigma
        if noise_sigma < 0 or noise_sigma > noise_bound + 1e-12:
            raise ConfigError("need 0 <= noise_sigma <= noise_bound")
        self.noise_sigma = float(noise_sigma)
        self.noise_bound = float(noise_bound)
        self.noise = NoiseSpec(kind="sphere" if noise_sigma > 0 else "zero",
                               scale=self.noise_sigma)

    def objective(self, theta: np.ndarray) -> float:
        d = np.asarray(theta, dtype=float) - self.theta_star
        return -0.5 * self.zeta * float(d @ d)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return -self.zeta * (np.asarray(theta, dtype=float) - self.theta_star)

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        return -self.zeta * np.eye(self.dim)

    def sample_gradient(self, theta, rng) -> np.ndarray:
        return self.gradient(theta) + self.noise.draw(rng, 1, self.dim)[0]

    def sample_pair(self, theta, rng):
        return self.sample_gradient(theta, rng), self.hessian(theta)


class MdpPolicySource:
    """MDP + policy family as a gradient source.

    Oracle quantities come from the exact pipeline; for the piecewise
    benchmark family the closed forms are used directly (the canonical
    benchmark MDP has horizon 1, where the closed forms and the truncated
    MDP objective coincide exactly).
    """

    def __init__(self, mdp: TabularMdp, family):
        self.mdp = mdp
        self.family = family
        self.dim = family.param_dim
        self._analytic = isinstance(family, ExampleOnePiecewise)

    def objective(self, theta) -> float:
        if self._analytic:
            return analytic_example1(theta).objective
        return exact_objective(self.mdp, self.family, theta)

    def gradient(self, theta) -> np.ndarray:
        if self._analytic:
            return analytic_example1(theta).grad
        return exact_gradient(self.mdp, self.family, theta).value

    def hessian(self, theta) -> np.ndarray:
        if self._analytic:
            return analytic_example1(theta).hessian
        return exact_hessian(self.mdp, self.family, theta)

    def _draw_trajectory(self, theta, rng):
        seed = int(rng.integers(0, 2 ** 63 - 1))
        return sample_trajectory(self.mdp, self.family, theta, seed)

    def sample_gradient(self, theta, rng) -> np.ndarray:
        return pg_estimate(self._draw_trajectory(theta, rng), self.family, theta)

    def sample_pair(self, theta, rng):
        from .estimators import hessian_estimate

        traj = self._draw_trajectory(theta, rng)
        return (pg_estimate(traj, self.family, theta),
                hessian_estimate(traj, self.family, theta))


# ---------------------------------------------------------------------------
# Instrumented run
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    alpha: float
    max_iters: int
    epsilon: float
    chi: float
    delta: float = 0.1
    batch_size: int = 1
    seed: int = 0
    report_every: int = 1
    kappa_hat_0: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.max_iters < 0 or self.batch_size < 1:
            raise ConfigError("need alpha >= 0, max_iters >= 0, batch_size >= 1")
        if self.epsilon <= 0 or self.chi <= 0:
            raise ConfigError("need epsilon > 0 and chi > 0")
        if self.report_every < 1 or self.kappa_hat_0 < 1:
            raise ConfigError("need report_every >= 1 and kappa_hat_0 >= 1")


@dataclass(frozen=True)
class RunRow:
    k: int
    theta: np.ndarray
    objective: float
    grad_norm: float
    lambda_max: float
    region: Region
    varsigma: int


@dataclass
class RunRecord:
    rows: list[RunRow]
    final_report: SecondOrderReport | None
    wall_time: float
    diverged_at: int | None = None
    metadata: dict = field(default_factory=dict)

    def trace_rows(self):
        for row in self.rows:
            yield [row.k, *row.theta.tolist(), row.objective, row.grad_norm,
                   row.lambda_max, row.region.value, row.varsigma]

    def trace_header(self, dim: int):
        return ["k", *[f"theta_{i}" for i in range(dim)], "J", "grad_norm",
                "lambda_max", "region", "varsigma"]

    def summary(self) -> dict:
        # Wall time is intentionally excluded: output files must be
        # byte-identical across repeated runs with the same seed.
        out = dict(self.metadata)
        out["n_rows"] = len(self.rows)
        out["diverged_at"] = self.diverged_at
        if self.rows:
            last = self.rows[-1]
            out["final"] = {
                "k": last.k, "theta": last.theta.tolist(),
                "objective": last.objective, "grad_norm": last.grad_norm,
                "lambda_max": last.lambda_max, "region": last.region.value,
                "varsigma": last.varsigma,
            }
        return out


def _varsigma_increment(region: Region, kappa_hat_0: int) -> int:
    return 1 if region in (Region.L1, Region.L3) else kappa_hat_0


def run(source, config: TrainerConfig, theta0: np.ndarray) -> RunRecord:
    """Execute max_iters updates with reports every report_every steps.

    Fully deterministic given (config, theta0): the k-th update's i-th
    sample uses the stream (seed, k, i).  Aborts (recording the offending
    k) when an iterate goes non-finite or leaves the norm guard.
    """
    start = time.perf_counter()
    theta = np.array(theta0, dtype=float)
    if theta.shape != (source.dim,):
        raise ConfigError(f"theta0 must have shape ({source.dim},)")
    rows: list[RunRow] = []
    varsigma = 0
    final_report = None
    diverged_at = None

    def record(k: int):
        nonlocal varsigma, final_report
        report = report_from_grad_hessian(
            source.gradient(theta), source.hessian(theta),
            config.epsilon, config.chi,
        )
        rows.append(RunRow(
            k=k, theta=theta.copy(), objective=source.objective(theta),
            grad_norm=report.grad_norm, lambda_max=report.lambda_max,
            region=report.region, varsigma=varsigma,
        ))
        varsigma += _varsigma_increment(report.region, config.kappa_hat_0)
        final_report = report

    for k in range(config.max_iters):
        if k % config.report_every == 0:
            record(k)
        samples = [
            source.sample_gradient(theta, derive_rng(config.seed, k, i))
            for i in range(config.batch_size)
        ]
        theta = theta + config.alpha * (np.sum(samples, axis=0) / config.batch_size)
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > _DIVERGENCE_NORM:
            diverged_at = k + 1
            break
    if diverged_at is None and config.max_iters > 0:
        record(config.max_iters)

    return RunRecord(
        rows=rows,
        final_report=final_report,
        wall_time=time.perf_counter() - start,
        diverged_at=diverged_at,
        metadata={
            "alpha": config.alpha, "max_iters": config.max_iters,
            "epsilon": config.epsilon, "chi": config.chi,
            "delta": config.delta, "batch_size": config.batch_size,
            "seed": config.seed, "report_every": config.report_every,
            "kappa_hat_0": config.kappa_hat_0,
            "batch_extension": config.batch_size > 1,
        },
    )


# ---------------------------------------------------------------------------
# One-step improvement on the large-gradient region
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prop1Result:
    mean_gain: float
    std_error: float
    bound: float
    sampled_sigma_sq: float
    grad_norm: float
    trials: int
    passes: bool

    def to_json(self) -> dict:
        return {
            "mean_gain": self.mean_gain, "std_error": self.std_error,
            "bound": self.bound, "sampled_sigma_sq": self.sampled_sigma_sq,
            "grad_norm": self.grad_norm, "trials": self.trials,
            "passes": self.passes,
        }


def verify_prop1(source, theta: np.ndarray, alpha: float, trials: int,
                 seed: int, epsilon: float, ell: float,
                 sigma: float) -> Prop1Result:
    """Empirical one-step gain vs (alpha - ell a^2/2)|grad|^2 - ell a^2 s^2/2.

    Requires the point to be in the large-gradient region (|grad| > eps by
    the oracle) and alpha < min{2 eps^2 / ((eps^2 + sigma^2) ell), 2/ell}.
    The bound is evaluated with the oracle gradient norm and the sampled
    deviation second moment; passes when the empirical mean gain clears
    the bound minus three standard errors.
    """
    theta = np.asarray(theta, dtype=float)
    grad = source.gradient(theta)
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm <= epsilon:
        raise PreconditionError(
            f"point is not in the large-gradient region: |grad| = "
            f"{grad_norm:.6g} <= epsilon = {epsilon:.6g}"
        )
    alpha_cap = min(2.0 * epsilon ** 2 / ((epsilon ** 2 + sigma ** 2) * ell),
                    2.0 / ell)
    if not (0.0 < alpha < alpha_cap):
        raise PreconditionError(
            f"alpha must lie in (0, {alpha_cap:.6g}), got {alpha:.6g}"
        )
    j0 = source.objective(theta)
    gains = np.empty(trials)
    dev_sq = 0.0
    for i in range(trials):
        g = source.sample_gradient(theta, derive_rng(seed, i))
        gains[i] = source.objective(theta + alpha * g) - j0
        dev_sq += float(np.linalg.norm(g - grad) ** 2)
    dev_sq /= trials
    mean_gain = float(gains.sum() / trials)
    std_error = float(gains.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    bound = (alpha - ell * alpha ** 2 / 2.0) * grad_norm ** 2 \
        - ell * alpha ** 2 * dev_sq / 2.0
    return Prop1Result(
        mean_gain=mean_gain, std_error=std_error, bound=bound,
        sampled_sigma_sq=dev_sq, grad_norm=grad_norm, trials=trials,
        passes=mean_gain >= bound - 3.0 * std_error,
    )


# ---------------------------------------------------------------------------
# Coupled quadratic-model iteration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoupledRunResult:
    main_iterates: np.ndarray
    model_iterates: np.ndarray
    max_gap: float


def coupled_quadratic_run(source, theta0: np.ndarray, alpha: float,
                          steps: int, seed: int,
                          kappa_hat_0: int | None = None) -> CoupledRunResult:
    """Main iteration vs its frozen quadratic model on a shared draw.

    The stochastic pieces (the step-0 gradient noise xi0 and the one-shot
    Hessian estimate H0_hat) are drawn once and drive both sequences:

        model:  t^_{k+1} = t^_k + alpha (g0 + H0_hat (t^_k - t0))
        main:   t_{k+1}  = t_k + alpha (grad J(t_k)
                                        + (H0_hat - H0)(t^_k - t0) + xi0)

    so the gap comes only from J deviating from its quadratic model (plus
    Hessian-estimate error); on an exactly quadratic objective the two
    recursions coincide and the gap is identically zero.
    """
    import warnings

    theta0 = np.asarray(theta0, dtype=float)
    if kappa_hat_0 is not None and steps > kappa_hat_0:
        warnings.warn(
            f"steps = {steps} exceeds the escape budget {kappa_hat_0}",
            stacklevel=2,
        )
    rng = derive_rng(seed)
    g_sample, h0_hat = source.sample_pair(theta0, rng)
    xi0 = g_sample - source.gradient(theta0)
    h0 = source.hessian(theta0)
    g0 = source.gradient(theta0) + xi0

    main = [theta0.copy()]
    model = [theta0.copy()]
    max_gap = 0.0
    for _ in range(steps):
        t_main, t_model = main[-1], model[-1]
        xi_hat = (h0_hat - h0) @ (t_model - theta0)
        main.append(t_main + alpha * (source.gradient(t_main) + xi_hat + xi0))
        model.append(t_model + alpha * (g0 + h0_hat @ (t_model - theta0)))
        max_gap = max(max_gap, float(np.linalg.norm(main[-1] - model[-1])))
    return CoupledRunResult(
        main_iterates=np.array(main), model_iterates=np.array(model),
        max_gap=max_gap,
    )


# ---------------------------------------------------------------------------
# Saddle escape (vectorized across runs)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeResult:
    escape_fraction: float
    mean_escape_steps: float
    kappa_hat_0: int
    mean_gain: float
    mean_gain_at_kappa: float
    gain_threshold: float
    iota_sq: float
    step_cap: int
    runs: int

    def to_json(self) -> dict:
        return {
            "escape_fraction": self.escape_fraction,
            "mean_escape_steps": self.mean_escape_steps,
            "kappa_hat_0": self.kappa_hat_0,
            "mean_gain": self.mean_gain,
            "mean_gain_at_kappa": self.mean_gain_at_kappa,
            "gain_threshold": self.gain_threshold,
            "iota_sq": self.iota_sq,
            "step_cap": self.step_cap,
            "runs": self.runs,
        }


def verify_escape(source: QuadraticSaddleSource, alpha: float, runs: int,
                  seed: int, chi: float, epsilon: float, sigma_h0: float,
                  cap_factor: int = 10, theta0: np.ndarray | None = None,
                  iota_sq: float | None = None) -> EscapeResult:
    """Fraction of runs whose objective gain reaches alpha^2 iota^2 sqrt(chi eps).

    Success is a value gain, not leaving a geometric region.  Each run
    iterates from theta0 (the saddle center by default) until the gain
    threshold or the step cap cap_factor * kappa_hat_0.  iota_sq defaults
    to the source noise's constructed floor along the top eigenvector;
    pass the benchmark floor explicitly for violation (contrast) runs.
    """
    if source.lambda_max < math.sqrt(chi * epsilon) - 1e-12:
        raise PreconditionError(
            f"saddle source needs lambda_max >= sqrt(chi*eps) = "
            f"{math.sqrt(chi * epsilon):.6g}, got {source.lambda_max:.6g}"
        )
    kappa = escape_budget(alpha, sigma_h0, chi, epsilon)
    cap = cap_factor * kappa
    if iota_sq is None:
        iota_sq = source.noise.iota_sq(source.u_p)
    threshold = alpha ** 2 * iota_sq * math.sqrt(chi * epsilon)

    dim = source.dim
    theta = np.tile(source.center if theta0 is None else np.asarray(theta0, float),
                    (runs, 1))
    j0 = np.array([source.objective(t) for t in theta])
    escape_step = np.full(runs, -1, dtype=np.int64)
    gain_at_kappa = None
    rng = derive_rng(seed)
    frozen_noise = None
    if source.noise.frozen:
        frozen_noise = source.noise.draw(rng, runs, dim)

    d = theta - source.center
    gains = np.zeros(runs)
    for step in range(1, cap + 1):
        active = escape_step < 0
        if not active.any():
            break
        noise = frozen_noise if frozen_noise is not None \
            else source.noise.draw(rng, runs, dim)
        grad = d @ source.h
        if source.cubic:
            norms = np.linalg.norm(d, axis=1, keepdims=True)
            grad = grad - 0.5 * source.cubic * norms * d
        d = np.where(active[:, None], d + alpha * (grad + noise), d)
        value = 0.5 * np.einsum("ij,jk,ik->i", d, source.h, d)
        if source.cubic:
            value = value - source.cubic / 6.0 * np.linalg.norm(d, axis=1) ** 3
        gains = np.where(active, value - j0, gains)
        newly = active & (gains >= threshold)
        escape_step[newly] = step
        if step == kappa:
            gain_at_kappa = gains.copy()

    if gain_at_kappa is None:
        # Every run escaped before the budget step; gains are frozen at
        # their escape values, which is what the budget snapshot would see.
        gain_at_kappa = gains.copy()

    escaped = escape_step >= 0
    return EscapeResult(
        escape_fraction=float(escaped.mean()),
        mean_escape_steps=float(escape_step[escaped].mean()) if escaped.any() else float("nan"),
        kappa_hat_0=kappa,
        mean_gain=float(gains.mean()),
        mean_gain_at_kappa=float(gain_at_kappa.mean()),
        gain_threshold=threshold,
        iota_sq=float(iota_sq),
        step_cap=cap,
        runs=runs,
    )


def default_escape_benchmark(runs: int = 200, seed: int = 0,
                             contrast: bool = False,
                             alpha: float = 1e-3) -> EscapeResult:
    """Two-dimensional saddle with eigenvalues +-1 and unit CNC noise.

    The contrast variant restricts the noise to the orthogonal complement
    of the escape direction (floor violated) while keeping the benchmark
    gain threshold, documenting that the floor is what drives escape.
    """
    u_p = np.array([1.0, 0.0])
    if contrast:
        noise = NoiseSpec(kind="orthogonal", scale=1.0, direction=u_p)
    else:
        noise = NoiseSpec(kind="rademacher", scale=1.0)
    source = QuadraticSaddleSource(hessian=np.diag([1.0, -1.0]), noise=noise)
    return verify_escape(source, alpha=alpha, runs=runs, seed=seed,
                         chi=1.0, epsilon=1.0, sigma_h0=10.0,
                         iota_sq=1.0)


# ---------------------------------------------------------------------------
# Trapping near a local maximum (vectorized across runs)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrapResult:
    stay_fraction: float
    kappa_0: int
    alpha: float
    varrho: float
    delta: float
    runs: int
    log_cap_relaxation: float

    def to_json(self) -> dict:
        return {
            "stay_fraction": self.stay_fraction, "kappa_0": self.kappa_0,
            "alpha": self.alpha, "varrho": self.varrho, "delta": self.delta,
            "runs": self.runs, "log_cap_relaxation": self.log_cap_relaxation,
        }


def verify_trap(source: StronglyConcaveSource, alpha: float, runs: int,
                seed: int, delta: float, varrho: float,
                theta0: np.ndarray,
                log_cap_relaxation: float = 1.0) -> TrapResult:
    """Fraction of runs staying inside the radius-varrho ball for kappa_0 steps.

    theta0 must lie inside the inner ball of radius varrho/sqrt(3).
    """
    theta0 = np.asarray(theta0, dtype=float)
    start_dist = float(np.linalg.norm(theta0 - source.theta_star))
    if start_dist > varrho / math.sqrt(3.0) + 1e-12:
        raise PreconditionError(
            f"theta0 must start inside the inner ball of radius "
            f"{varrho / math.sqrt(3.0):.6g}, got distance {start_dist:.6g}"
        )
    kappa = trap_budget(alpha, delta)
    dim = source.dim
    d = np.tile(theta0 - source.theta_star, (runs, 1))
    stayed = np.ones(runs, dtype=bool)
    rng = derive_rng(seed)
    for _ in range(kappa):
        noise = source.noise.draw(rng, runs, dim)
        d = d + alpha * (-source.zeta * d + noise)
        stayed &= np.linalg.norm(d, axis=1) <= varrho
    return TrapResult(
        stay_fraction=float(stayed.mean()), kappa_0=kappa, alpha=alpha,
        varrho=varrho, delta=delta, runs=runs,
        log_cap_relaxation=log_cap_relaxation,
    )


def trap_benchmark_alpha(zeta: float, varrho: float, noise_sigma: float,
                         delta: float, relaxation: float = 1.0) -> float:
    """Largest admissible step size for the trap benchmark.

    Takes the four-way cap min{delta, 1/zeta, zeta/ell^2, zeta rho^2/(3 s^2)}
    with ell = zeta, then shrinks until alpha*ln(1/alpha) clears the log
    cap (evaluated with the source's gradient bound zeta*rho + sigma in
    the role of the reward-weighted score bound), scaled by `relaxation`.
    """
    ell = zeta
    cap = min(delta, 1.0 / zeta, zeta / ell ** 2,
              zeta * varrho ** 2 / (3.0 * noise_sigma ** 2))
    grad_bound = zeta * varrho + noise_sigma
    rhs = relaxation * 2.0 * zeta * varrho ** 4 / (
        27.0 * (grad_bound ** 2 + zeta * varrho ** 2 + noise_sigma ** 2) ** 2
    )

    def log_ok(a: float) -> bool:
        return a * math.log(1.0 / a) <= rhs

    cap = min(cap, 1.0 / math.e)
    if log_ok(cap):
        return cap
    lo, hi = 1e-12, cap
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if log_ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def default_trap_benchmark(runs: int = 500, seed: int = 0,
                           relaxation: float = 1.0) -> TrapResult:
    """Unit strongly-concave bowl, noise radius 0.3, delta 0.2.

    Starts on the boundary of the inner ball (the hardest admissible
    start) and runs the full trapping budget at the capped step size.
    """
    zeta, varrho, noise_sigma, delta = 1.0, 1.0, 0.3, 0.2
    source = StronglyConcaveSource(zeta=zeta, theta_star=np.zeros(2),
                                   noise_sigma=noise_sigma)
    alpha = trap_benchmark_alpha(zeta, varrho, noise_sigma, delta, relaxation)
    theta0 = np.array([varrho / math.sqrt(3.0), 0.0])
    return verify_trap(source, alpha=alpha, runs=runs, seed=seed, delta=delta,
                       varrho=varrho, theta0=theta0,
                       log_cap_relaxation=relaxation)


# ---------------------------------------------------------------------------
# Multi-seed benchmark study (vectorized across seeds)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Example1StudyResult:
    l3_fraction: float
    first_l3: np.ndarray
    aborted: int
    n_seeds: int
    max_updates: int
    alpha: float
    epsilon: float
    chi: float
    kappa_hat_0: int | None

    def to_json(self) -> dict:
        return {
            "l3_fraction": self.l3_fraction,
            "first_l3": self.first_l3.tolist(),
            "aborted": self.aborted,
            "n_seeds": self.n_seeds,
            "max_updates": self.max_updates,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "chi": self.chi,
            "kappa_hat_0": self.kappa_hat_0,
        }


def example1_policy_step(theta: np.ndarray, uniforms: np.ndarray):
    """Vectorized single-trajectory gradient samples on the benchmark MDP.

    theta: (n, 2) parameter block; uniforms: (n,) action draws.  Returns
    (g, valid) where g[i] is the score-times-return sample for seed i at
    horizon 1 and valid[i] is False where the parameters have left the
    family's domain.  Matches the per-point family formulas exactly.
    """
    t1, t2 = theta[:, 0], theta[:, 1]
    in_box = (t1 >= 0.0) & (t1 <= 1.0) & (t2 >= 0.0) & (t2 <= 1.0)
    q = 1.0 - t1 ** 2 + t2 ** 2
    p1 = _INV_SQRT_2PI * q
    p2 = _INV_SQRT_2PI * np.exp((t1 ** 2 + t2 ** 2 - 2.0) / 2.0)
    valid = np.where(in_box, True, p2 <= 1.0)

    g = np.zeros_like(theta)
    # In-box: action `right` w.p. p1 has reward 1 and score (-2 t1, 2 t2)/q;
    # `up` has reward 0 so its sample vanishes.
    take_right = in_box & (uniforms < p1)
    safe_q = np.where(q > 0.0, q, 1.0)
    g[:, 0] = np.where(take_right, -2.0 * t1 / safe_q, 0.0)
    g[:, 1] = np.where(take_right, 2.0 * t2 / safe_q, 0.0)
    # Out-of-box: action `left` w.p. p2 has reward 1 and score theta.
    take_left = (~in_box) & (uniforms < p2)
    g[:, 0] = np.where(take_left, t1, g[:, 0])
    g[:, 1] = np.where(take_left, t2, g[:, 1])
    return g, valid


def example1_classify_values(theta: np.ndarray):
    """Vectorized (grad_norm, lambda_max) of the benchmark closed forms."""
    t1, t2 = theta[:, 0], theta[:, 1]
    in_box = (t1 >= 0.0) & (t1 <= 1.0) & (t2 >= 0.0) & (t2 <= 1.0)
    norm_sq = t1 ** 2 + t2 ** 2
    j_out = _INV_SQRT_2PI * np.exp((norm_sq - 2.0) / 2.0)
    grad_norm = np.where(in_box, 2.0 * _INV_SQRT_2PI * np.sqrt(norm_sq),
                         j_out * np.sqrt(norm_sq))
    lam = np.where(in_box, 2.0 * _INV_SQRT_2PI, j_out * (1.0 + norm_sq))
    return grad_norm, lam


def example1_sosp_study(n_seeds: int, theta0: np.ndarray, alpha: float,
                        epsilon: float, chi: float, max_updates: int,
                        seed: int, report_every: int = 50,
                        kappa_hat_0: int | None = None) -> Example1StudyResult:
    """Run n_seeds REINFORCE chains on the benchmark MDP in lockstep.

    Each seed's chain stops at its first iterate classified L3 (by the
    closed-form derivatives) or at max_updates.  Sampling uses one shared
    deterministic stream with one uniform per (seed, step).
    """
    theta = np.tile(np.asarray(theta0, dtype=float), (n_seeds, 1))
    first_l3 = np.full(n_seeds, -1, dtype=np.int64)
    aborted = np.zeros(n_seeds, dtype=bool)
    rng = derive_rng(seed)

    def classify(step: int):
        active = (first_l3 < 0) & ~aborted
        if not active.any():
            return
        grad_norm, lam = example1_classify_values(theta)
        l3 = (grad_norm <= epsilon) & (lam <= math.sqrt(chi * epsilon))
        newly = active & l3
        first_l3[newly] = step

    classify(0)
    for step in range(1, max_updates + 1):
        active = (first_l3 < 0) & ~aborted
        if not active.any():
            break
        uniforms = rng.random(n_seeds)
        g, valid = example1_policy_step(theta, uniforms)
        aborted |= active & ~valid
        move = active & valid
        theta = np.where(move[:, None], theta + alpha * g, theta)
        if step % report_every == 0 or step == max_updates:
            classify(step)

    reached = first_l3 >= 0
    return Example1StudyResult(
        l3_fraction=float(reached.mean()),
        first_l3=first_l3,
        aborted=int(aborted.sum()),
        n_seeds=n_seeds,
        max_updates=max_updates,
        alpha=alpha,
        epsilon=epsilon,
        chi=chi,
        kappa_hat_0=kappa_hat_0,
    )


def study_kappa_hat(alpha: float, sigma_h0: float, chi: float,
                    epsilon: float) -> int | None:
    """Escape budget for the study's bookkeeping, or None when inadmissible."""
    if escape_budget_admissible(alpha, sigma_h0):
        return escape_budget(alpha, sigma_h0, chi, epsilon)
    return None
