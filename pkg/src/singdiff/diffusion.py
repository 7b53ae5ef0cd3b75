"""Closed-form diffusion quantities for the mean-reverting Gaussian process.

The forward process drifts data toward N(mu, I) under a linear noise
schedule beta_t. Everything here is exact given the schedule: the decay
factor gamma_{s,t} = exp(-1/2 int_s^t beta_u du), the forward perturbation
kernel, the conditional score, the weighted score-matching loss, and two
reverse-time step rules (first-order ODE and the maximum-likelihood SDE
solver built from the bridge coefficients phi/nu/sigma^2).

All functions are pure. They accept numpy arrays or torch tensors for the
state arguments; scalar coefficients are computed in float64 either way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

ArrayLike = Union[np.ndarray, "torch.Tensor"]  # noqa: F821

EULER_ODE = "euler_ode"
FAST_ML = "fast_ml"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear schedule beta_t = beta0 + (beta1 - beta0) * t on t in [0, 1].

    t_min is the lower clamp for training-time draws of t; it keeps the
    loss away from the vanishing-variance singularity at t = 0.
    """

    beta0: float = 0.05
    beta1: float = 20.0
    t_min: float = 1e-5

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError(f"beta0 must be positive, got {self.beta0}")
        if self.beta1 <= self.beta0:
            raise ValueError(f"beta1 must exceed beta0, got {self.beta1} <= {self.beta0}")
        if not 0 < self.t_min < 1:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")

    def beta(self, t):
        return self.beta0 + (self.beta1 - self.beta0) * t


@dataclass(frozen=True)
class SolverCoefficients:
    """Step coefficients for the maximum-likelihood reverse-SDE solver.

    kappa, omega and sigma enter the update rule directly; the bridge
    quantities (gamma_*, phi, nu, sigma2) are exposed for testing.
    """

    kappa: float
    omega: float
    sigma: float
    gamma_s_t: float
    gamma_0_s: float
    gamma_0_t: float
    phi: float
    nu: float
    sigma2: float


def _check_interval(s, t):
    if np.any(np.asarray(s) < 0) or np.any(np.asarray(t) > 1):
        raise ValueError(f"times must lie in [0, 1], got s={s}, t={t}")
    if np.any(np.asarray(s) > np.asarray(t)):
        raise ValueError(f"need s <= t, got s={s}, t={t}")


def integrate_beta(s, t, schedule: NoiseSchedule = NoiseSchedule()):
    """Exact int_s^t beta_u du for the linear schedule.

    Accepts scalars or broadcastable numpy arrays with 0 <= s <= t <= 1.
    """
    _check_interval(s, t)
    ds = np.asarray(t) - np.asarray(s)
    quad = (np.asarray(t) ** 2 - np.asarray(s) ** 2) / 2.0
    out = schedule.beta0 * ds + (schedule.beta1 - schedule.beta0) * quad
    return float(out) if np.ndim(out) == 0 else out


def gamma(s, t, schedule: NoiseSchedule = NoiseSchedule()):
    """Decay factor gamma_{s,t} = exp(-1/2 int_s^t beta_u du).

    Satisfies the semigroup identity gamma_{0,s} * gamma_{s,t} = gamma_{0,t}.
    """
    out = np.exp(-0.5 * integrate_beta(s, t, schedule))
    return float(out) if np.ndim(out) == 0 else out


def solver_coefficients(t: float, h: float, schedule: NoiseSchedule = NoiseSchedule()) -> SolverCoefficients:
    """Coefficients for one reverse step from time t to s = t - h.

    phi and nu weight X_t and X_0 in the Gaussian bridge posterior
    p(X_s | X_0, X_t); sigma2 is its variance. kappa and omega recast the
    posterior mean as a correction to the plugged-in score so the step
    rule needs only (X_t, mu, score).
    """
    if not 0 < h <= t <= 1:
        raise ValueError(f"need 0 < h <= t <= 1, got t={t}, h={h}")
    s = t - h
    g_st = gamma(s, t, schedule)
    g_0s = gamma(0.0, s, schedule)
    g_0t = gamma(0.0, t, schedule)
    v_t = 1.0 - g_0t * g_0t
    phi = g_st * (1.0 - g_0s * g_0s) / v_t
    nu = g_0s * (1.0 - g_st * g_st) / v_t
    sigma2 = (1.0 - g_0s * g_0s) * (1.0 - g_st * g_st) / v_t
    beta_t = schedule.beta(t)
    kappa = nu * v_t / (g_0t * beta_t * h) - 1.0
    omega = (phi - 1.0) / (beta_t * h) + (1.0 + kappa) / v_t - 0.5
    return SolverCoefficients(
        kappa=kappa,
        omega=omega,
        sigma=math.sqrt(sigma2),
        gamma_s_t=g_st,
        gamma_0_s=g_0s,
        gamma_0_t=g_0t,
        phi=phi,
        nu=nu,
        sigma2=sigma2,
    )


def _coeff_like(value, ref: ArrayLike):
    """Broadcast a float or per-sample 1-D coefficient against ref."""
    if np.ndim(value) == 0:
        return value if isinstance(ref, np.ndarray) else float(value)
    shaped = np.asarray(value).reshape((-1,) + (1,) * (ref.ndim - 1))
    if isinstance(ref, np.ndarray):
        return shaped
    import torch

    return torch.as_tensor(shaped, dtype=ref.dtype, device=ref.device)


def forward_marginal(x0: ArrayLike, mu: ArrayLike, t, noise: ArrayLike,
                     schedule: NoiseSchedule = NoiseSchedule()) -> ArrayLike:
    """Sample x_t from the forward kernel given data x0 and terminal mean mu.

    x_t = g * x0 + (1 - g) * mu + sqrt(1 - g^2) * noise with g = gamma_{0,t}.
    t may be a scalar or one value per leading (batch) index.
    """
    if x0.shape != mu.shape or x0.shape != noise.shape:
        raise ValueError(
            f"x0/mu/noise shapes must match, got {x0.shape}, {mu.shape}, {noise.shape}"
        )
    g = gamma(0.0, t, schedule)
    gc = _coeff_like(g, x0)
    sc = _coeff_like(np.sqrt(1.0 - np.asarray(g) ** 2), x0)
    return gc * x0 + (1.0 - gc) * mu + sc * noise


def true_score(x_t: ArrayLike, x0: ArrayLike, mu: ArrayLike, t,
               schedule: NoiseSchedule = NoiseSchedule()) -> ArrayLike:
    """Conditional score grad log p_t(x_t | x0): the regression target."""
    if x_t.shape != x0.shape or x_t.shape != mu.shape:
        raise ValueError(
            f"x_t/x0/mu shapes must match, got {x_t.shape}, {x0.shape}, {mu.shape}"
        )
    if np.any(np.asarray(t) <= 0):
        raise ValueError(f"true_score requires t > 0, got t={t}")
    g = gamma(0.0, t, schedule)
    var = 1.0 - np.asarray(g) ** 2
    gc = _coeff_like(g, x_t)
    vc = _coeff_like(var, x_t)
    mean = gc * x0 + (1.0 - gc) * mu
    return -(x_t - mean) / vc


def diffusion_loss(score_pred: ArrayLike, noise: ArrayLike, t,
                   schedule: NoiseSchedule = NoiseSchedule()):
    """Variance-weighted score-matching loss.

    lambda_t * mean((score_pred + noise / sqrt(lambda_t))^2) with
    lambda_t = 1 - gamma_{0,t}^2; zero exactly when the prediction hits
    the conditional score of the x_t built from the same noise draw.
    Per-sample t values weight each sample's mean before averaging.
    """
    if score_pred.shape != noise.shape:
        raise ValueError(f"shape mismatch: {score_pred.shape} vs {noise.shape}")
    if np.any(np.asarray(t) < schedule.t_min):
        raise ValueError(f"t below t_min={schedule.t_min}, got t={t}")
    g = gamma(0.0, t, schedule)
    lam = 1.0 - np.asarray(g) ** 2
    lc = _coeff_like(lam, score_pred)
    sq = (score_pred + noise / lc ** 0.5) ** 2
    if np.ndim(lam) == 0:
        return (lc * sq).mean()
    return (lc * sq).reshape(sq.shape[0], -1).mean(-1).mean()


def euler_ode_step(x_t: ArrayLike, mu: ArrayLike, score: ArrayLike, t: float, h: float,
                   schedule: NoiseSchedule = NoiseSchedule()) -> ArrayLike:
    """One first-order step of the reverse ODE, from t down to t - h."""
    if not 0 < h <= t <= 1:
        raise ValueError(f"need 0 < h <= t <= 1, got t={t}, h={h}")
    return x_t - h * 0.5 * schedule.beta(t) * (mu - x_t - score)


def fast_ml_step(x_t: ArrayLike, mu: ArrayLike, score: ArrayLike, t: float, h: float,
                 schedule: NoiseSchedule = NoiseSchedule(), xi: ArrayLike = None) -> ArrayLike:
    """One step of the maximum-likelihood reverse-SDE solver.

    x_{t-h} = x_t + beta_t h ((1/2 + omega)(x_t - mu) + (1 + kappa) score)
              + sigma * xi
    """
    c = solver_coefficients(t, h, schedule)
    drift = schedule.beta(t) * h * ((0.5 + c.omega) * (x_t - mu) + (1.0 + c.kappa) * score)
    out = x_t + drift
    if xi is not None:
        out = out + c.sigma * xi
    return out


def sample(score_fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
           mu: np.ndarray,
           n_steps: int,
           mode: str = FAST_ML,
           temperature: float = 1.0,
           rng: np.random.Generator = None,
           schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    """Draw x_0 by integrating the chosen reverse rule on a uniform grid.

    Starts from x_1 = mu + temperature * xi and walks t = 1, 1-h, ..., h
    with h = 1/n_steps, calling score_fn(x_t, mu, t) at every node.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if mode not in (EULER_ODE, FAST_ML):
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    mu = np.asarray(mu, dtype=np.float64)
    x = mu + temperature * rng.standard_normal(mu.shape)
    h = 1.0 / n_steps
    for k in range(n_steps):
        t = (n_steps - k) / n_steps
        score = score_fn(x, mu, t)
        if mode == EULER_ODE:
            x = euler_ode_step(x, mu, score, t, h, schedule)
        else:
            xi = rng.standard_normal(mu.shape)
            x = fast_ml_step(x, mu, score, t, h, schedule, xi=xi)
    return x
