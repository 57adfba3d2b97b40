"""Noise schedule, forward process, reverse steps, Huber objective, sampling loop.

Timestep convention: t is 1-based, t in [1, T]; schedule arrays are 0-based,
so beta_t lives at beta[t - 1]. alpha_bar at t = 0 is defined as exactly 1,
which makes the final reverse step return the model's x0 prediction and
forces sigma_1 = 0 for every eta.

All step formulas take scalar schedule coefficients as Python floats, so one
implementation serves float64 numpy oracles and float32 torch tensors alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .motion import FRAME_WIDTH, MotionClip


@dataclass
class NoiseSchedule:
    """Tables beta, alpha_bar and sigma for T diffusion steps.

    sigma[t-1] = eta * sqrt(beta_tilde_t) with
    beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t,
    the posterior variance; eta = 0 gives a deterministic sampler and
    eta = 1 matches the posterior standard deviation.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    eta: float = 0.0

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t; t = 0 returns exactly 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigma[t - 1])

    def posterior_variance(self, t: int) -> float:
        self._check_t(t)
        ab_prev = self.alpha_bar_at(t - 1)
        ab = self.alpha_bar_at(t)
        return (1.0 - ab_prev) / (1.0 - ab) * self.beta_at(t)

    def manifest(self) -> dict:
        return {
            "T": self.T,
            "kind": self.kind,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "eta": self.eta,
        }

    def to_json(self) -> str:
        return json.dumps(self.manifest(), sort_keys=True)

    @staticmethod
    def from_manifest(manifest: dict) -> "NoiseSchedule":
        return make_schedule(
            manifest["T"], kind=manifest.get("kind", "linear"),
            beta_start=manifest.get("beta_start", 1e-4),
            beta_end=manifest.get("beta_end", 2e-2),
            eta=manifest.get("eta", 0.0),
        )


def make_schedule(
    T: int,
    kind: str = "linear",
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
    eta: float = 0.0,
) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    if np.any(beta <= 0) or np.any(beta >= 1):
        raise ConfigError("beta values must lie in (0, 1)")
    alpha_bar = np.cumprod(1.0 - beta)
    ab_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - ab_prev) / (1.0 - alpha_bar) * beta
    sigma = eta * np.sqrt(posterior_var)
    return NoiseSchedule(T, beta, alpha_bar, sigma, kind, beta_start, beta_end, eta)


@dataclass
class NoisySample:
    x_t: np.ndarray
    t: int
    eps: np.ndarray | None = None


def q_sample(x0, t: int, eps, schedule: NoiseSchedule):
    """Closed-form forward draw x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if getattr(eps, "shape", None) != getattr(x0, "shape", None):
        raise ShapeError(f"eps shape {getattr(eps, 'shape', None)} != x0 shape "
                         f"{getattr(x0, 'shape', None)}")
    ab = schedule.alpha_bar_at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def predict_eps_from_x0(x_t, t: int, x0_hat, schedule: NoiseSchedule):
    """Invert the forward closed form: the noise that explains x_t given x0_hat."""
    ab = schedule.alpha_bar_at(t)
    if 1.0 - ab <= 0.0:
        raise NumericalError(f"alpha_bar at t={t} is 1; epsilon undefined")
    return (x_t - math.sqrt(ab) * x0_hat) / math.sqrt(1.0 - ab)


def ddim_step(x_t, x0_hat, t: int, schedule: NoiseSchedule, z=None,
              sigma_t: float | None = None):
    """One reverse step of the x0-parametrized sampler.

    x_{t-1} = sqrt(ab_{t-1}) x0_hat + sqrt(1 - ab_{t-1} - sigma^2) eps_hat
              + sigma z,  with eps_hat derived from x0_hat.
    Deterministic when sigma_t = 0; at t = 1 (ab_0 = 1) it returns x0_hat.
    """
    if sigma_t is None:
        sigma_t = schedule.sigma_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    resid = 1.0 - ab_prev - sigma_t * sigma_t
    if resid < -1e-12:
        raise ConfigError(
            f"sigma_t^2 = {sigma_t * sigma_t:.3e} exceeds 1 - alpha_bar_{t - 1}"
        )
    eps_hat = predict_eps_from_x0(x_t, t, x0_hat, schedule)
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(max(resid, 0.0)) * eps_hat
    if sigma_t > 0.0:
        if z is None:
            raise ShapeError("sigma_t > 0 requires a noise draw z")
        out = out + sigma_t * z
    return out


def ddpm_step_eps(x_t, eps_hat, t: int, schedule: NoiseSchedule, z=None):
    """Epsilon-form reverse step with constant variance sigma_t^2 = beta_t."""
    beta = schedule.beta_at(t)
    ab = schedule.alpha_bar_at(t)
    out = (x_t - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
    if z is not None:
        out = out + math.sqrt(beta) * z
    return out


def posterior_mean(x_t, x0_hat, t: int, schedule: NoiseSchedule):
    """DDPM posterior mean mu_tilde(x_t, x0_hat); oracle counterpart of ddim_step."""
    ab = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    beta = schedule.beta_at(t)
    alpha_t = 1.0 - beta
    coef_x0 = math.sqrt(ab_prev) * beta / (1.0 - ab)
    coef_xt = math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab)
    return coef_x0 * x0_hat + coef_xt * x_t


def huber_loss(x0_hat, x0, mask=None, delta: float = 1.0):
    """Masked mean Huber penalty: quadratic below delta, linear above.

    mask, when given, holds per-frame validity flags broadcast over the
    feature axis; masked-out frames contribute nothing. Works on numpy
    arrays and torch tensors alike.
    """
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    if getattr(x0_hat, "shape", None) != getattr(x0, "shape", None):
        raise ShapeError("prediction and target shapes differ")
    diff = x0_hat - x0
    a = abs(diff)
    quad = a.clip(max=delta) if isinstance(a, np.ndarray) else a.clamp(max=delta)
    elem = 0.5 * quad * quad + delta * (a - quad)
    if mask is None:
        return elem.mean()
    m = mask.reshape(mask.shape + (1,) * (elem.ndim - mask.ndim))
    total = (elem * m).sum()
    count = m.sum() * (elem.size // mask.size if isinstance(elem, np.ndarray)
                       else elem.numel() // mask.numel())
    if float(count) == 0.0:
        raise NumericalError("huber loss over an entirely masked batch")
    return total / count


def sample_loop(
    model,
    cond,
    schedule: NoiseSchedule,
    n_frames: int = 180,
    width: int = FRAME_WIDTH,
    guidance=None,
    seed: int | np.random.Generator = 0,
    source: str = "synthetic",
) -> MotionClip:
    """Run the full reverse chain from x_T ~ N(0, I) down to x_0.

    model(x_t, t, cond) must return an x0 prediction of the input shape;
    guidance, when given, maps (x, t) -> x and is applied to each freshly
    produced x_{t-1} (it receives t - 1). Deterministic for a fixed seed
    when eta = 0 and guidance is absent or pure.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = rng.standard_normal((n_frames, width))
    for t in range(schedule.T, 0, -1):
        x0_hat = np.asarray(model(x, t, cond), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise ShapeError(
                f"model returned {x0_hat.shape}, expected {x.shape}"
            )
        sigma_t = schedule.sigma_at(t)
        z = rng.standard_normal(x.shape) if sigma_t > 0 else None
        x = ddim_step(x, x0_hat, t, schedule, z=z)
        if guidance is not None:
            x = guidance(x, t - 1)
    frames = np.asarray(x, dtype=np.float32)
    return MotionClip(frames, np.ones(n_frames, dtype=np.uint8), source=source)
