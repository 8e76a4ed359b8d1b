"""Noise schedules, forward corruption, and deterministic reverse samplers.

Discrete-time bookkeeping: ``alpha_bar[t]`` is the cumulative signal
coefficient after t corruption steps, with ``alpha_bar[0] == 1`` (no noise).
All functions here are pure; sampling trajectories can run in parallel.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

Array = np.ndarray

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"


def _as_array(x) -> Array:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta variances and cumulative alpha_bar coefficients."""

    T: int
    beta: Array          # shape (T,), beta[s-1] is the step-s variance
    alpha_bar: Array     # shape (T+1,), alpha_bar[0] = 1, strictly decreasing

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.beta.shape != (self.T,):
            raise ValueError(f"beta must have shape ({self.T},), got {self.beta.shape}")
        if self.alpha_bar.shape != (self.T + 1,):
            raise ValueError(
                f"alpha_bar must have shape ({self.T + 1},), got {self.alpha_bar.shape}"
            )
        if not (np.all(self.beta > 0.0) and np.all(self.beta < 1.0)):
            raise ValueError("every beta must lie in (0, 1)")
        if self.alpha_bar[0] != 1.0 or np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must start at 1 and strictly decrease")

    def abar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,beta,alpha_bar\n")
        for t in range(1, self.T + 1):
            buf.write(f"{t},{self.beta[t - 1]!r},{self.alpha_bar[t]!r}\n")
        return buf.getvalue()


def make_cosine_schedule(T: int, offset: float = 0.008) -> NoiseSchedule:
    """Squared-cosine alpha_bar profile with betas clipped into (0, 0.999]."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
    raw_abar = f / f[0]
    beta = 1.0 - raw_abar[1:] / raw_abar[:-1]
    beta = np.clip(beta, 1e-8, 0.999)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def forward_noise(x0, t: int, eps, sched: NoiseSchedule) -> Array:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, exactly.

    t = 0 is the zero-noise endpoint and returns x0 unchanged.
    """
    x0 = _as_array(x0)
    eps = _as_array(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} must match x0 shape {x0.shape}")
    abar = sched.abar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def x0_to_eps(x0_hat, x_t, t: int, sched: NoiseSchedule) -> Array:
    """Recover the implied noise: eps = (x_t - sqrt(abar)*x0_hat)/sqrt(1-abar)."""
    x0_hat = _as_array(x0_hat)
    x_t = _as_array(x_t)
    if x0_hat.shape != x_t.shape:
        raise ValueError(f"x0_hat shape {x0_hat.shape} must match x_t {x_t.shape}")
    abar = sched.abar(t)
    if abar >= 1.0:
        raise ValueError(f"alpha_bar = 1 at t = {t}: noise direction undefined")
    return (x_t - math.sqrt(abar) * x0_hat) / math.sqrt(1.0 - abar)


def x0_from_eps(x_t, eps_hat, t: int, sched: NoiseSchedule) -> Array:
    """Invert forward_noise for the clean estimate given a noise estimate."""
    x_t = _as_array(x_t)
    eps_hat = _as_array(eps_hat)
    abar = sched.abar(t)
    if abar <= 0.0:
        raise ValueError(f"alpha_bar = 0 at t = {t}: clean estimate undefined")
    return (x_t - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)


@dataclass(frozen=True)
class SamplerPlan:
    """Strictly decreasing visit times for a deterministic reverse pass."""

    method: str
    step_times: tuple[int, ...]

    def __post_init__(self):
        if self.method not in (FIRST_ORDER, SECOND_ORDER):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if len(self.step_times) < 1:
            raise ValueError("plan needs at least one step time")
        if any(t < 1 for t in self.step_times):
            raise ValueError("step times must be >= 1")
        if any(a <= b for a, b in zip(self.step_times[1:], self.step_times)):
            raise ValueError(f"step times must strictly decrease: {self.step_times}")

    @property
    def n_steps(self) -> int:
        return len(self.step_times)

    @staticmethod
    def equispaced(T: int, n_steps: int, method: str = SECOND_ORDER) -> "SamplerPlan":
        if not 1 <= n_steps <= T:
            raise ValueError(f"need 1 <= n_steps <= T, got {n_steps} and {T}")
        raw = [int(round(T * (n_steps - k) / n_steps)) for k in range(n_steps)]
        times: list[int] = []
        for t in raw:
            t = max(t, 1)
            if not times or t < times[-1]:
                times.append(t)
        return SamplerPlan(method=method, step_times=tuple(times))

    def transitions(self) -> list[tuple[int, int]]:
        """(from_t, to_t) pairs; the final transition lands on t = 0."""
        targets = list(self.step_times[1:]) + [0]
        return list(zip(self.step_times, targets))


def _half_log_snr(abar: float) -> float:
    return 0.5 * (math.log(abar) - math.log(1.0 - abar))


def sampler_step(
    x_t,
    eps_hat,
    from_t: int,
    to_t: int,
    sched: NoiseSchedule,
    method: str = FIRST_ORDER,
    prev_x0_hat=None,
    prev_from_t: int | None = None,
) -> Array:
    """One deterministic reverse update from time ``from_t`` to ``to_t``.

    First order: x_to = sqrt(abar_to)*x0_hat + sqrt(1-abar_to)*eps_hat with
    x0_hat recovered from (x_t, eps_hat).

    Second order replaces x0_hat with the standard data-prediction multistep
    extrapolation D = (1 + 1/(2r))*x0_hat - 1/(2r)*prev_x0_hat, where
    r = (lam_s - lam_r)/(lam_to - lam_s) and lam = 0.5*log(abar/(1-abar)).
    It falls back to first order when no history exists or the step lands on
    t = 0, where the half-log-SNR diverges.
    """
    if from_t <= to_t:
        raise ValueError(f"need from_t > to_t >= 0, got {from_t} -> {to_t}")
    x_t = _as_array(x_t)
    eps_hat = _as_array(eps_hat)
    x0_hat = x0_from_eps(x_t, eps_hat, from_t, sched)

    abar_to = sched.abar(to_t)
    use_second = (
        method == SECOND_ORDER
        and prev_x0_hat is not None
        and prev_from_t is not None
        and to_t >= 1
    )
    if use_second:
        lam_to = _half_log_snr(abar_to)
        lam_s = _half_log_snr(sched.abar(from_t))
        lam_r = _half_log_snr(sched.abar(prev_from_t))
        r = (lam_s - lam_r) / (lam_to - lam_s)
        coeff = 1.0 / (2.0 * r)
        d = (1.0 + coeff) * x0_hat - coeff * _as_array(prev_x0_hat)
    else:
        d = x0_hat
    return math.sqrt(abar_to) * d + math.sqrt(1.0 - abar_to) * eps_hat


def snr_at(omega_power: float, t: float, noise: float | NoiseSchedule) -> float:
    """Signal power at one frequency over the accumulated noise energy at t.

    ``noise`` is either a constant diffusion coefficient sigma (energy
    sigma^2 * t) or a NoiseSchedule, read in its variance-exploding form
    (energy (1 - abar_t)/abar_t). The two are verified independently; no
    bridge between them is asserted.
    """
    if omega_power < 0:
        raise ValueError(f"signal power must be >= 0, got {omega_power}")
    if isinstance(noise, NoiseSchedule):
        abar = noise.abar(int(t))
        energy = (1.0 - abar) / abar
    else:
        energy = float(noise) ** 2 * t
    if energy <= 0.0:
        raise ValueError(f"no accumulated noise energy at t = {t}")
    return omega_power / energy
