"""Ornstein-Uhlenbeck model of a global magnetic dephasing field.

The field F(t) (rad/s) obeys dF = -F/tau dt + sqrt(c) dW.  Its stationary
variance is c tau / 2 and the Ramsey coherence of a qubit decays on the
time scale T2 = 2 / (c tau^2) when t >> tau.

Random numbers come from ``numpy.random.default_rng([seed, stream])`` so
that each trajectory has its own reproducible stream regardless of the
order in which trajectories are run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit


@dataclass(frozen=True)
class OUParams:
    c: float
    tau: float
    seed: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("diffusion constant must be non-negative")
        if not self.tau > 0:
            raise ValueError("correlation time must be positive")

    @property
    def T2(self) -> float:
        return 2.0 / (self.c * self.tau**2) if self.c > 0 else np.inf

    @property
    def stationary_std(self) -> float:
        return float(np.sqrt(self.c * self.tau / 2.0))


def ou_from_T2(T2: float, tau_ratio: float = 0.1, seed: int = 0) -> OUParams:
    """OU parameters with tau = tau_ratio * T2 and c = 2 / (T2 tau^2).

    ``T2 = inf`` gives a noiseless process (c = 0) with tau = 1 s.
    """
    if not T2 > 0:
        raise ValueError("T2 must be positive")
    if not 0 < tau_ratio < 1:
        raise ValueError("tau_ratio must lie in (0, 1)")
    if np.isinf(T2):
        return OUParams(0.0, 1.0, seed)
    tau = tau_ratio * T2
    return OUParams(2.0 / (T2 * tau**2), tau, seed)


def make_rng(seed: int, stream: int | tuple = 0) -> np.random.Generator:
    """Independent generator for one (seed, stream) pair."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    key.extend(int(s) for s in (stream if isinstance(stream, tuple) else (stream,)))
    return np.random.default_rng(key)


@dataclass
class OUTrajectoryState:
    F: float
    t: float
    rng: np.random.Generator


def ou_initial(params: OUParams, stream: int | tuple = 0, stationary: bool = True) -> OUTrajectoryState:
    """Start a trajectory with F(0) drawn from N(0, c tau/2) (or F(0) = 0)."""
    rng = make_rng(params.seed, stream)
    F0 = params.stationary_std * rng.standard_normal() if stationary else 0.0
    return OUTrajectoryState(float(F0), 0.0, rng)


def ou_step(state: OUTrajectoryState, params: OUParams, dt: float) -> OUTrajectoryState:
    """Exact update F' = F e^{-dt/tau} + sqrt(c tau/2 (1 - e^{-2 dt/tau})) n."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    decay = np.exp(-dt / params.tau)
    amp = np.sqrt(0.5 * params.c * params.tau * -np.expm1(-2 * dt / params.tau))
    n = state.rng.standard_normal()
    state.F = float(state.F * decay + amp * n)
    state.t += dt
    return state


def ou_path(params: OUParams, dt: float, num_steps: int, stream: int | tuple = 0,
            stationary: bool = True) -> np.ndarray:
    """F at the left edge of each of ``num_steps`` steps, plus the final value.

    Uses the same draws, in the same order, as repeated :func:`ou_step`.
    """
    st = ou_initial(params, stream, stationary)
    out = np.empty(num_steps + 1)
    out[0] = st.F
    if num_steps == 0:
        return out
    decay = np.exp(-dt / params.tau)
    amp = np.sqrt(0.5 * params.c * params.tau * -np.expm1(-2 * dt / params.tau))
    noise = st.rng.standard_normal(num_steps)
    F = st.F
    for k in range(num_steps):
        F = F * decay + amp * noise[k]
        out[k + 1] = F
    return out


def ou_phase_paths(params: OUParams, times: np.ndarray, num_traj: int, stream: int = 0,
                   stationary: bool = True) -> np.ndarray:
    """Accumulated phases phi(t) = int_0^t F for many trajectories at once.

    The pair (F, phi) is advanced with its exact Gaussian transition between
    consecutive grid points, so the grid spacing may be arbitrary.  Returns
    an array (num_traj, len(times)).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and sorted")
    rng = make_rng(params.seed, (stream, 0xF4))
    c, tau = params.c, params.tau
    F = params.stationary_std * rng.standard_normal(num_traj) if stationary else np.zeros(num_traj)
    phi = np.zeros(num_traj)
    out = np.empty((num_traj, len(times)))
    t_prev = 0.0
    for k, t in enumerate(times):
        h = t - t_prev
        if h > 0 and c > 0:
            e1 = np.exp(-h / tau)
            e2 = np.exp(-2 * h / tau)
            var_F = 0.5 * c * tau * (1 - e2)
            var_phi = c * tau**2 * (h - 2 * tau * (1 - e1) + 0.5 * tau * (1 - e2))
            cov = 0.5 * c * tau**2 * (1 - e1) ** 2
            cov_mat = np.array([[var_F, cov], [cov, var_phi]])
            # eigen-based square root stays valid when the matrix is near singular
            w, v = np.linalg.eigh(cov_mat)
            root = v * np.sqrt(np.clip(w, 0, None))
            z = rng.standard_normal((2, num_traj))
            dF, dphi = root @ z
            phi = phi + F * tau * (1 - e1) + dphi
            F = F * e1 + dF
        elif h > 0:
            phi = phi + F * h
        out[:, k] = phi
        t_prev = t
    return out


def phase_variance(t, params: OUParams, initial: str = "stationary") -> np.ndarray:
    """<phi(t)^2> for the accumulated phase.

    ``initial='stationary'`` averages over F(0) ~ N(0, c tau/2); ``'zero'``
    starts every trajectory from F(0) = 0.
    """
    t = np.asarray(t, dtype=float)
    c, tau = params.c, params.tau
    if initial == "stationary":
        return c * tau**2 * (t + tau * np.expm1(-t / tau))
    if initial == "zero":
        return c * tau**2 * (t - tau * (1.5 - 2 * np.exp(-t / tau) + 0.5 * np.exp(-2 * t / tau)))
    raise ValueError("initial must be 'stationary' or 'zero'")


def analytic_coherence(t, params: OUParams, initial: str = "stationary") -> np.ndarray:
    """Ramsey envelope <sigma_x(t)> = exp(-<phi^2>/2)."""
    return np.exp(-0.5 * phase_variance(t, params, initial))


def fit_t2(times: np.ndarray, coherence: np.ndarray, sigma: np.ndarray | None = None) -> tuple[float, float]:
    """Fit A exp(-t/T2) and return (T2, its standard error)."""
    times = np.asarray(times, dtype=float)
    coherence = np.asarray(coherence, dtype=float)
    guess_T2 = times[np.argmin(np.abs(coherence - np.exp(-1)))] or times[-1]
    popt, pcov = curve_fit(lambda t, A, T2: A * np.exp(-t / T2), times, coherence,
                           p0=(1.0, guess_T2), sigma=sigma, absolute_sigma=sigma is not None)
    return float(popt[1]), float(np.sqrt(pcov[1, 1]))


@dataclass
class CoherenceResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    analytic: np.ndarray
    T2_fit: float
    T2_fit_err: float
    num_traj: int


def simulate_coherence(params: OUParams, num_traj: int = 5000, num_points: int = 200,
                       t_max_over_T2: float = 3.0, stream: int = 0) -> CoherenceResult:
    """Ramsey decay of a single qubit under global OU dephasing.

    For pure dephasing <sigma_x(t)> = <cos phi(t)>, so the phase paths are
    all that is needed.
    """
    times = np.linspace(0.0, t_max_over_T2 * params.T2, num_points)
    phi = ou_phase_paths(params, times, num_traj, stream)
    x = np.cos(phi)
    mean = x.mean(axis=0)
    stderr = x.std(axis=0, ddof=1) / np.sqrt(num_traj)
    T2, err = fit_t2(times, mean)
    return CoherenceResult(times, mean, stderr, analytic_coherence(times, params), T2, err, num_traj)
