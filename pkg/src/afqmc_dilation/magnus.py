"""Auxiliary-field noise and stochastic Magnus slice generators.

A slice of length ``dt`` is driven by ``A(s) = -H1 + sqrt(2) sum_g L_g dW_g/ds``.
All generators are one-body coefficient matrices; arrays may carry leading
batch axes (trajectories, steps) in front of the orbital axes.

The second-order term is ``(1/2) int int [A(s1), A(s2)]``.  For commuting
channels it reduces to drift-noise commutators,

    -sqrt(2) sum_g [H1, L_g] (J0_g - dt dW_g / 2),

where ``J0 = int_0^dt W(s) ds``.  The centred combination equals
``sqrt(dt^3/12) eta_g`` and is independent of ``dW_g``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ContractViolation, ResourceLimitError, UnsupportedFeatureError
from .gaussian import expm_batched, fock_matrix
from .model import ModelInstance
from .rng import CounterRNG

NoiseMode = Literal["gaussian", "bounded3point"]
CommutatorForm = Literal["derived", "printed"]

SQRT3 = math.sqrt(3.0)


def three_point(u: np.ndarray) -> np.ndarray:
    """Map uniforms to {-sqrt3, 0, +sqrt3} with probabilities {1/6, 2/3, 1/6}."""
    return np.where(u < 1 / 6, -SQRT3, np.where(u > 5 / 6, SQRT3, 0.0))


@dataclass(frozen=True, eq=False)
class NoiseSample:
    dt: float
    dW: np.ndarray
    eta: np.ndarray
    mode: NoiseMode = "gaussian"

    @property
    def J0(self) -> np.ndarray:
        return 0.5 * self.dt * self.dW + math.sqrt(self.dt**3 / 12) * self.eta

    @property
    def n_channels(self) -> int:
        return self.dW.shape[-1]

    def __getitem__(self, item) -> "NoiseSample":
        return NoiseSample(self.dt, self.dW[item], self.eta[item], self.mode)


def noise_from_uniforms(dt: float, u: np.ndarray, n_channels: int, mode: NoiseMode) -> NoiseSample:
    from scipy.special import ndtri

    u_w, u_e = u[..., :n_channels], u[..., n_channels:2 * n_channels]
    if mode == "gaussian":
        dW = math.sqrt(dt) * ndtri(u_w)
    elif mode == "bounded3point":
        dW = math.sqrt(dt) * three_point(u_w)
    else:
        raise ContractViolation(f"unknown noise mode {mode!r}")
    return NoiseSample(dt, dW, ndtri(u_e), mode)


def sample_noise(
    dt: float,
    n_channels: int,
    mode: NoiseMode,
    rng: CounterRNG,
    step: int = 0,
    trajectories=0,
) -> NoiseSample:
    """Noise for one step; arrays have shape ``(n_traj, n_channels)``.

    Draws are a pure function of ``(rng.seed, rng.stream, step, trajectory)``.
    """
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    if n_channels < 0:
        raise ContractViolation("n_channels must be nonnegative")
    u = rng.uniforms(step, trajectories, max(2 * n_channels, 1))
    return noise_from_uniforms(dt, u, n_channels, mode)


def sample_path_noise(
    dt: float,
    n_steps: int,
    n_channels: int,
    mode: NoiseMode,
    rng: CounterRNG,
    trajectories,
) -> NoiseSample:
    """Noise for ``n_steps`` consecutive steps, arrays ``(n_traj, n_steps, n_channels)``."""
    parts = [sample_noise(dt, n_channels, mode, rng, k, trajectories) for k in range(n_steps)]
    return NoiseSample(
        dt,
        np.stack([p.dW for p in parts], axis=-2),
        np.stack([p.eta for p in parts], axis=-2),
        mode,
    )


# --- generators ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SliceGenerator:
    """``omega = K - i H`` with ``K`` and ``H`` Hermitian (arrays, batched)."""

    omega: np.ndarray
    order: int

    @property
    def K(self) -> np.ndarray:
        return hermitian_split(self.omega)[0]

    @property
    def H(self) -> np.ndarray:
        return hermitian_split(self.omega)[1]

    def __getitem__(self, item) -> "SliceGenerator":
        return SliceGenerator(self.omega[item], self.order)


def hermitian_split(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    omega = np.asarray(omega)
    adj = np.conj(np.swapaxes(omega, -1, -2))
    return 0.5 * (omega + adj), 0.5j * (omega - adj)


def drift_noise_commutators(model: ModelInstance) -> np.ndarray:
    """``[H1, L_g]`` stacked over channels."""
    h = model.H1.coeff
    Ls = model.L_matrices()
    return h @ Ls - Ls @ h


def slice_generators(
    model: ModelInstance,
    noise: NoiseSample,
    order: int = 2,
    commutator_form: CommutatorForm = "derived",
) -> np.ndarray:
    """Orbital-level ``Omega`` for every noise entry, shape ``batch + (n, n)``."""
    if order not in (1, 2):
        raise UnsupportedFeatureError("only Magnus orders 1 and 2 are assembled")
    if noise.n_channels != model.n_channels:
        raise ContractViolation("noise channel count does not match the model")
    dt = noise.dt
    Ls = model.L_matrices()
    omega = -dt * model.H1.coeff + math.sqrt(2) * np.einsum("...g,gij->...ij", noise.dW, Ls)
    if order == 2 and model.n_channels:
        if not model.channels_commute():
            raise UnsupportedFeatureError("second-order slices need pairwise commuting channels")
        comm = drift_noise_commutators(model)
        if commutator_form == "derived":
            weight = -math.sqrt(2) * (noise.J0 - 0.5 * dt * noise.dW)
        elif commutator_form == "printed":
            weight = -noise.J0
        else:
            raise ContractViolation(f"unknown commutator form {commutator_form!r}")
        omega = omega + np.einsum("...g,gij->...ij", weight, comm)
    return omega


def magnus_slice(
    order: int,
    model: ModelInstance,
    noise: NoiseSample,
    commutator_form: CommutatorForm = "derived",
) -> SliceGenerator:
    return SliceGenerator(slice_generators(model, noise, order, commutator_form), order)


def slice_norm_bound(model: ModelInstance, dt: float) -> float:
    """Pathwise bound on ``||K||`` for bounded three-point noise."""
    noise = sum(ch.L.norm() for ch in model.channels)
    return dt * model.H1.norm() + math.sqrt(6 * dt) * noise


def constant_success_step(model: ModelInstance, theta: float = 2.0) -> float:
    """Largest ``dt`` with ``e * theta * slice_norm_bound(dt) <= 1``."""
    a = model.H1.norm()
    b = math.sqrt(6) * sum(ch.L.norm() for ch in model.channels)
    c = 1.0 / (math.e * theta)
    # a x^2 + b x - c = 0 with x = sqrt(dt)
    x = (-b + math.sqrt(b * b + 4 * a * c)) / (2 * a) if a > 0 else c / b
    return x * x


# --- iterated integrals -------------------------------------------------------


def iterated_covariance(dt: float = 1.0) -> np.ndarray:
    """Covariance of ``(dW, J0, J00, J000)`` from the Ito isometry."""
    c = np.empty((4, 4))
    for a in range(4):
        for b in range(4):
            c[a, b] = dt ** (a + b + 1) / ((a + b + 1) * math.factorial(a) * math.factorial(b))
    return c


_UNIT_CHOL = np.linalg.cholesky(iterated_covariance(1.0))


@dataclass(frozen=True, eq=False)
class IteratedIntegrals:
    dt: float
    dW: np.ndarray
    J0: np.ndarray
    J00: np.ndarray
    J000: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return iterated_covariance(self.dt)


def sample_iterated_integrals(
    dt: float,
    rng: CounterRNG,
    n_channels: int = 1,
    step: int = 0,
    trajectories=0,
) -> IteratedIntegrals:
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    z = rng.normals(step, trajectories, 4 * n_channels).reshape(-1, n_channels, 4)
    x = z @ _UNIT_CHOL.T
    x = x * dt ** (np.arange(4) + 0.5)
    return IteratedIntegrals(dt, x[..., 0], x[..., 1], x[..., 2], x[..., 3])


# --- path refinement and aggregation -----------------------------------------


def aggregate_increments(dW_fine: np.ndarray, J0_fine: np.ndarray, dt_fine: float):
    """Coarse ``(dW, J0)`` from consecutive fine increments along axis ``-2``."""
    n = dW_fine.shape[-2]
    W_before = np.cumsum(dW_fine, axis=-2) - dW_fine
    dW = dW_fine.sum(axis=-2)
    J0 = (J0_fine + W_before * dt_fine).sum(axis=-2)
    return dW, J0


def _bridge_operator(n_sub: int, dt: float):
    d = dt / n_sub
    block = np.array([[d, d * d / 2], [d * d / 2, d**3 / 3]])
    # x ordered as (dW_0, j_0, dW_1, j_1, ...)
    cov = np.kron(np.eye(n_sub), block)
    A = np.zeros((2, 2 * n_sub))
    A[0, 0::2] = 1.0
    A[1, 1::2] = 1.0
    A[1, 0::2] = d * (n_sub - 1 - np.arange(n_sub))
    gain = cov @ A.T @ np.linalg.inv(A @ cov @ A.T)
    return np.linalg.cholesky(cov), A, gain


def refine_increments(
    dt: float,
    dW: np.ndarray,
    J0: np.ndarray,
    n_sub: int,
    rng: CounterRNG,
    step: int = 0,
    trajectories=None,
):
    """Fine ``(dW, J0)`` of shape ``(n_traj, n_sub, n_ch)`` conditioned on the coarse pair.

    Exact Gaussian conditioning of the unconstrained fine path on its two
    linear functionals; aggregation reproduces ``(dW, J0)`` to rounding.
    """
    dW = np.atleast_2d(dW)
    J0 = np.atleast_2d(J0)
    n_traj, n_ch = dW.shape
    if trajectories is None:
        trajectories = np.arange(n_traj)
    chol, A, gain = _bridge_operator(n_sub, dt)
    z = rng.normals(step, trajectories, 2 * n_sub * n_ch).reshape(n_traj, n_ch, 2 * n_sub)
    x = z @ chol.T
    y = np.stack([dW, J0], axis=-1)
    x = x + (y - x @ A.T) @ gain.T
    x = x.reshape(n_traj, n_ch, n_sub, 2)
    return np.moveaxis(x[..., 0], 1, 2), np.moveaxis(x[..., 1], 1, 2)


def path_product(model: ModelInstance, dt: float, dW: np.ndarray, J0: np.ndarray, order: int = 2) -> np.ndarray:
    """Time-ordered orbital product over axis ``-2`` of ``(..., n_steps, n_ch)`` inputs."""
    eta = (J0 - 0.5 * dt * dW) / math.sqrt(dt**3 / 12)
    omegas = slice_generators(model, NoiseSample(dt, dW, eta), order)
    steps = expm_batched(omegas)
    out = steps[..., 0, :, :]
    for k in range(1, steps.shape[-3]):
        out = steps[..., k, :, :] @ out
    return out


def pathwise_log_oracle(
    model: ModelInstance,
    noise: NoiseSample,
    n_sub: int,
    rng: CounterRNG,
    trajectory: int = 0,
) -> np.ndarray:
    """Fock-level log of the fine time-ordered product along a refined path."""
    import scipy.linalg

    dWf, J0f = refine_increments(noise.dt, noise.dW, noise.J0, n_sub, rng, 0, trajectory)
    prod = path_product(model, noise.dt / n_sub, dWf[0], J0f[0], order=2)
    return scipy.linalg.logm(fock_matrix(prod))


# --- deterministic weak oracle -----------------------------------------------


def mean_slice_propagator(
    model: ModelInstance,
    dt: float,
    order: int = 2,
    mode: NoiseMode = "gaussian",
    n_nodes: int = 10,
    commutator_form: CommutatorForm = "derived",
    max_points: int = 1_000_000,
) -> np.ndarray:
    """``E[Gamma(exp(Omega))]`` on the Fock space by tensor quadrature.

    Gauss-Hermite nodes over each ``dW_g`` (exact sum over three points in
    bounded mode) and over each ``eta_g`` when ``order == 2``.  Steps are
    i.i.d., so the ``n``-step mean is the ``n``-th matrix power.
    """
    g = model.n_channels
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    if mode == "gaussian":
        wx, ww = x, w
    else:
        wx, ww = np.array([-SQRT3, 0.0, SQRT3]), np.array([1 / 6, 2 / 3, 1 / 6])
    axes = [(wx, ww)] * g
    if order == 2:
        axes += [(x, w)] * g
    n_points = int(np.prod([len(a[0]) for a in axes])) if axes else 1
    if n_points > max_points:
        raise ResourceLimitError(f"{n_points} quadrature points exceeds {max_points}")
    nodes = np.array(list(itertools.product(*[a[0] for a in axes]))).reshape(n_points, len(axes))
    weights = np.prod(np.array(list(itertools.product(*[a[1] for a in axes]))).reshape(n_points, len(axes)), axis=1)
    dW = math.sqrt(dt) * nodes[:, :g]
    eta = nodes[:, g:] if order == 2 else np.zeros_like(dW)
    omegas = slice_generators(model, NoiseSample(dt, dW, eta, mode), order, commutator_form)
    fock = fock_matrix(expm_batched(omegas))
    return np.einsum("p,pij->ij", weights, fock)
