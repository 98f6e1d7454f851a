"""Deterministic evaluation of the tree-indexed Markov chain.

Along a root-to-leaf path the field is a time-inhomogeneous Markov chain
phi_{n+1} = 0, phi_n, ..., phi_0 with transition densities

    p_k(phi | phi') = exp(v_k(phi') - b v_{k-1}(phi)) * N(phi - phi'; 0, sigma_k^2/beta).

Every observable needed here is 1-periodic in the chain value, so it is
enough to propagate the law of phi_k mod 1 on a uniform grid.  The kernel
acting on periodic densities is a wrapped Gaussian, applied as a circular
convolution (trapezoid rule, done with the FFT).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, TruncationError
from .model import ModelConfig, fourier_coeffs
from .observables import gamma_weights
from .rgflow import (DROP, Q_HARD, FlowTrace, PeriodicFunction, SpectralCoeffs,
                     gaussian_damping, grid, potential_from_coeffs, run_flow,
                     wrapped_gaussian)


# --------------------------------------------------------------------------
# densities and kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarginalDensity:
    """Density of phi_k mod 1 on the grid; ``point`` marks a point mass instead."""

    values: np.ndarray
    level: int
    point: float | None = None

    @property
    def grid_size(self) -> int:
        return self.values.size

    def expect(self, f: np.ndarray) -> float:
        """E f(phi_k) for a function sampled on the grid."""
        if self.point is not None:
            return float(_at_point(f, self.point))
        return float(np.mean(self.values * f))

    def total(self) -> float:
        return 1.0 if self.point is not None else float(np.mean(self.values))


def _at_point(f: np.ndarray, z: float):
    N = f.shape[-1]
    j = z * N
    if abs(j - round(j)) > 1e-12:
        raise InvalidParameter("point mass must sit on a grid node")
    return f[..., int(round(j)) % N]


def point_mass(level: int, grid_size: int, z: float = 0.0) -> MarginalDensity:
    return MarginalDensity(np.zeros(grid_size), level, point=z)


class WrappedKernel:
    """Circular convolution with the wrapped Gaussian of a given variance."""

    def __init__(self, var: float, grid_size: int):
        sd = math.sqrt(var)
        if sd * grid_size < 4.0:
            raise TruncationError(
                f"Gaussian width {sd:.3g} is under four grid cells; increase grid_size "
                f"to at least {int(math.ceil(4.0 / sd))}")
        self.var = var
        self.N = grid_size
        g = wrapped_gaussian(grid(grid_size), var)
        self.ghat = np.fft.rfft(g) / grid_size

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(f) * self.ghat, n=self.N)

    def matrix(self) -> np.ndarray:
        z = grid(self.N)
        return wrapped_gaussian(np.subtract.outer(z, z), self.var) / self.N


def propagate_density(rho_next: MarginalDensity, v_prev: PeriodicFunction, sigma_k_sq: float,
                      beta: float, b: int, kernel: WrappedKernel | None = None) -> MarginalDensity:
    """Law of phi_k mod 1 from the law of phi_{k+1} mod 1.

    rho_k(z) = int K(z|z') rho_{k+1}(z') dz' with
    K(z|z') proportional to exp(-b v_{k-1}(z)) * wrapped N(z - z'; sigma_k^2/beta),
    each column normalized to integrate to one.
    """
    N = v_prev.grid_size
    ker = kernel or WrappedKernel(sigma_k_sq / beta, N)
    e = np.exp(-b * (v_prev.values - v_prev.values.min()))
    if rho_next.point is not None:
        col = e * wrapped_gaussian(grid(N) - rho_next.point, ker.var)
        rho = col / np.mean(col)
    else:
        norm = ker(e)                      # normalization of each column z'
        rho = e * ker(rho_next.values / norm)
    return MarginalDensity(rho, rho_next.level - 1)


def kernel_expectation(f: np.ndarray, v_prev: PeriodicFunction, kernel: WrappedKernel,
                       b: int) -> np.ndarray:
    """z' -> E(f(phi_k) | phi_{k+1} = z') for f sampled on the grid."""
    e = np.exp(-b * (v_prev.values - v_prev.values.min()))
    return kernel(e * f) / kernel(e)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.mean(np.abs(p - q)))


# --------------------------------------------------------------------------
# whole-chain solution
# --------------------------------------------------------------------------

@dataclass(eq=False)
class MartingaleState:
    s: np.ndarray             # s_0..s_{n+1}
    second_moment: np.ndarray  # E(M_k^2), k = 0..n+1


@dataclass(eq=False)
class ChainSolution:
    config: ModelConfig
    flow: FlowTrace
    v: list       # v_k, k = 0..n
    v1: list
    v2: list
    rho: dict     # level -> MarginalDensity, levels 1..n+1
    kernels: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.config.n


def solve_chain(config: ModelConfig, flow: FlowTrace | None = None) -> ChainSolution:
    """Flow, potentials on the grid and the marginal laws rho_1..rho_{n+1}."""
    flow = flow or run_flow(config)
    N, b, n = config.grid_size, config.b, config.n
    v, v1, v2 = [], [], []
    for k in range(n + 1):
        a, a1, a2 = potential_from_coeffs(flow[k], N)
        v.append(a)
        v1.append(a1)
        v2.append(a2)
    kernels = [None] * (n + 1)
    cache = {}
    for k in range(1, n + 1):
        key = float(config.sigma_sq[k])
        if key not in cache:
            cache[key] = WrappedKernel(key / config.beta, N)
        kernels[k] = cache[key]
    rho = {n + 1: point_mass(n + 1, N)}
    for k in range(n, 0, -1):
        rho[k] = propagate_density(rho[k + 1], v[k - 1], config.sigma_sq[k], config.beta, b,
                                   kernels[k])
    return ChainSolution(config, flow, v, v1, v2, rho, kernels)


def martingale_s(sigma_sq: np.ndarray, b: int) -> np.ndarray:
    """s_0 = 0 and s_{k+1} = s_k / b + sigma_k^2 for k = 0..n."""
    n = sigma_sq.size - 1
    s = np.zeros(n + 2)
    for k in range(n + 1):
        s[k + 1] = s[k] / b + sigma_sq[k]
    return s


def martingale_moments(sol: ChainSolution) -> MartingaleState:
    """E(M_k^2) for k = n+1 down to 0 by the exact one-level recursion."""
    cfg = sol.config
    b, beta, n, sig = cfg.b, cfg.beta, cfg.n, cfg.sigma_sq
    s = martingale_s(sig, b)
    em = np.zeros(n + 2)
    v1n0 = float(_at_point(sol.v1[n].values, 0.0))
    em[n + 1] = (s[n + 1] * v1n0 / beta) ** 2
    for k in range(n, -1, -1):
        up = sol.rho[k + 1]
        vk1, vk2 = sol.v1[k].values, sol.v2[k].values
        x = up.expect(vk1 ** 2 - vk2)
        zz = up.expect(vk1 ** 2)
        yy = sol.rho[k].expect(sol.v1[k - 1].values ** 2) if k >= 1 else 0.0
        em[k] = (em[k + 1] + sig[k] / beta
                 + sig[k] / beta ** 2 * (sig[k] + 2 * s[k] / b) * x
                 + (s[k] ** 2 * yy - s[k + 1] ** 2 * zz) / beta ** 2)
    return MartingaleState(s, em)


def covariance_exact(config: ModelConfig, k: int | None = None, sol: ChainSolution | None = None):
    """<phi_x phi_y> for branch depth k (all depths 0..n when k is None)."""
    sol = sol or solve_chain(config)
    em = martingale_moments(sol).second_moment
    if k is None:
        return em[: config.n + 1].copy()
    if not 0 <= k <= config.n:
        raise InvalidParameter("branch depth must lie in [0, n]")
    return float(em[k])


def gaussian_ladder(config: ModelConfig) -> np.ndarray:
    """E(M_k^2) when the potentials vanish: sum_{i>=k} sigma_i^2 / beta."""
    return np.cumsum(config.sigma_sq[::-1])[::-1] / config.beta


# --------------------------------------------------------------------------
# fractional charge
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChargeWeights:
    """w_k(q) for q = qmin..qmin+len-1, stored as scale * w with w normalized."""

    w: np.ndarray
    qmin: int
    alpha: float
    level: int
    log_scale: float = 0.0

    @property
    def q(self) -> np.ndarray:
        return self.qmin + np.arange(self.w.size)

    def at(self, q: int) -> float:
        j = q - self.qmin
        if 0 <= j < self.w.size:
            return float(self.w[j] * math.exp(self.log_scale))
        return 0.0

    def log_at(self, q: int) -> float:
        j = q - self.qmin
        return math.log(self.w[j]) + self.log_scale

    def values(self) -> np.ndarray:
        return self.w * math.exp(self.log_scale)


def _trim(w: np.ndarray, qmin: int, rel: float = DROP * 1e-2, cap: int = Q_HARD):
    keep = np.flatnonzero(w >= rel * w.max())
    lo, hi = keep[0], keep[-1]
    w, qmin = w[lo: hi + 1], qmin + lo
    # hard cap on |q|
    q = qmin + np.arange(w.size)
    m = np.abs(q) <= cap
    return w[m], int(q[m][0])


def init_charge_weights(config: ModelConfig, alpha: float) -> ChargeWeights:
    """w_1(q) = a(q)/a(0) * theta_0^((q+alpha)^2)."""
    Q = Q_HARD
    a = fourier_coeffs(config.measure, Q)
    q = np.arange(-Q, Q + 1)
    w = a[np.abs(q)] / a[0] * gaussian_damping(config.theta_k[0], q, shift=alpha)
    scale = float(w.max())
    w, qmin = _trim(w / scale, -Q)
    return ChargeWeights(w, qmin, alpha, 1, math.log(scale))


def charge_weights_step(w: ChargeWeights, lam_prev: SpectralCoeffs, theta_k: float,
                        alpha: float, b: int) -> ChargeWeights:
    """w_{k+1}(q) = theta_k^((q+alpha)^2) sum_l gamma_k(q-l) w_k(l), gamma_k from lam_{k-1}."""
    gam = gamma_weights(lam_prev, b)
    gfull = np.concatenate([gam[:0:-1], gam])
    conv = np.convolve(w.w, gfull)
    qmin = w.qmin - (gam.size - 1)
    q = qmin + np.arange(conv.size)
    new = conv * gaussian_damping(theta_k, q, shift=alpha)
    scale = float(new.max())
    new, qmin = _trim(new / scale, qmin)
    return ChargeWeights(new, qmin, alpha, w.level + 1, w.log_scale + math.log(scale))


def charge_weights_all(config: ModelConfig, alpha: float, flow: FlowTrace | None = None) -> list:
    """[w_1, ..., w_{n+1}]."""
    flow = flow or run_flow(config)
    th = config.theta_k
    ws = [init_charge_weights(config, alpha)]
    for k in range(1, config.n + 1):
        ws.append(charge_weights_step(ws[-1], flow[k - 1], th[k], alpha, config.b))
    return ws


def f_function(w: ChargeWeights, lam_prev: SpectralCoeffs, z: np.ndarray) -> np.ndarray:
    """f_k(z) = sum_q w_k(q) e(qz) / sum_q lam_{k-1}(q) e(qz), complex valued."""
    ph = np.exp(2j * np.pi * np.multiply.outer(z, w.q))
    num = ph @ w.values()
    qq = np.arange(1, lam_prev.lam.size)
    den = lam_prev.lam[0] + 2 * np.cos(2 * np.pi * np.multiply.outer(z, qq)) @ lam_prev.lam[1:]
    return num / den


def charge_correlation_exact(config: ModelConfig, alpha: float, k: int | None = None,
                             sol: ChainSolution | None = None, weights: list | None = None):
    """<exp(2 pi i alpha (phi_x - phi_y))> at branch depth k (all depths if k is None).

    Equals E|f_k(phi_k)|^2 for k >= 1 and 1 for k = 0.
    """
    if not abs(alpha) < 0.5:
        raise InvalidParameter("|alpha| must be < 1/2")
    sol = sol or solve_chain(config)
    ws = weights or charge_weights_all(config, alpha, sol.flow)
    z = grid(config.grid_size)

    def one(kk):
        if kk == 0:
            return 1.0
        f = f_function(ws[kk - 1], sol.flow[kk - 1], z)
        return sol.rho[kk].expect(np.abs(f) ** 2)

    if k is None:
        return np.array([one(kk) for kk in range(config.n + 1)])
    if not 0 <= k <= config.n:
        raise InvalidParameter("branch depth must lie in [0, n]")
    return float(one(k))


def single_charge_exact(config: ModelConfig, alpha: float, flow: FlowTrace | None = None) -> float:
    """<exp(2 pi i alpha phi_x)> = f_{n+1}(0)."""
    flow = flow or run_flow(config)
    ws = charge_weights_all(config, alpha, flow)
    f = f_function(ws[-1], flow[config.n], np.array([0.0]))[0]
    return float(f.real)


def charge_level_ratios(config: ModelConfig, alpha: float, flow: FlowTrace | None = None) -> np.ndarray:
    """w_{k+1}(0) / w_k(0) for k = 1..n."""
    ws = charge_weights_all(config, alpha, flow)
    lw = np.array([w.log_at(0) for w in ws])
    return np.exp(np.diff(lw))


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def chain_table(config: ModelConfig, alpha: float = 0.0, nu_star: np.ndarray | None = None,
                sol: ChainSolution | None = None) -> str:
    """Per-level CSV: k, EM2, increment, w0, w0_ratio, tv_to_nu_star."""
    sol = sol or solve_chain(config)
    em = martingale_moments(sol).second_moment
    ws = charge_weights_all(config, alpha, sol.flow)
    lw = [ws[k - 1].log_at(0) if k >= 1 else float("nan") for k in range(config.n + 2)]
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["k", "EM2", "increment", "w0", "w0_ratio", "tv_to_nu_star"])
    for k in range(config.n + 1):
        inc = em[k] - em[k + 1]
        w0 = math.exp(lw[k]) if k >= 1 else float("nan")
        ratio = math.exp(lw[k + 1] - lw[k]) if 1 <= k else float("nan")
        if nu_star is not None and k >= 1:
            tv = total_variation(sol.rho[k].values, nu_star)
        else:
            tv = float("nan")
        out.writerow([k, repr(float(em[k])), repr(float(inc)), repr(w0), repr(ratio), repr(tv)])
    return buf.getvalue()


def eigen_identity_residual(sol: ChainSolution, k: int) -> float:
    """sup_z |E(v'_{k-1}(phi_k) | phi_{k+1} = z) - v'_k(z)/b| on the grid, k >= 1."""
    b = sol.config.b
    lhs = kernel_expectation(sol.v1[k - 1].values, sol.v[k - 1], sol.kernels[k], b)
    return float(np.max(np.abs(lhs - sol.v1[k].values / b)))


def critical_log_correction(b: int = 2, n: int = 2000, grid_size: int = 256,
                            k_range: tuple = (50, 500)) -> dict:
    """Fit the log(k) coefficient of E(M_k^2) - (n + 1 - k)/beta_c at beta = beta_c.

    The fitted slope estimates the iterated-log coefficient c_bar.
    """
    from .model import beta_critical
    cfg = ModelConfig.constant(b, beta_critical(b), n, grid_size=grid_size)
    sol = solve_chain(cfg)
    em = martingale_moments(sol).second_moment[: n + 1]
    k = np.arange(n + 1)
    corr = em - (n + 1 - k) / cfg.beta
    lo, hi = k_range
    sel = slice(lo, hi + 1)
    slope, icpt = np.polyfit(np.log(k[sel]), corr[sel], 1)
    # coefficient-level version: k * E_uniform[v'_k^2] -> (4 pi A)^2 / 2
    kv = np.array([kk * np.mean(sol.v1[kk].values ** 2) for kk in range(lo, hi + 1)])
    return {"slope": float(slope), "intercept": float(icpt), "correction": corr,
            "k_v1sq": kv, "em2": em}


def critical_charge_band(b: int = 2, alpha: float = 0.2, n: int = 2000,
                         k_range: tuple = (100, 2000)) -> np.ndarray:
    """r_k = k^(-tau/2) theta^(-alpha^2 k) w_k(0) over k_range at beta = beta_c."""
    from .model import beta_critical
    from .observables import tau_exponent
    cfg = ModelConfig.constant(b, beta_critical(b), n)
    ws = charge_weights_all(cfg, alpha)
    tau = tau_exponent(alpha, b)
    th = cfg.theta
    ks = np.arange(k_range[0], k_range[1] + 1)
    lr = np.array([ws[k - 1].log_at(0) for k in ks]) - tau / 2 * np.log(ks) - alpha ** 2 * ks * math.log(th)
    return np.exp(lr)
