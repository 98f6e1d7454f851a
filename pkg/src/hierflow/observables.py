"""Observables derived from the flow and its fixed point.

sigma^2(beta): the slope of the covariance in the level count.  Equal to
1/beta up to beta_c and strictly smaller above, where it is read off the
fixed-point potential v_star.

kappa(alpha, beta): the decay exponent of the fractional charge
correlation.  Above beta_c it is obtained from the root t_star of the
path-sum equation sum_j Gamma_j(0) t^(-j) = 1, where the path weights are
built from gamma_star(q) = G^(b-1)_q(lam_star) / G^(b)_0(lam_star).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InvalidParameter, NumericalFailure, TruncationError
from .model import ModelConfig, beta_critical, beta_of_theta, theta_of_beta
from .rgflow import (FixedPoint, PeriodicFunction, SpectralCoeffs,
                     convolve_power, critical_amplitude_sq, fixed_point,
                     potential_at, v_star)

Q_PATH_DEFAULT = 8
PATH_TAIL_TOL = 1e-13
SERIES_TOL = 1e-14
J_MAX = 20_000
# b theta - 1 below this is treated as critical: the fixed point is then
# smaller than the absolute iteration tolerance, and the closed forms are
# exact to O(b theta - 1)
CRITICAL_BAND = 1e-9


def supercritical(b: int, beta: float) -> bool:
    return b * theta_of_beta(beta) - 1 > CRITICAL_BAND


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def tau_exponent(alpha: float, b: int) -> float:
    """Exponent of the logarithmic correction to the critical charge correlation."""
    if not abs(alpha) < 0.5:
        raise InvalidParameter("|alpha| must be < 1/2")
    if alpha == 0:
        return 0.0
    pre = 2 * (b ** 3 - 1) / ((b - 1) * (b + 1) ** 3)
    # (b-1)/(b u - 1) + (b-1)/(b/u - 1) - 2 with u = b^(2 alpha), rewritten
    # without the cancellation at small alpha
    um1 = math.expm1(2 * abs(alpha) * math.log(b))
    u = 1 + um1
    br = b * (b + 1) * um1 ** 2 / ((b * u - 1) * (b - u))
    return pre * br


def c_bar(b: int) -> float:
    """Coefficient of the iterated-log correction of the critical covariance."""
    bc = beta_critical(b)
    return 8 * math.pi ** 2 / bc ** 2 * b * (b ** 3 - 1) / ((b - 1) ** 3 * (b + 1) ** 2)


def sigma2_slope(b: int) -> float:
    """|d sigma^2/d beta| jump at beta_c (coefficient of beta - beta_c above beta_c)."""
    bc = beta_critical(b)
    return 32 * math.pi ** 4 / bc ** 4 * b * (b ** 3 - 1) / ((b - 1) ** 3 * (b + 1) ** 2)


@dataclass(frozen=True)
class Expansions:
    b: int
    beta: float
    sigma2_linear: float

    def kappa_linear(self, alpha: float) -> float:
        bc = beta_critical(self.b)
        return (4 * bc * alpha ** 2 / self.beta
                - 4 / bc * tau_exponent(alpha, self.b) * (self.beta - bc))

    def t_star_linear(self, alpha: float) -> float:
        return 1 + tau_exponent(alpha, self.b) * (self.b * theta_of_beta(self.beta) - 1)


def expansions(b: int, beta: float) -> Expansions:
    """Leading-order near-critical forms of sigma^2 and kappa (no error terms)."""
    bc = beta_critical(b)
    if beta < bc:
        raise InvalidParameter("expansions are for beta >= beta_c")
    return Expansions(b, beta, 1 / beta - sigma2_slope(b) * (beta - bc))


# --------------------------------------------------------------------------
# fixed-point data
# --------------------------------------------------------------------------

def gamma_weights(lam: SpectralCoeffs, b: int) -> np.ndarray:
    """gamma(q) = G^(b-1)_q(lam) / G^(b)_0(lam) for q >= 0 (even in q)."""
    if lam.is_trivial():
        return np.ones(1)
    full = lam.full()
    num = convolve_power(full, b - 1)
    den = np.convolve(num, full)
    g0 = den[den.size // 2]
    return num[num.size // 2:] / g0


gamma_star_weights = gamma_weights


@dataclass(frozen=True, eq=False)
class StarData:
    fp: FixedPoint
    v_star: PeriodicFunction
    v1_star: PeriodicFunction
    nu_star: PeriodicFunction   # normalized density of exp(-(b+1) v_star)
    gamma_star: np.ndarray

    @property
    def b(self) -> int:
        return self.fp.b

    @property
    def beta(self) -> float:
        return self.fp.beta


def star_data(fp: FixedPoint, grid_size: int = 512, check: bool = True) -> StarData:
    vs, v1 = v_star(fp, grid_size, check=check)
    w = np.exp(-(fp.b + 1) * (vs.values - vs.values.min()))
    nu = PeriodicFunction(w / w.mean())
    return StarData(fp, vs, v1, nu, gamma_weights(fp.lam, fp.b))


def _fixed_point_for(b: int, beta: float, q_max=None, tol=1e-13) -> FixedPoint:
    return fixed_point(b, theta_of_beta(beta), q_max=q_max, tol=tol)


def sigma2_from_star(sd: StarData) -> float:
    b, beta = sd.b, sd.beta
    ratio = float(np.mean(sd.nu_star.values * sd.v1_star.values ** 2))
    return 1 / beta - b / beta ** 2 * (b + 1) / (b - 1) * ratio


def sigma2(config_or_b, beta: float | None = None, grid_size: int = 512,
           fp: FixedPoint | None = None) -> float:
    """sigma^2(beta) for a configuration (only b, beta, grid_size are used) or for (b, beta)."""
    if isinstance(config_or_b, ModelConfig):
        b, beta, grid_size = config_or_b.b, config_or_b.beta, config_or_b.grid_size
    else:
        b = int(config_or_b)
    if not supercritical(b, beta):
        return 1 / beta
    fp = fp or _fixed_point_for(b, beta)
    return sigma2_from_star(star_data(fp, grid_size))


def sigma2_double_integral(sd: StarData, n_hermite: int = 64) -> float:
    """sigma^2 from the two-point representation, as an independent check.

    sigma^2 int e^{-(b+1)v} = int int (zeta - c [v'(phi+zeta) - v'(phi)])^2
                               e^{-b v(phi) - b v(phi+zeta)} mu_{1/beta}(dzeta) dphi
    with c = b / ((b-1) beta).  The zeta-integral uses Gauss-Hermite nodes.
    """
    b, beta, lam = sd.b, sd.beta, sd.fp.lam
    shift = float(sd.v_star.values[0] - potential_at(lam, np.array([0.0]))[0][0])
    phi = sd.v_star.z
    x, w = np.polynomial.hermite_e.hermegauss(n_hermite)
    zeta = x / math.sqrt(beta)
    w = w / math.sqrt(2 * math.pi)
    pts = np.add.outer(phi, zeta)
    v_pt, v1_pt, _ = potential_at(lam, pts)
    v_pt = v_pt + shift
    v_phi = sd.v_star.values[:, None]
    v1_phi = sd.v1_star.values[:, None]
    c = b / ((b - 1) * beta)
    integrand = (zeta[None, :] - c * (v1_pt - v1_phi)) ** 2 * np.exp(-b * v_phi - b * v_pt)
    rhs = float(np.mean(integrand @ w))
    lhs_weight = float(np.mean(np.exp(-(b + 1) * sd.v_star.values)))
    return rhs / lhs_weight


# --------------------------------------------------------------------------
# path sums and t_star
# --------------------------------------------------------------------------

def _gamma_at(gamma: np.ndarray, d: np.ndarray) -> np.ndarray:
    d = np.abs(d)
    out = np.zeros(d.shape)
    ok = d < gamma.size
    out[ok] = gamma[d[ok]]
    return out


def path_state_tail(theta: float, alpha: float, q_path: int) -> float:
    """Largest single-visit weight theta^((q+alpha)^2 - alpha^2) at the edge of the state space."""
    e = min((q_path + 1 + alpha) ** 2, (-(q_path + 1) + alpha) ** 2) - alpha ** 2
    return theta ** e


def gamma_star_path_sums(gamma_star: np.ndarray, theta: float, alpha: float, J: int,
                         q_path: int = Q_PATH_DEFAULT, check_tail: bool = True) -> np.ndarray:
    """Gamma_j(p) for j = 1..J and p = -q_path..q_path (row j-1, column p + q_path).

    Gamma_1(p) = gamma(p).  For j >= 2 the sum runs over paths
    p = q_0, q_1..q_{j-1} != 0, q_j = 0 of
    prod_{i<j} theta^((q_i+alpha)^2 - alpha^2) * prod_{i>=1} gamma(q_i - q_{i-1}).
    """
    if not abs(alpha) < 0.5:
        raise InvalidParameter("|alpha| must be < 1/2")
    if J < 1 or q_path < 2:
        raise InvalidParameter("need J >= 1 and q_path >= 2")
    if check_tail and path_state_tail(theta, alpha, q_path) * max(1.0, gamma_star.sum()) > PATH_TAIL_TOL:
        sugg = q_path
        while path_state_tail(theta, alpha, sugg) > PATH_TAIL_TOL and sugg < 200:
            sugg += 1
        raise TruncationError(f"q_path={q_path} too small for theta={theta}; try q_path={sugg}")
    states = np.arange(-q_path, q_path + 1)
    D = theta ** ((states + alpha) ** 2 - alpha ** 2)
    G = _gamma_at(gamma_star, np.subtract.outer(states, states))  # G[i, j] = gamma(q_j - q_i)
    nz = states != 0
    out = np.zeros((J, states.size))
    out[0] = _gamma_at(gamma_star, states)
    if J == 1:
        return out
    M = D[nz, None] * G[np.ix_(nz, nz)]
    g = D[nz] * _gamma_at(gamma_star, states[nz])    # weight of the last visited state
    Gp = G[:, nz]
    for j in range(2, J + 1):
        out[j - 1] = D * (Gp @ g)
        g = M @ g
    return out


def gamma_series(gamma_star: np.ndarray, theta: float, alpha: float,
                 q_path: int = Q_PATH_DEFAULT, tol: float = SERIES_TOL,
                 j_max: int = J_MAX) -> np.ndarray:
    """Gamma_j(0), j = 1..J, with J chosen so that the last retained term is below tol."""
    if not abs(alpha) < 0.5:
        raise InvalidParameter("|alpha| must be < 1/2")
    states = np.arange(-q_path, q_path + 1)
    D = theta ** ((states + alpha) ** 2 - alpha ** 2)
    G = _gamma_at(gamma_star, np.subtract.outer(states, states))
    nz = states != 0
    M = D[nz, None] * G[np.ix_(nz, nz)]
    g = D[nz] * _gamma_at(gamma_star, states[nz])
    row0 = G[q_path, nz]   # gamma(q' - 0)
    t_lower = max(1.0, float(gamma_star[0]))
    vals = [float(gamma_star[0])]
    for j in range(2, j_max + 1):
        val = float(row0 @ g)
        vals.append(val)
        if val * t_lower ** (-j) < tol and j >= 3:
            return np.array(vals)
        g = M @ g
    raise NumericalFailure(f"path-sum series did not decay below {tol} within {j_max} terms")


def t_star_solve(series: np.ndarray, tol: float = 1e-15) -> float:
    """Root t >= max(1, Gamma_1(0)) of sum_j Gamma_j(0) t^(-j) = 1.

    The left side is decreasing in t, so the root is unique.  Bisection
    bracket [lower, 2], with the upper end doubled (up to 16) if needed.
    """
    series = np.asarray(series, dtype=float)
    j = np.arange(1, series.size + 1)

    def f(t):
        return float(np.sum(series * np.exp(-j * math.log(t)))) - 1.0

    lo = max(1.0, float(series[0]))
    flo = f(lo)
    if flo <= 0.0:
        if lo == 1.0 and flo > -1e-10:
            return 1.0   # root sits at the boundary up to rounding
        raise NumericalFailure(f"t_star bracket failure: series sum at lower end is {flo + 1:.6g} < 1")
    hi = 2.0
    while f(hi) > 0:
        hi *= 2
        if hi > 16:
            raise NumericalFailure("t_star bracket failure: upper end exceeded 16")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True, eq=False)
class ChargeExponents:
    alpha: float
    beta: float
    b: int
    t_star: float
    kappa: float
    tau: float
    gamma_series: np.ndarray

    @property
    def log_t_star(self) -> float:
        return math.log(self.t_star)


def choose_q_path(theta: float, alpha: float, start: int = Q_PATH_DEFAULT) -> int:
    q = start
    while path_state_tail(theta, alpha, q) > PATH_TAIL_TOL and q < 200:
        q += 1
    return q


def kappa_from_fixed_point(alpha: float, fp: FixedPoint, gamma: np.ndarray | None = None,
                           q_path: int | None = None) -> ChargeExponents:
    b, theta = fp.b, fp.theta
    beta = fp.beta
    bc = beta_critical(b)
    tau = tau_exponent(alpha, b)
    if fp.trivial:
        return ChargeExponents(alpha, beta, b, 1.0, 4 * bc * alpha ** 2 / beta, tau, np.ones(1))
    if gamma is None:
        gamma = gamma_weights(fp.lam, b)
    qp = q_path or choose_q_path(theta, alpha)
    ser = gamma_series(gamma, theta, alpha, qp)
    ts = 1.0 if alpha == 0 else t_star_solve(ser)
    kappa = 4 * (2 * math.pi ** 2 / (beta * math.log(b))) * alpha ** 2 - 4 / math.log(b) * math.log(ts)
    return ChargeExponents(alpha, beta, b, ts, kappa, tau, ser)


def kappa_exponent(alpha: float, config_or_b, beta: float | None = None,
                   fp: FixedPoint | None = None) -> ChargeExponents:
    """Charge exponent kappa(alpha, beta); closed form for beta <= beta_c."""
    if isinstance(config_or_b, ModelConfig):
        b, beta = config_or_b.b, config_or_b.beta
    else:
        b = int(config_or_b)
    if not abs(alpha) < 0.5:
        raise InvalidParameter("|alpha| must be < 1/2")
    bc = beta_critical(b)
    if not supercritical(b, beta):
        return ChargeExponents(alpha, beta, b, 1.0, 4 * bc * alpha ** 2 / beta,
                               tau_exponent(alpha, b), np.ones(1))
    fp = fp or _fixed_point_for(b, beta)
    return kappa_from_fixed_point(alpha, fp)


def t_star(alpha: float, b: int, theta: float) -> float:
    return kappa_exponent(alpha, b, beta_of_theta(theta)).t_star


def critical_amplitude(b: int) -> float:
    return math.sqrt(critical_amplitude_sq(b))
