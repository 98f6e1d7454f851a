"""Fourier-coefficient renormalization flow.

The state of the flow at level k is the normalized coefficient sequence
lam_k(q) = a_k(q)/a_k(0), q >= 0 (the sequence is even in q).  One block
integration step convolves b copies of the sequence and damps mode q by
theta_k^(q^2).  The effective potential is recovered from

    exp(-v_k(z)) = a_k(0) * sum_q lam_k(q) exp(2 pi i q z).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (InconsistencyError, InvalidMeasure, InvalidParameter,
                     NumericalFailure, TruncationError)
from .model import ModelConfig, beta_of_theta, fourier_coeffs

DROP = 1e-16      # relative weight below which a mode is discarded
Q_HARD = 64       # hard cap on the number of stored modes


# --------------------------------------------------------------------------
# containers
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralCoeffs:
    """lam(0..Q) with lam(0) = 1; lam(-q) = lam(q) is implicit."""

    lam: np.ndarray

    def __post_init__(self):
        a = np.array(self.lam, dtype=float).ravel()
        if a.size == 0 or a[0] != 1.0:
            raise InvalidParameter("coefficient sequence must start with lam(0) = 1")
        a.setflags(write=False)
        object.__setattr__(self, "lam", a)

    @classmethod
    def delta(cls):
        return cls(np.ones(1))

    @property
    def Q(self) -> int:
        return self.lam.size - 1

    @property
    def lam1(self) -> float:
        return float(self.lam[1]) if self.Q >= 1 else 0.0

    @property
    def rho(self) -> float:
        return float(self.lam[2]) if self.Q >= 2 else 0.0

    def full(self) -> np.ndarray:
        """Symmetric array lam(-Q..Q)."""
        return np.concatenate([self.lam[:0:-1], self.lam])

    def padded(self, Q: int) -> np.ndarray:
        out = np.zeros(Q + 1)
        m = min(Q, self.Q) + 1
        out[:m] = self.lam[:m]
        return out

    def ratio_sup(self) -> float:
        """sup_q lam(q+1)/lam(q) over stored modes (0 for the trivial sequence)."""
        if self.Q == 0:
            return 0.0
        return float(np.max(self.lam[1:] / self.lam[:-1]))

    def is_trivial(self) -> bool:
        return self.Q == 0


@dataclass(frozen=True, eq=False)
class PeriodicFunction:
    """Samples of a 1-periodic function at z_j = j/N, j = 0..N-1."""

    values: np.ndarray

    @property
    def grid_size(self) -> int:
        return self.values.size

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.grid_size) / self.grid_size

    def mean(self) -> float:
        # trapezoid rule on a periodic grid
        return float(np.mean(self.values))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def grid(grid_size: int) -> np.ndarray:
    return np.arange(grid_size) / grid_size


# --------------------------------------------------------------------------
# one step of the flow
# --------------------------------------------------------------------------

def gaussian_damping(theta: float, Q: int, shift: float = 0.0) -> np.ndarray:
    """theta^((q+shift)^2) for q = 0..Q (or any integer array), without underflow warnings."""
    q = np.arange(Q + 1) if np.isscalar(Q) else np.asarray(Q)
    return np.exp(np.maximum((q + shift) ** 2 * math.log(theta), -745.0))


def convolve_power(full: np.ndarray, m: int, cap: int | None = None) -> np.ndarray:
    """m-fold self-convolution of a centered symmetric array; result centered, optionally capped."""
    if m == 0:
        out = np.zeros_like(full)
        out[full.size // 2] = 1.0
        return out
    out = full
    for _ in range(m - 1):
        out = np.convolve(out, full)
        if cap is not None and out.size > 2 * cap + 1:
            c = out.size // 2
            out = out[c - cap: c + cap + 1]
    return out


def _truncate(h: np.ndarray, drop: float, cap: int) -> np.ndarray:
    h = h[: cap + 1]
    keep = np.flatnonzero(h >= drop)
    return h[: keep[-1] + 1]


def rg_step(lam: SpectralCoeffs, theta_k: float, b: int,
            drop: float = DROP, cap: int = Q_HARD):
    """One block-integration step.

    Returns (lam', log G_0) where G_0 is the unnormalized zero mode of the
    b-fold convolution, so that log a_{k+1}(0) = b log a_k(0) + log G_0.
    """
    if not 0.0 < theta_k < 1.0:
        raise InvalidParameter("theta_k must lie in (0, 1)")
    if lam.is_trivial():
        return lam, 0.0
    p = convolve_power(lam.full(), b, cap=cap)
    c = p.size // 2
    half = p[c:]
    g0 = half[0]
    if not (np.isfinite(g0) and g0 > 0):
        raise NumericalFailure("zero-mode convolution sum overflowed or vanished")
    h = half / g0 * gaussian_damping(theta_k, half.size - 1)
    return SpectralCoeffs(_truncate(h, drop, cap)), float(math.log(g0))


def _step_fixed_length(x: np.ndarray, theta: float, b: int) -> np.ndarray:
    """Flow map on a fixed number of modes (works for complex input, used for Jacobians)."""
    Q = x.size - 1
    full = np.concatenate([x[:0:-1], x])
    p = convolve_power(full, b, cap=Q)
    c = p.size // 2
    half = p[c: c + Q + 1]
    return half / half[0] * gaussian_damping(theta, Q)


def init_coeffs(config: ModelConfig) -> SpectralCoeffs:
    """lam_0(q) = a(q)/a(0) * theta_0^(q^2), truncated at the drop threshold."""
    a = fourier_coeffs(config.measure, max(config.q_max, Q_HARD))
    if a[0] <= 0:
        raise InvalidMeasure("a(0) must be positive")
    h = a / a[0] * gaussian_damping(config.theta_k[0], a.size - 1)
    return SpectralCoeffs(_truncate(h, DROP, Q_HARD))


def initial_log_a0(config: ModelConfig) -> float:
    a0 = fourier_coeffs(config.measure, 1)[0]
    return 0.5 * math.log(2 * math.pi * config.sigma_sq[0] / config.beta) + math.log(a0)


# --------------------------------------------------------------------------
# whole flow
# --------------------------------------------------------------------------

@dataclass(eq=False)
class FlowTrace:
    b: int
    theta_k: np.ndarray
    levels: list
    log_a0: np.ndarray
    step_ratio_bound_ok: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.levels) - 1

    def __getitem__(self, k) -> SpectralCoeffs:
        return self.levels[k]

    @property
    def lam1(self) -> np.ndarray:
        return np.array([s.lam1 for s in self.levels])

    @property
    def rho(self) -> np.ndarray:
        return np.array([s.rho for s in self.levels])

    @property
    def c(self) -> np.ndarray:
        return np.array([s.ratio_sup() for s in self.levels])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "lam1", "rho", "c_k", "log_a0", "lam1_sqrtk"])
        for k, s in enumerate(self.levels):
            w.writerow([k, repr(s.lam1), repr(s.rho), repr(s.ratio_sup()),
                        repr(float(self.log_a0[k])), repr(s.lam1 * math.sqrt(k))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def run_flow(config: ModelConfig, lam0: SpectralCoeffs | None = None) -> FlowTrace:
    """lam_k for k = 0..n, stepping with theta_k = theta^(sigma_k^2), k = 1..n."""
    th = config.theta_k
    lam = init_coeffs(config) if lam0 is None else lam0
    levels = [lam]
    log_a0 = [initial_log_a0(config)]
    ok = []
    for k in range(1, config.n + 1):
        new, lg = rg_step(lam, th[k], config.b)
        # ratio contraction: sup ratio can grow at most by b * theta_k
        ok.append(new.ratio_sup() <= config.b * th[k] * lam.ratio_sup() * (1 + 1e-12) + 1e-300)
        log_a0.append(config.b * log_a0[-1] + lg)
        levels.append(new)
        lam = new
    return FlowTrace(config.b, th, levels, np.array(log_a0), ok)


def iterate_constant(lam: SpectralCoeffs, theta: float, b: int, steps: int):
    """Yield successive iterates of the constant-theta flow map."""
    for _ in range(steps):
        lam, _ = rg_step(lam, theta, b)
        yield lam


# --------------------------------------------------------------------------
# potentials
# --------------------------------------------------------------------------

def _trig_sums(lam: np.ndarray, z: np.ndarray):
    q = np.arange(1, lam.size)
    ang = 2 * np.pi * np.multiply.outer(z, q)
    cos, sin = np.cos(ang), np.sin(ang)
    w = 2 * np.pi * q
    e0 = lam[0] + 2 * cos @ lam[1:]
    e1 = -2 * sin @ (w * lam[1:])
    e2 = -2 * cos @ (w ** 2 * lam[1:])
    return e0, e1, e2


def exp_neg_potential(lam: SpectralCoeffs, z) -> np.ndarray:
    """sum_q lam(q) exp(2 pi i q z) at arbitrary points."""
    z = np.asarray(z, dtype=float)
    return _trig_sums(lam.lam, z.ravel())[0].reshape(z.shape)


def potential_from_coeffs(lam: SpectralCoeffs, grid_size: int = 512):
    """(v, v', v'') on the grid, with v fixed by the convention a_k(0) = 1."""
    e0, e1, e2 = _trig_sums(lam.lam, grid(grid_size))
    if np.any(e0 <= 0):
        raise TruncationError("reconstructed exp(-v) is not positive; increase the number of modes")
    r1 = e1 / e0
    v = -np.log(e0)
    v1 = -r1
    v2 = -e2 / e0 + r1 ** 2
    return PeriodicFunction(v), PeriodicFunction(v1), PeriodicFunction(v2)


def potential_at(lam: SpectralCoeffs, z):
    """(v, v', v'') at arbitrary points."""
    z = np.asarray(z, dtype=float)
    e0, e1, e2 = _trig_sums(lam.lam, z.ravel())
    r1 = e1 / e0
    return (-np.log(e0)).reshape(z.shape), (-r1).reshape(z.shape), (-e2 / e0 + r1 ** 2).reshape(z.shape)


# --------------------------------------------------------------------------
# fixed point
# --------------------------------------------------------------------------

def weighted_norm(diff: np.ndarray, b: int, theta: float) -> float:
    """sum_q t^(q-1) |diff(q)| with t = 2 b^(3/2) sqrt(b theta - 1), over q >= 0."""
    diff = np.asarray(diff, dtype=float)
    t = 2 * b ** 1.5 * math.sqrt(max(b * theta - 1.0, 0.0))
    q = np.arange(diff.size)
    if t == 0.0:
        wts = (q == 1).astype(float)
    else:
        wts = t ** (q - 1.0)
    return float(np.sum(wts * np.abs(diff)))


def coeff_distance(a: SpectralCoeffs, b_: SpectralCoeffs, b: int, theta: float) -> float:
    Q = max(a.Q, b_.Q)
    return weighted_norm(a.padded(Q) - b_.padded(Q), b, theta)


def dg_seed(theta: float) -> SpectralCoeffs:
    return SpectralCoeffs(_truncate(gaussian_damping(theta, Q_HARD), DROP, Q_HARD))


def critical_amplitude_sq(b: int) -> float:
    """A^2 = (b^3-1)/((b-1)^2 (b+1)^3)."""
    return (b ** 3 - 1) / ((b - 1) ** 2 * (b + 1) ** 3)


@dataclass(frozen=True, eq=False)
class FixedPoint:
    lam: SpectralCoeffs
    b: int
    theta: float
    residual: float
    iterations: int
    newton_steps: int = 0
    trivial: bool = False

    @property
    def beta(self) -> float:
        return beta_of_theta(self.theta)


def fixed_point_residual(lam: SpectralCoeffs, b: int, theta: float) -> float:
    new, _ = rg_step(lam, theta, b)
    return coeff_distance(new, lam, b, theta)


def _newton(lam: SpectralCoeffs, b: int, theta: float, tol: float, max_steps: int = 200):
    """Newton iteration on lam = F(lam) with a complex-step Jacobian; modes fixed."""
    x = lam.lam.copy()
    Q = x.size - 1
    h = 1e-30
    extra = 2  # slow directions make the distance to the root ~ residual/(b theta - 1)
    for it in range(max_steps):
        g = _step_fixed_length(x, theta, b) - x
        res = weighted_norm(g, b, theta)
        if res < tol:
            if extra == 0 or res == 0.0:
                return x, res, it
            extra -= 1
        jac = np.empty((Q, Q))
        for j in range(1, Q + 1):
            xc = x.astype(complex)
            xc[j] += 1j * h
            jac[:, j - 1] = _step_fixed_length(xc, theta, b)[1:].imag / h
        jac -= np.eye(Q)
        try:
            dx = np.linalg.solve(jac, -g[1:])
        except np.linalg.LinAlgError:
            return x, res, it
        trial = x.copy()
        trial[1:] += dx
        # a full step may push a negligible tail mode through zero; halve it instead
        bad = trial <= 0
        trial[bad] = 0.5 * x[bad]
        x = trial
    g = _step_fixed_length(x, theta, b) - x
    return x, weighted_norm(g, b, theta), max_steps


def fixed_point(b: int, theta: float, q_max: int | None = None, tol: float = 1e-12,
                max_iters: int = 1_000_000, plain_iters: int = 3000,
                seed: SpectralCoeffs | None = None, polish: bool = True) -> FixedPoint:
    """Nontrivial fixed point of the constant-theta flow map for b theta > 1.

    The map is iterated from the DG seed theta^(q^2).  Near b theta = 1 the
    contraction rate is 1 - O(b theta - 1), so after ``plain_iters`` steps
    the iterate is handed to a Newton polish; plain iteration resumes if
    Newton stalls.  Returns the trivial sequence with ``trivial=True`` when
    b theta <= 1.
    """
    if not 0.0 < theta < 1.0:
        raise InvalidParameter("theta must lie in (0, 1)")
    if b * theta <= 1.0:
        return FixedPoint(SpectralCoeffs.delta(), b, theta, 0.0, 0, trivial=True)
    cap = Q_HARD if q_max is None else max(4, min(q_max, Q_HARD))
    lam = dg_seed(theta) if seed is None else seed
    it = 0
    newton_steps = 0
    res = math.inf
    tried_newton = False
    while it < max_iters:
        new, _ = rg_step(lam, theta, b, cap=cap)
        res = coeff_distance(new, lam, b, theta)
        lam = new
        it += 1
        if new.is_trivial():
            raise NumericalFailure("iteration collapsed to the trivial fixed point", last=new)
        if res < tol:
            break
        if polish and not tried_newton and it >= plain_iters:
            tried_newton = True
            x, r, ns = _newton(lam, b, theta, tol)
            newton_steps = ns
            if r < tol:
                lam = SpectralCoeffs(x)
                res = r
                break
    else:
        raise NumericalFailure(
            f"fixed point not reached after {max_iters} iterations (residual {res:.3e})", last=lam)
    res = fixed_point_residual(lam, b, theta)
    fp = FixedPoint(lam, b, theta, res, it, newton_steps)
    _check_fixed_point_bounds(fp)
    return fp


def _check_fixed_point_bounds(fp: FixedPoint):
    lam = fp.lam.lam
    q = np.arange(lam.size)
    b, theta = fp.b, fp.theta
    slack = 1 + 1e-9
    if np.any(lam > gaussian_damping(theta, lam.size - 1) * slack + 1e-300):
        raise InconsistencyError("fixed point violates lam(q) <= theta^(q^2)")
    env = (2 * math.sqrt(b) * math.sqrt(b * theta - 1)) ** q
    if np.any(lam[1:] > env[1:] * slack) and b * theta - 1 < 0.05:
        raise InconsistencyError("fixed point violates the near-critical envelope bound")


def fixed_point_bounds_hold(fp: FixedPoint) -> tuple:
    """(gaussian bound, envelope bound) as booleans."""
    lam = fp.lam.lam
    q = np.arange(lam.size)
    g = bool(np.all(lam <= gaussian_damping(fp.theta, lam.size - 1) * (1 + 1e-9)))
    env = (2 * math.sqrt(fp.b) * math.sqrt(max(fp.b * fp.theta - 1, 0))) ** q
    e = bool(np.all(lam[1:] <= env[1:] * (1 + 1e-9)))
    return g, e


def near_critical_lam1(b: int, theta: float) -> float:
    """Leading-order size of lam_star(1) for b theta slightly above 1."""
    return math.sqrt(2 * critical_amplitude_sq(b)) * math.sqrt(max(b * theta - 1, 0.0))


# --------------------------------------------------------------------------
# fixed-point potential
# --------------------------------------------------------------------------

def zero_mode_sum(lam: SpectralCoeffs, b: int) -> float:
    """G_0(lam): sum over b-tuples with zero total of the product of lam."""
    if lam.is_trivial():
        return 1.0
    p = convolve_power(lam.full(), b)
    return float(p[p.size // 2])


def wrapped_gaussian(x, var: float) -> np.ndarray:
    """Density of the wrapped centered Gaussian with variance var on the circle."""
    x = np.asarray(x, dtype=float)
    sd = math.sqrt(var)
    # images farther than 9 sd from the unit cell carry weight below 1e-17
    jmax = int(math.ceil(9.0 * sd)) + 1
    j = np.arange(-jmax, jmax + 1)
    d = np.subtract.outer(x, -j)  # x + j
    return np.exp(-0.5 * d ** 2 / var).sum(axis=-1) / math.sqrt(2 * math.pi * var)


def v_star(fp: FixedPoint, grid_size: int = 512, check: bool = True,
           tol: float = 1e-8):
    """(v_star, v_star') on the grid, with exp(-v_star) = G_0^(-1/(b-1)) sum lam_star(q) e(qz).

    With ``check`` the invariance exp(-v(z)) = int exp(-b v(z+zeta)) mu_{1/beta}(dzeta)
    is verified by wrapped-Gaussian quadrature on the grid.
    """
    b = fp.b
    v, v1, v2 = potential_from_coeffs(fp.lam, grid_size)
    shift = math.log(zero_mode_sum(fp.lam, b)) / (b - 1)
    vs = PeriodicFunction(v.values + shift)
    if check:
        res = fixed_point_identity_residual(vs, b, fp.beta)
        if res > max(100 * tol, 100 * fp.residual):
            raise InconsistencyError(f"fixed-point integral identity residual {res:.3e}")
    return vs, v1


def fixed_point_identity_residual(vs: PeriodicFunction, b: int, beta: float) -> float:
    """sup_z |exp(-v(z)) - int exp(-b v(z+zeta)) mu_{1/beta}(dzeta)| by grid quadrature."""
    z = vs.z
    N = z.size
    ker = wrapped_gaussian(np.subtract.outer(z, z), 1.0 / beta)  # g(z_i - z_j)
    rhs = ker @ np.exp(-b * vs.values) / N
    return float(np.max(np.abs(np.exp(-vs.values) - rhs)))
