"""Model configuration, single-site measures and hierarchical geometry.

A configuration fixes the branching number b, the inverse temperature beta,
the depth n, the variance profile sigma_k^2 (k = 0..n) that decomposes the
inverse hierarchical Laplacian, and the single-site measure through its
Fourier coefficients a(q).
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .errors import InvalidMeasure, InvalidParameter, NumericalFailure

SINE_GORDON_TERM_TOL = 1e-16
SINE_GORDON_MAX_TERMS = 10_000


def beta_critical(b: int) -> float:
    """Critical inverse temperature 2 pi^2 / log b."""
    if int(b) != b or b < 2:
        raise InvalidParameter(f"branching number must be an integer >= 2, got {b!r}")
    return 2.0 * math.pi ** 2 / math.log(b)


# --------------------------------------------------------------------------
# single-site measures
# --------------------------------------------------------------------------

MEASURE_KINDS = ("dg", "sine_gordon", "hard_core", "custom")


@dataclass(frozen=True)
class MeasureSpec:
    """Single-site measure, identified by its Fourier coefficients a(q).

    dg           counting measure on the integers, a(q) = 1
    sine_gordon  exp(-kappa (1 - cos 2 pi phi)) dphi
    hard_core    (1 + 2 kappa cos 2 pi phi) dphi, kappa in [0, 1/2]
    custom       user supplied a(0), a(1), ...
    """

    kind: str = "dg"
    kappa: float = 0.0
    coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise InvalidParameter(f"unknown measure kind {self.kind!r}")
        if self.kind == "sine_gordon" and not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise InvalidParameter("sine-Gordon kappa must be finite and >= 0")
        if self.kind == "hard_core" and not (0.0 <= self.kappa <= 0.5):
            raise InvalidParameter("hard-core kappa must lie in [0, 1/2]")
        if self.kind == "custom":
            c = np.asarray(self.coeffs, dtype=float)
            if c.ndim != 1 or c.size == 0:
                raise InvalidParameter("custom measure needs a non-empty coefficient list")
            if c[0] <= 0:
                raise InvalidMeasure("custom measure needs a(0) > 0")
            if np.any(c < 0) or not np.all(np.isfinite(c)):
                raise InvalidParameter("custom coefficients must be finite and nonnegative")

    @classmethod
    def dg(cls):
        return cls("dg")

    @classmethod
    def sine_gordon(cls, kappa):
        return cls("sine_gordon", kappa=float(kappa))

    @classmethod
    def hard_core(cls, kappa):
        return cls("hard_core", kappa=float(kappa))

    @classmethod
    def custom(cls, coeffs):
        return cls("custom", coeffs=tuple(float(c) for c in coeffs))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "dg"

    def density(self, phi):
        """Density of a continuous measure w.r.t. Lebesgue measure (unnormalized)."""
        phi = np.asarray(phi, dtype=float)
        if self.kind == "sine_gordon":
            return np.exp(-self.kappa * (1.0 - np.cos(2 * np.pi * phi)))
        if self.kind == "hard_core":
            return 1.0 + 2.0 * self.kappa * np.cos(2 * np.pi * phi)
        if self.kind == "custom":
            c = np.asarray(self.coeffs)
            q = np.arange(1, c.size)
            return c[0] + 2.0 * np.cos(2 * np.pi * np.multiply.outer(phi, q)) @ c[1:]
        raise InvalidParameter("the DG measure has no Lebesgue density")

    def label(self) -> str:
        if self.kind in ("sine_gordon", "hard_core"):
            return f"{self.kind}({self.kappa:g})"
        if self.kind == "custom":
            return "custom(" + ", ".join(f"{c:g}" for c in self.coeffs) + ")"
        return "dg"


def _sine_gordon_series(kappa: float, q: int) -> float:
    # sum_l (kappa/2)^(2l+q) / ((l+q)! l!), done in logs to avoid overflow
    if kappa == 0.0:
        return 1.0 if q == 0 else 0.0
    lh = math.log(kappa / 2.0)
    total = 0.0
    for ell in range(SINE_GORDON_MAX_TERMS):
        term = math.exp((2 * ell + q) * lh - math.lgamma(ell + q + 1) - math.lgamma(ell + 1))
        total += term
        if ell > kappa and term < SINE_GORDON_TERM_TOL * max(total, 1e-300):
            return total
    raise NumericalFailure(f"sine-Gordon series did not converge for kappa={kappa}, q={q}")


def fourier_coeffs(measure: MeasureSpec, q_max: int) -> np.ndarray:
    """Fourier coefficients a(0..q_max) of the single-site measure."""
    if q_max < 1:
        raise InvalidParameter("q_max must be >= 1")
    q = np.arange(q_max + 1)
    if measure.kind == "dg":
        return np.ones(q_max + 1)
    if measure.kind == "sine_gordon":
        k = measure.kappa
        if k == 0.0:
            return (q == 0).astype(float)
        # the series is the modified Bessel function I_q(kappa); scipy's iv
        # is accurate to a few ulps and the direct series is kept as a check
        a = special.iv(q, k)
        if not np.all(np.isfinite(a)):
            a = np.array([_sine_gordon_series(k, int(j)) for j in q])
        return a
    if measure.kind == "hard_core":
        a = np.zeros(q_max + 1)
        a[0] = 1.0
        a[1] = measure.kappa
        return a
    c = np.asarray(measure.coeffs, dtype=float)
    a = np.zeros(q_max + 1)
    m = min(c.size, q_max + 1)
    a[:m] = c[:m]
    return a


def measure_ratio_bound(a: np.ndarray) -> float:
    """sup_q a(q+1)/a(q) over the stored range, ignoring the zero tail."""
    a = np.asarray(a, dtype=float)
    pos = np.flatnonzero(a > 0)
    if pos.size < 2:
        return 0.0
    last = pos[-1]
    head = a[: last + 1]
    if np.any(head <= 0):
        return math.inf
    return float(np.max(head[1:] / head[:-1]))


def measure_diagnostics(measure: MeasureSpec, q_max: int = 16) -> list:
    notes = []
    a = fourier_coeffs(measure, q_max)
    if measure.kind == "hard_core" and measure.kappa > 0:
        notes.append("hard-core measure: a(q) = 0 for |q| >= 2, outside strict positivity")
    if not math.isfinite(measure_ratio_bound(a)):
        notes.append("coefficient ratio bound is infinite (interior zero)")
    return notes


# --------------------------------------------------------------------------
# variance profiles and the configuration record
# --------------------------------------------------------------------------

def constant_profile(n: int, value: float = 1.0) -> np.ndarray:
    return np.full(n + 1, float(value))


def massive_profile(b: int, n: int, m2: float) -> np.ndarray:
    """Variance profile of the massive hierarchical Laplacian with scale L = sqrt(b)."""
    if m2 <= 0:
        raise InvalidParameter("mass squared must be positive")
    L2 = float(b)  # L^2
    s = np.empty(n + 1)
    s[0] = 1.0 / (m2 + 1.0)
    for k in range(1, n):
        s[k] = L2 ** (-2 * k) * (L2 - 1.0) / ((m2 + L2 ** (-k)) * (m2 + L2 ** (1 - k)))
    if n >= 1:
        s[n] = L2 ** (1 - 2 * n) / (m2 * (m2 + L2 ** (1 - n)))
    return s


@dataclass(frozen=True, eq=False)
class ModelConfig:
    b: int
    beta: float
    n: int
    sigma_sq: np.ndarray
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    q_max: int = 16
    grid_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 2:
            raise InvalidParameter(f"b must be an integer >= 2, got {self.b!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InvalidParameter(f"beta must be positive, got {self.beta!r}")
        if int(self.n) != self.n or self.n < 0:
            raise InvalidParameter(f"n must be a nonnegative integer, got {self.n!r}")
        s = np.array(self.sigma_sq, dtype=float).ravel()
        if s.size != self.n + 1:
            raise InvalidParameter(f"sigma_sq needs n+1 = {self.n + 1} entries, got {s.size}")
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise InvalidParameter("all sigma_k^2 must be positive and finite")
        if self.q_max < 4:
            raise InvalidParameter("q_max must be >= 4")
        if self.grid_size < 64:
            raise InvalidParameter("grid_size must be >= 64")
        s.setflags(write=False)
        object.__setattr__(self, "b", int(self.b))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "sigma_sq", s)

    @classmethod
    def constant(cls, b, beta, n, measure=None, value=1.0, **kw):
        return cls(b, beta, n, constant_profile(n, value), measure or MeasureSpec.dg(), **kw)

    @classmethod
    def massive(cls, b, beta, n, m2, measure=None, **kw):
        return cls(b, beta, n, massive_profile(b, n, m2), measure or MeasureSpec.dg(), **kw)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    @property
    def beta_c(self) -> float:
        return beta_critical(self.b)

    @property
    def theta(self) -> float:
        return math.exp(-2 * math.pi ** 2 / self.beta)

    @property
    def theta_k(self) -> np.ndarray:
        return np.exp(-2 * math.pi ** 2 / self.beta * self.sigma_sq)

    @property
    def supercritical(self) -> bool:
        return self.b * self.theta > 1.0

    @property
    def n_leaves(self) -> int:
        return self.b ** self.n

    def describe(self) -> dict:
        return {
            "b": self.b,
            "beta": self.beta,
            "n": self.n,
            "sigma_sq": [float(x) for x in self.sigma_sq],
            "measure": self.measure.label(),
            "q_max": self.q_max,
            "grid_size": self.grid_size,
            "seed": self.seed,
        }


def theta_of_beta(beta: float) -> float:
    return math.exp(-2 * math.pi ** 2 / beta)


def beta_of_theta(theta: float) -> float:
    if not 0 < theta < 1:
        raise InvalidParameter("theta must lie in (0, 1)")
    return -2 * math.pi ** 2 / math.log(theta)


# --------------------------------------------------------------------------
# conductances of the hierarchical Laplacian
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LaplacianProfile:
    """Conductances c_1..c_{n+1} and partial sums u_0..u_n."""

    b: int
    conductances: np.ndarray  # index k-1 holds c_k, k = 1..n+1
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.conductances.size - 1

    @property
    def mass(self) -> float:
        return float(self.conductances[-1])


def build_profile(config_or_sigma, b: int | None = None) -> LaplacianProfile:
    """Conductances from a variance profile, via u_k = sum_{j<=k} b^j sigma_j^2."""
    if isinstance(config_or_sigma, ModelConfig):
        s, b = config_or_sigma.sigma_sq, config_or_sigma.b
    else:
        s = np.asarray(config_or_sigma, dtype=float)
        if b is None:
            raise InvalidParameter("b is required when passing a raw profile")
    if np.any(s <= 0):
        raise InvalidParameter("variance profile must be positive")
    n = s.size - 1
    bk = float(b) ** np.arange(n + 1)
    u = np.cumsum(bk * s)
    inv = 1.0 / u
    c = np.empty(n + 1)
    c[:n] = (inv[:-1] - inv[1:]) / bk[1:]
    c[n] = inv[-1]
    return LaplacianProfile(int(b), c, u)


def profile_to_sigma_sq(profile: LaplacianProfile) -> np.ndarray:
    """Inverse of build_profile."""
    b, c = profile.b, profile.conductances
    n = c.size - 1
    inv = np.empty(n + 1)
    inv[n] = c[n]
    for k in range(n, 0, -1):
        inv[k - 1] = inv[k] + float(b) ** k * c[k - 1]
    u = 1.0 / inv
    s = np.empty(n + 1)
    s[0] = u[0]
    s[1:] = np.diff(u) / float(b) ** np.arange(1, n + 1)
    return s


# --------------------------------------------------------------------------
# hierarchical geometry
# --------------------------------------------------------------------------

def _check_leaf(x, b, n):
    if not (0 <= x < b ** n):
        raise InvalidParameter(f"leaf index {x} outside [0, {b ** n})")


def branch_depth(x: int, y: int, b: int, n: int) -> int:
    """Level of the nearest common ancestor: n minus the common digit prefix length."""
    _check_leaf(x, b, n)
    _check_leaf(y, b, n)
    k = 0
    while x != y:
        x //= b
        y //= b
        k += 1
    return k


def hier_distance(x: int, y: int, b: int, n: int) -> float:
    k = branch_depth(x, y, b, n)
    return 0.0 if k == 0 else float(b) ** (k / 2)


def leaf_pair(k: int, b: int, n: int) -> tuple:
    """A representative pair of leaves with branch depth k."""
    if not 0 <= k <= n:
        raise InvalidParameter("branch depth out of range")
    return (0, 0) if k == 0 else (0, b ** (k - 1))


def branch_depth_matrix(b: int, n: int) -> np.ndarray:
    idx = np.arange(b ** n)
    x, y = np.meshgrid(idx, idx, indexing="ij")
    k = np.zeros_like(x)
    while np.any(x != y):
        diff = x != y
        k[diff] += 1
        x = x // b
        y = y // b
    return k


# --------------------------------------------------------------------------
# configuration files
# --------------------------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _parse_call(text: str):
    m = _CALL.match(text.strip().lower())
    if not m:
        raise InvalidParameter(f"cannot parse {text!r}")
    name, args = m.group(1), m.group(2)
    vals = [float(t) for t in args.split(",") if t.strip()] if args else []
    return name, vals


def parse_measure(text: str) -> MeasureSpec:
    name, vals = _parse_call(text)
    if name == "dg":
        return MeasureSpec.dg()
    if name in ("sine_gordon", "sg"):
        return MeasureSpec.sine_gordon(vals[0] if vals else 1.0)
    if name in ("hard_core", "hc"):
        return MeasureSpec.hard_core(vals[0] if vals else 0.25)
    if name == "custom":
        return MeasureSpec.custom(vals)
    raise InvalidParameter(f"unknown measure {text!r}")


def parse_profile(text: str, b: int, n: int) -> np.ndarray:
    name, vals = _parse_call(text)
    if name == "constant":
        return constant_profile(n, vals[0] if vals else 1.0)
    if name == "massive":
        if not vals:
            raise InvalidParameter("massive profile needs m2")
        return massive_profile(b, n, vals[0])
    if name == "custom":
        return np.asarray(vals, dtype=float)
    raise InvalidParameter(f"unknown sigma profile {text!r}")


def load_config(path, **overrides) -> ModelConfig:
    """Read an INI-style file with a [model] section.

    Keys: b, beta, n, sigma_profile, measure, q_max, grid_size, seed.
    Keyword overrides replace file values (None is ignored).
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise InvalidParameter(f"cannot read config file {path}")
    if "model" not in cp:
        raise InvalidParameter("config file needs a [model] section")
    sec = cp["model"]
    known = {"b", "beta", "n", "sigma_profile", "measure", "q_max", "grid_size", "seed"}
    unknown = set(sec.keys()) - known
    if unknown:
        raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
    raw = dict(sec)
    raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> ModelConfig:
    try:
        b = int(raw.get("b", 2))
        beta = float(raw["beta"])
        n = int(raw.get("n", 8))
        prof = parse_profile(str(raw.get("sigma_profile", "constant")), b, n)
        meas = parse_measure(str(raw.get("measure", "dg")))
        return ModelConfig(
            b, beta, n, prof, meas,
            q_max=int(raw.get("q_max", 16)),
            grid_size=int(raw.get("grid_size", 512)),
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, InvalidParameter):
            raise
        raise InvalidParameter(f"bad configuration: {e}") from e
