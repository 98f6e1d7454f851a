"""Brute-force ground truth at desk scale.

Dense hierarchical Laplacians, the block-averaging decomposition of their
inverse, exhaustive Gibbs sums for small DG systems, and direct quadrature
of the one-step potential recursion.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NumericalFailure
from .model import LaplacianProfile, ModelConfig, branch_depth_matrix, build_profile
from .rgflow import PeriodicFunction, wrapped_gaussian

MAX_SITES = 4096
MAX_STATES = 10 ** 8


def _guard(b, n):
    if b ** n > MAX_SITES:
        raise InvalidParameter(f"b^n = {b ** n} exceeds the dense-matrix limit {MAX_SITES}")


def build_laplacian(profile: LaplacianProfile, b: int | None = None, n: int | None = None) -> np.ndarray:
    """Dense matrix of the hierarchical Laplacian from its row action.

    (Lap f)(x) = -c_{n+1} f(x) + sum_{k=1}^n c_k sum_{y in B_k(x)} (f(y) - f(x)),
    B_k(x) being the b^k leaves that share all but the last k digits with x.
    """
    b = profile.b if b is None else b
    n = profile.n if n is None else n
    _guard(b, n)
    c = profile.conductances
    kmat = branch_depth_matrix(b, n)
    # cumulative conductance: pair (x, y) is coupled at every level k >= k(x, y)
    cum = np.concatenate([[0.0], np.cumsum(c[:n][::-1])[::-1], [0.0]])  # cum[k] = sum_{j>=k}^{n} c_j
    off = cum[np.maximum(kmat, 1)]
    off[kmat == 0] = 0.0
    lap = off.copy()
    np.fill_diagonal(lap, -c[n] - off.sum(axis=1))
    return lap


def block_projector(b: int, n: int, k: int) -> np.ndarray:
    kmat = branch_depth_matrix(b, n)
    return (kmat <= k) / float(b) ** k


def decomposition_rhs(sigma_sq: np.ndarray, b: int) -> np.ndarray:
    n = sigma_sq.size - 1
    kmat = branch_depth_matrix(b, n)
    out = sigma_sq[0] * np.eye(b ** n)
    for k in range(1, n + 1):
        out += sigma_sq[k] * (kmat <= k)  # sigma_k^2 b^k Q_k
    return out


def verify_decomposition(profile_or_sigma, b: int, n: int | None = None) -> float:
    """max |(-Lap)^{-1} - sum_k sigma_k^2 b^k Q_k| entrywise."""
    if isinstance(profile_or_sigma, LaplacianProfile):
        from .model import profile_to_sigma_sq
        prof = profile_or_sigma
        sig = profile_to_sigma_sq(prof)
    else:
        sig = np.asarray(profile_or_sigma, dtype=float)
        prof = build_profile(sig, b)
    n = prof.n
    _guard(b, n)
    lap = build_laplacian(prof, b, n)
    try:
        green = np.linalg.inv(-lap)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure("hierarchical Laplacian is singular") from e
    return float(np.max(np.abs(green - decomposition_rhs(sig, b))))


# --------------------------------------------------------------------------
# exhaustive Gibbs sums
# --------------------------------------------------------------------------

@dataclass
class GibbsResult:
    q_site: int
    covariances: dict      # (x, y) -> <phi_x phi_y>
    charges: dict          # (x, y, alpha) -> <cos 2 pi alpha (phi_x - phi_y)>
    means: np.ndarray
    sensitivity: float     # largest change from q_site - 1 to q_site


def _gibbs_once(config: ModelConfig, q_site: int, pairs, charge_obs):
    b, n, beta = config.b, config.n, config.beta
    N = b ** n
    if (2 * q_site + 1) ** N > MAX_STATES:
        raise InvalidParameter("state space too large for exhaustive enumeration")
    A = -build_laplacian(build_profile(config))
    vals = np.arange(-q_site, q_site + 1, dtype=float)
    rest = np.array(list(itertools.product(vals, repeat=N - 1))) if N > 1 else np.zeros((1, 0))
    # ground energy is 0 (phi = 0) so no shift is needed; partition over the first site
    acc_z, acc_m = [], [[] for _ in range(N)]
    acc_c = {p: [] for p in pairs}
    acc_q = {o: [] for o in charge_obs}
    for v0 in vals:
        phi = np.hstack([np.full((rest.shape[0], 1), v0), rest])
        e = 0.5 * beta * np.einsum("ij,jk,ik->i", phi, A, phi)
        w = np.exp(-e)
        acc_z.append(w.sum())
        for x in range(N):
            acc_m[x].append(w @ phi[:, x])
        for (x, y) in pairs:
            acc_c[(x, y)].append(w @ (phi[:, x] * phi[:, y]))
        for (x, y, a) in charge_obs:
            acc_q[(x, y, a)].append(w @ np.cos(2 * np.pi * a * (phi[:, x] - phi[:, y])))
    Z = math.fsum(acc_z)
    means = np.array([math.fsum(m) / Z for m in acc_m])
    cov = {p: math.fsum(acc_c[p]) / Z for p in pairs}
    chg = {o: math.fsum(acc_q[o]) / Z for o in charge_obs}
    return cov, chg, means


def gibbs_brute(config: ModelConfig, q_site: int = 6, pairs=None, alphas=(), cache_dir=None) -> GibbsResult:
    """Exact DG expectations by enumerating phi in {-q_site..q_site}^(b^n).

    ``pairs`` defaults to one representative leaf pair per branch depth.
    """
    if config.measure.kind != "dg":
        raise InvalidParameter("exhaustive Gibbs sums are implemented for the DG measure only")
    from .model import leaf_pair
    if pairs is None:
        pairs = [leaf_pair(k, config.b, config.n) for k in range(config.n + 1)]
    pairs = [tuple(p) for p in pairs]
    charge_obs = [(x, y, float(a)) for (x, y) in pairs for a in alphas]
    key = None
    if cache_dir is not None:
        blob = json.dumps([config.describe(), q_site, pairs, list(map(float, alphas))], sort_keys=True)
        key = hashlib.sha256(blob.encode()).hexdigest()[:16]
        path = os.path.join(cache_dir, f"gibbs_{key}.json")
        if os.path.exists(path):
            with open(path) as fh:
                d = json.load(fh)
            return GibbsResult(d["q_site"], {tuple(k_): v for k_, v in d["cov"]},
                               {tuple(k_): v for k_, v in d["chg"]}, np.array(d["means"]), d["sens"])
    cov, chg, means = _gibbs_once(config, q_site, pairs, charge_obs)
    cov0, chg0, _ = _gibbs_once(config, q_site - 1, pairs, charge_obs)
    sens = max([abs(cov[p] - cov0[p]) for p in pairs] + [abs(chg[o] - chg0[o]) for o in charge_obs])
    res = GibbsResult(q_site, cov, chg, means, sens)
    if key is not None:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w") as fh:
            json.dump({"q_site": q_site, "cov": [[list(k_), v] for k_, v in cov.items()],
                       "chg": [[list(k_), v] for k_, v in chg.items()],
                       "means": means.tolist(), "sens": sens}, fh, indent=1)
    return res


# --------------------------------------------------------------------------
# potential recursion by quadrature
# --------------------------------------------------------------------------

def potential_recursion_direct(v_prev: PeriodicFunction, sigma_sq: float, beta: float,
                               b: int) -> PeriodicFunction:
    """v_{k+1} from exp(-v_{k+1}(z)) = int exp(-b v_k(z + zeta)) mu_{sigma^2/beta}(dzeta).

    Uses a dense wrapped-Gaussian quadrature matrix on the grid (no FFT), so it
    is independent of the coefficient flow.  The additive constant is fixed by
    the minimum of v_prev being subtracted first.
    """
    z = v_prev.z
    N = z.size
    ker = wrapped_gaussian(np.subtract.outer(z, z), sigma_sq / beta) / N
    e = np.exp(-b * (v_prev.values - v_prev.values.min()))
    return PeriodicFunction(-np.log(ker @ e))


def normalized_fourier(vals: PeriodicFunction, Q: int) -> np.ndarray:
    """Fourier coefficients of exp(-v) for q = 0..Q, divided by the zero mode."""
    c = np.fft.rfft(np.exp(-(vals.values - vals.values.min()))).real
    return c[: Q + 1] / c[0]
