"""Exact top-down sampling of the field through the tree-indexed chain.

The root value is drawn from p_n(.|0) and every vertex at level k-1 is drawn
from p_{k-1}(.|parent) independently of its siblings.  For k >= 1 the kernel
is a Gaussian tilted by exp(-b v_{k-1}); it is sampled by rejection from the
untilted Gaussian.  The bottom level uses the single-site measure itself.

Random streams are keyed by (seed, chunk, level, branch) through numpy's
SeedSequence, so results depend only on the seed, the sample count and the
configuration.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameter, NumericalFailure
from .model import ModelConfig
from .rgflow import FlowTrace, exp_neg_potential, grid, run_flow

CHUNK = 8192
MAX_FIELD_SITES = 2 ** 24
MIN_ACCEPT = 1e-3
BRANCH_SPINE, BRANCH_X, BRANCH_Y, BRANCH_FIELD = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass
class EstimatorResult:
    mean: float
    se: float
    n_samples: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class ChainSampler:
    """Per-level samplers built from a configuration and its flow."""

    def __init__(self, config: ModelConfig, flow: FlowTrace | None = None, grid_size: int | None = None):
        self.config = config
        self.flow = flow or run_flow(config)
        N = grid_size or config.grid_size
        z = grid(N)
        # rejection envelope for exp(-v_k): the true maximum exceeds the grid
        # maximum by at most (h/2)^2 / 2 * sup|E''| since E' vanishes there
        h = 1.0 / N
        self.emax = []
        for k in range(config.n + 1):
            lam = self.flow[k].lam
            e = exp_neg_potential(self.flow[k], z)
            curv = float(np.sum(2 * (2 * np.pi * np.arange(1, lam.size)) ** 2 * lam[1:]))
            self.emax.append(float(e.max()) + h * h / 8 * curv + 1e-12)
        self.sd = np.sqrt(config.sigma_sq / config.beta)
        m = config.measure
        if not m.is_discrete:
            dens = m.density(z)
            if np.any(dens < 0):
                raise InvalidParameter("single-site density is negative somewhere")
            self.nu_max = float(dens.max()) * (1 + 1e-12)

    # -- one level ---------------------------------------------------------
    def sample_level(self, k: int, parent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        parent = np.asarray(parent, dtype=float)
        if k >= 1:
            lam = self.flow[k - 1]
            b = self.config.b
            emax = self.emax[k - 1]
            accept = lambda x: (exp_neg_potential(lam, x) / emax) ** b
            return self._rejection(parent, self.sd[k], accept, rng)
        m = self.config.measure
        if m.is_discrete:
            return self._discrete_level0(parent, rng)
        return self._rejection(parent, self.sd[0], lambda x: m.density(x) / self.nu_max, rng)

    def _rejection(self, parent, sd, accept, rng):
        out = np.empty_like(parent)
        todo = np.arange(parent.size)
        tries = 0
        drawn = 0
        while todo.size:
            prop = parent[todo] + sd * rng.standard_normal(todo.size)
            u = rng.random(todo.size)
            ok = u < accept(prop)
            out[todo[ok]] = prop[ok]
            drawn += todo.size
            todo = todo[~ok]
            tries += 1
            if tries > 50 and (parent.size - todo.size) / drawn < MIN_ACCEPT:
                raise NumericalFailure("rejection sampler acceptance rate below 1e-3")
        return out

    def _discrete_level0(self, parent, rng):
        beta0 = self.config.beta / self.config.sigma_sq[0]
        m = int(math.ceil(12 * math.sqrt(1 / beta0))) + 2
        base = np.round(parent)
        offs = np.arange(-m, m + 1)
        q = base[:, None] + offs[None, :]
        logw = -0.5 * beta0 * (q - parent[:, None]) ** 2
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        cdf = np.cumsum(w, axis=1)
        u = rng.random(parent.size) * cdf[:, -1]
        idx = (cdf < u[:, None]).sum(axis=1)
        return q[np.arange(parent.size), idx]

    # -- paths and fields ---------------------------------------------------
    def descend(self, start: np.ndarray, top: int, bottom: int, seed: int, chunk: int, branch: int):
        """Run the chain from levels top..bottom, starting below the value ``start``."""
        phi = start
        for k in range(top, bottom - 1, -1):
            phi = self.sample_level(k, phi, stream(seed, chunk, k, branch))
        return phi

    def pair_chunk(self, k: int, size: int, seed: int, chunk: int):
        n = self.config.n
        spine = self.descend(np.zeros(size), n, k, seed, chunk, BRANCH_SPINE)
        if k == 0:
            return spine, spine
        x = self.descend(spine, k - 1, 0, seed, chunk, BRANCH_X)
        y = self.descend(spine, k - 1, 0, seed, chunk, BRANCH_Y)
        return x, y


def sample_kernel(k: int, parent, config: ModelConfig, flow: FlowTrace | None = None,
                  rng: np.random.Generator | None = None, sampler: ChainSampler | None = None):
    """Draw phi_k given phi_{k+1} = parent (scalar or array)."""
    s = sampler or ChainSampler(config, flow)
    rng = rng or stream(config.seed, 0, k, 0)
    arr = np.atleast_1d(np.asarray(parent, dtype=float))
    out = s.sample_level(k, arr, rng)
    return float(out[0]) if np.ndim(parent) == 0 else out


def _estimate(x: np.ndarray, seed: int) -> EstimatorResult:
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return EstimatorResult(float(np.mean(x)), se, n, seed)


@dataclass
class PairEstimates:
    k: int
    alpha: float
    covariance: EstimatorResult
    charge: EstimatorResult
    charge_imag: EstimatorResult


def sample_pair_values(config: ModelConfig, k: int, n_samples: int, seed: int,
                       flow: FlowTrace | None = None, sampler: ChainSampler | None = None):
    """(phi_x, phi_y) arrays for a leaf pair at branch depth k."""
    if not 0 <= k <= config.n:
        raise InvalidParameter("branch depth must lie in [0, n]")
    s = sampler or ChainSampler(config, flow)
    xs, ys = [], []
    done = 0
    c = 0
    while done < n_samples:
        m = min(CHUNK, n_samples - done)
        x, y = s.pair_chunk(k, m, seed, c)
        xs.append(x)
        ys.append(y)
        done += m
        c += 1
    return np.concatenate(xs), np.concatenate(ys)


def sample_pair(config: ModelConfig, k: int, n_samples: int, seed: int, alpha: float = 0.0,
                flow: FlowTrace | None = None, sampler: ChainSampler | None = None) -> PairEstimates:
    """Monte Carlo estimates of <phi_x phi_y> and <exp(2 pi i alpha (phi_x - phi_y))>."""
    x, y = sample_pair_values(config, k, n_samples, seed, flow, sampler)
    d = 2 * np.pi * alpha * (x - y)
    return PairEstimates(k, alpha, _estimate(x * y, seed), _estimate(np.cos(d), seed),
                         _estimate(np.sin(d), seed))


def sample_field(config: ModelConfig, seed: int, flow: FlowTrace | None = None,
                 sampler: ChainSampler | None = None, index: int = 0) -> np.ndarray:
    """One field configuration on all b^n leaves, in leaf-index order."""
    if config.n_leaves > MAX_FIELD_SITES:
        raise InvalidParameter(f"b^n = {config.n_leaves} exceeds {MAX_FIELD_SITES}")
    s = sampler or ChainSampler(config, flow)
    b, n = config.b, config.n
    phi = np.zeros(1)
    for k in range(n, -1, -1):
        parent = phi if k == n else np.repeat(phi, b)
        phi = s.sample_level(k, parent, stream(seed, index, k, BRANCH_FIELD))
    return phi


def sample_fields(config: ModelConfig, n_fields: int, seed: int, flow: FlowTrace | None = None) -> np.ndarray:
    s = ChainSampler(config, flow)
    return np.stack([sample_field(config, seed, sampler=s, index=i) for i in range(n_fields)])


def field_to_csv(values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["leaf_index", "value"])
    for i, v in enumerate(values):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()
