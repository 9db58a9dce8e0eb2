"""Synthetic periodic link data with planted low-rank structure.

Two entity sets interact along daily time steps with weekly patterns. The
generator plants a rank-K Kruskal structure, tiles weekly templates with
per-component trends, then degrades the training tensor by swapping a share
of its largest entries to random positions and adding dense Gaussian noise.
The test period is always the clean continuation of the planted structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .cp import KruskalModel, normalize_model
from .scores import DenseScores
from .tensor import SparseTensor3

__all__ = [
    "SynthConfig",
    "SynthInstance",
    "default_templates",
    "gen_participation",
    "gen_temporal",
    "degrade",
    "generate",
    "last_period_scores",
]

_STORE_TOL = 1e-12   # entries at or below this magnitude are not stored

# ramp endpoint per trend mode: the envelope doubles, halves, or stays flat
_TREND_RAMPS = {"increasing": 2.0, "decreasing": 0.5, "neutral": 1.0}


def default_templates():
    """The ten stock weekly activity templates (rows), as an ndarray."""
    with resources.files("linkcast.data").joinpath("templates.json").open() as fh:
        data = json.load(fh)
    return np.asarray(data["templates"], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; the defaults reproduce the standard experiment
    (500 x 400 entities, 10 components, 10 weekly training periods)."""

    M: int = 500
    N: int = 400
    K: int = 10
    L: int = 7
    P: int = 10
    p_top: float = 0.25
    p_swap: float = 0.5
    p_rand: float = 0.1
    temporal_noise: float = 0.1
    seed: int = 0
    templates: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("p_top", "p_swap", "p_rand", "temporal_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if min(self.M, self.N, self.K, self.L, self.P) < 1:
            raise ValueError("M, N, K, L, P must all be positive")

    def resolved_templates(self):
        tpl = self.templates if self.templates is not None else default_templates()
        tpl = np.asarray(tpl, dtype=np.float64)
        if tpl.shape[1] != self.L:
            raise ValueError(
                f"templates have period {tpl.shape[1]}, config says L={self.L}"
            )
        if tpl.shape[0] < self.K:
            raise ValueError(
                f"need at least K={self.K} templates, got {tpl.shape[0]}"
            )
        return tpl[: self.K]

    def manifest(self):
        d = {
            "M": self.M, "N": self.N, "K": self.K, "L": self.L, "P": self.P,
            "p_top": self.p_top, "p_swap": self.p_swap, "p_rand": self.p_rand,
            "temporal_noise": self.temporal_noise, "seed": self.seed,
            "noise_scaling": "p_rand * std(noise-free entries incl. zeros)",
            "templates": self.resolved_templates().tolist(),
        }
        return d


@dataclass(frozen=True)
class SynthInstance:
    """One generated problem: planted factors, degraded train, clean test."""

    config: SynthConfig
    planted: KruskalModel                  # over all L*(P+1) steps, lam = 1
    z_train: SparseTensor3                 # M x N x L*P, degraded
    z_test: SparseTensor3                  # M x N x L, noise-free
    trend_modes: tuple[str, ...] = ()

    def planted_training_model(self) -> KruskalModel:
        """The planted structure restricted to the training window, in
        canonical (unit-column) form, for factor-match comparisons."""
        T = self.config.L * self.config.P
        return normalize_model(
            KruskalModel(
                lam=self.planted.lam,
                A=self.planted.A,
                B=self.planted.B,
                C=self.planted.C[:T],
            )
        )


def gen_participation(count: int, k: int, seed) -> np.ndarray:
    """Entity participation matrix with unit-norm columns.

    Each row joins m components where P(m >= j+1) = 4^(-j), so three quarters
    of entities join exactly one; membership strengths are uniform on [1, 10].
    `seed` may be an int or an existing Generator.
    """
    if count < 1 or k < 1:
        raise ValueError("count and k must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(count)
    m = np.minimum(k, np.floor(np.log(1.0 / u) / np.log(4.0)).astype(np.int64) + 1)
    out = np.zeros((count, k))
    for row in range(count):
        comps = rng.choice(k, size=m[row], replace=False)
        out[row, comps] = 1.0 + 9.0 * rng.random(m[row])
    norms = np.linalg.norm(out, axis=0)
    if np.any(norms == 0.0):
        empty = int(np.argmax(norms == 0.0))
        raise ValueError(
            f"component {empty} drew no participants; increase count or reseed"
        )
    return out / norms


def gen_temporal(config: SynthConfig, seed=None):
    """Temporal factor over L*(P+1) steps: tiled template, trend ramp, noise.

    Returns (C, C_test_clean, trend_modes). C is the noisy column-normalized
    matrix whose first L*P rows drive the training tensor; C_test_clean holds
    the last L rows taken *before* the noise step, scaled by the same column
    norm, so the test window stays clean.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        config.seed if seed is None else seed
    )
    templates = config.resolved_templates()
    L, P, K = config.L, config.P, config.K
    total = L * (P + 1)
    train_len = L * P
    modes = []
    C = np.zeros((total, K))
    C_test = np.zeros((L, K))
    mode_names = tuple(_TREND_RAMPS)
    for k in range(K):
        col = np.tile(templates[k], P + 1)
        mode = mode_names[rng.integers(len(mode_names))]
        modes.append(mode)
        col = col * np.linspace(1.0, _TREND_RAMPS[mode], total)
        clean = col.copy()
        if config.temporal_noise > 0:
            col = col + config.temporal_noise * col.std() * rng.standard_normal(total)
        norm = np.linalg.norm(col)
        if norm == 0.0:
            raise ValueError(f"temporal column {k} is identically zero")
        C[:, k] = col / norm
        C_test[:, k] = clean[train_len:] / norm
    return C, C_test, tuple(modes)


def _apply_swaps(flat, srcs, dsts):
    """Exchange flat[srcs[p]] <-> flat[dsts[p]] for p = 0, 1, ... in order.

    Pairs are applied in vectorized batches that keep only the earliest
    pending pair touching any given position, which reproduces the strict
    sequential semantics when positions collide.
    """
    pend_s = np.asarray(srcs, dtype=np.int64)
    pend_d = np.asarray(dsts, dtype=np.int64)
    while len(pend_s):
        n = len(pend_s)
        endpoints = np.concatenate([pend_s, pend_d])
        pair_idx = np.concatenate([np.arange(n), np.arange(n)])
        _, inverse = np.unique(endpoints, return_inverse=True)
        first_user = np.full(inverse.max() + 1, n, dtype=np.int64)
        np.minimum.at(first_user, inverse, pair_idx)
        runnable = (first_user[inverse[:n]] == np.arange(n)) & (
            first_user[inverse[n:]] == np.arange(n)
        )
        s, d = pend_s[runnable], pend_d[runnable]
        tmp = flat[s].copy()
        flat[s] = flat[d]
        flat[d] = tmp
        pend_s, pend_d = pend_s[~runnable], pend_d[~runnable]
    return flat


def degrade(z: SparseTensor3, p_top: float, p_swap: float, p_rand: float,
            seed) -> SparseTensor3:
    """Corrupt a tensor by relocating large entries and adding dense noise.

    First the candidate set is formed: the largest-magnitude entries, up to a
    p_top fraction of all M*N*T positions (only actual nonzeros qualify; a
    zero has no magnitude rank). A p_swap share of the candidates, chosen
    uniformly, is exchanged with positions drawn uniformly over the whole
    dense index space -- collisions allowed, applied in order. Then centered
    Gaussian noise with standard deviation p_rand * std(noise-free entries,
    zeros included) is added to every entry.

    The value multiset is invariant under the swap stage. Entries with
    magnitude <= 1e-12 after degradation are dropped from storage.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    M, N, T = z.dims
    size = M * N * T
    flat = np.zeros(size)
    flat[(z.i * N + z.j) * T + z.t] = z.values
    sigma = float(flat.std())
    if p_swap > 0:
        nz = np.flatnonzero(np.abs(flat) > _STORE_TOL)
        n_cand = min(int(round(p_top * size)), len(nz))
        if n_cand:
            order = nz[np.argsort(-np.abs(flat[nz]), kind="stable")]
            cand = order[:n_cand]
            n_swap = int(round(p_swap * n_cand))
            if n_swap:
                srcs = cand[rng.choice(n_cand, size=n_swap, replace=False)]
                dsts = rng.integers(0, size, size=n_swap)
                flat = _apply_swaps(flat, srcs, dsts)
    if p_rand > 0:
        flat = flat + p_rand * sigma * rng.standard_normal(size)
    keep = np.abs(flat) > _STORE_TOL
    pos = np.flatnonzero(keep)
    ij, t = np.divmod(pos, T)
    i, j = np.divmod(ij, N)
    return SparseTensor3.from_coords((M, N, T), i, j, t, flat[pos])


def generate(config: SynthConfig) -> SynthInstance:
    """Draw one full problem instance from a single seeded stream."""
    rng = np.random.default_rng(config.seed)
    A = gen_participation(config.M, config.K, rng)
    B = gen_participation(config.N, config.K, rng)
    C, C_test, modes = gen_temporal(config, rng)
    train_len = config.L * config.P
    clean_train = np.einsum("ik,jk,tk->ijt", A, B, C[:train_len])
    z_train = degrade(
        SparseTensor3.from_dense(clean_train, tol=_STORE_TOL),
        config.p_top, config.p_swap, config.p_rand, rng,
    )
    z_test = SparseTensor3.from_dense(
        np.einsum("ik,jk,tk->ijt", A, B, C_test), tol=_STORE_TOL
    )
    # the planted model carries the rows both tensors were expanded from:
    # noisy training rows followed by the clean test rows
    planted = normalize_model(
        KruskalModel(
            lam=np.ones(config.K),
            A=A,
            B=B,
            C=np.vstack([C[:train_len], C_test]),
        )
    )
    return SynthInstance(
        config=config,
        planted=planted,
        z_train=z_train,
        z_test=z_test,
        trend_modes=modes,
    )


def last_period_scores(z_train: SparseTensor3, period: int):
    """Score the next period with the most recent period's raw values.

    Returns one dense scorer per step: step l predicts with the slice
    Z[:, :, T - L + l]. Perfectly periodic clean data makes this method
    exact; noise and swaps degrade it.
    """
    M, N, T = z_train.dims
    if period > T:
        raise ValueError(f"period {period} exceeds tensor length {T}")
    return [
        DenseScores(z_train.slice_csr(T - period + step).toarray())
        for step in range(period)
    ]
