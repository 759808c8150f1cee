"""Self-tuning NUTS driver.

Warm-up follows the usual windowed scheme: an initial fast interval (75
iterations) adapting only the step size, expanding slow windows (25, 50,
100, ... doubling, the last one stretched to fit) estimating the diagonal
inverse metric, then a terminal fast interval (50 iterations). Step size is
tuned by dual averaging (gamma 0.05, t0 10, kappa 0.75) toward
``target_accept`` and frozen to the smoothed value after warm-up.

Chains are fully determined by (seed, chain_index): each one draws from its
own counter-based RNG stream, so parallel and sequential execution produce
identical output, merged by chain index.
"""

import concurrent.futures
from dataclasses import dataclass, field, replace
import math
import time

import numpy as np

from . import _engine
from .errors import AllDivergent, ConfigError
from .models import PosteriorModel

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "slow_window_ends",
    "leapfrog",
    "nuts_transition",
    "adapt_run",
]

MAX_DELTA_ENERGY = 1000.0  # energy error above this marks a divergence

INIT_BUFFER = 75
TERM_BUFFER = 50
BASE_WINDOW = 25


@dataclass(frozen=True)
class SamplerConfig:
    warmup: int = 1000
    draws: int = 5000
    chains: int = 4
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 1
    init_radius: float = 2.0
    step_size: float | None = None  # fixed step size; disables all adaptation
    adapt_mass: bool = True
    parallel: bool = False

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.step_size is None and self.warmup < INIT_BUFFER + TERM_BUFFER + BASE_WINDOW:
            raise ConfigError(
                f"warmup must be >= {INIT_BUFFER + TERM_BUFFER + BASE_WINDOW} when adaptation is enabled")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.draws < 1 or self.chains < 1 or self.max_treedepth < 0:
            raise ConfigError("draws and chains must be >= 1, max_treedepth >= 0")


@dataclass
class ChainOutput:
    """Per-chain draws on the constrained scale plus sampler statistics."""

    chain: int
    names: list
    draws: np.ndarray        # (draws, D) constrained
    unconstrained: np.ndarray
    lp: np.ndarray
    stepsize: np.ndarray     # constant post-warm-up value, one entry per draw
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    inv_mass: np.ndarray
    warmup_stepsize: np.ndarray = field(repr=False, default=None)
    warmup_divergent: np.ndarray = field(repr=False, default=None)
    warmup_seconds: float = 0.0
    sampling_seconds: float = 0.0

    @property
    def n_divergent(self):
        return int(self.divergent.sum())


def slow_window_ends(warmup, init_buffer=INIT_BUFFER, term_buffer=TERM_BUFFER,
                     base_window=BASE_WINDOW):
    """1-based warm-up iterations at which a slow metric window closes.

    Windows double (25, 50, 100, ...); a window that could not be followed by
    a full doubling is stretched to the end of the slow region.
    """
    if warmup < init_buffer + term_buffer + base_window:
        return np.empty(0, dtype=np.int64)
    ends = []
    start = init_buffer
    size = base_window
    last = warmup - term_buffer
    while True:
        end = start + size
        if end + 2 * size >= last:
            ends.append(last)
            break
        ends.append(end)
        start = end
        size *= 2
    return np.array(ends, dtype=np.int64)


def make_rng(seed, stream=0):
    """Philox4x32 sampler stream keyed from (seed, stream)."""
    return _engine.rng_init(int(seed), int(stream))


def leapfrog(model: PosteriorModel, q, p_momentum, eps, inv_mass):
    """One leapfrog step; symplectic and time-reversible.

    Returns (q', p', lp', grad'). A -inf lp' propagates unchanged and acts
    as the divergence signal downstream.
    """
    q = np.array(q, dtype=np.float64)
    p = np.array(p_momentum, dtype=np.float64)
    inv_mass = np.ascontiguousarray(inv_mass, dtype=np.float64)
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if not np.all(inv_mass > 0):
        raise ConfigError("inv_mass must be positive element-wise")
    grad = np.empty(model.dim)
    lp = _engine.model_lp_grad(model.code, q, grad, model.margs())
    lp_new = _engine.leapfrog_step(model.code, model.margs(), q, p, grad, float(eps), inv_mass)
    return q, p, float(lp_new), grad


def nuts_transition(model: PosteriorModel, q, eps, inv_mass, rng):
    """One NUTS transition from q; returns (q_next, stats dict).

    ``rng`` is either an integer seed or a state array from make_rng; the
    state is advanced in place so repeated calls continue the stream.
    """
    st = make_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    q = np.array(q, dtype=np.float64)
    inv_mass = np.ascontiguousarray(inv_mass, dtype=np.float64)
    grad = np.empty(model.dim)
    lp = _engine.model_lp_grad(model.code, q, grad, model.margs())
    if not math.isfinite(lp):
        raise ValueError("nuts_transition needs a starting point with finite log-density")
    ws = np.empty((_engine._NWS, model.dim))
    ck_q = np.empty((model_depth_slots := 12, model.dim)) if False else np.empty((12, model.dim))
    ck_ps = np.empty_like(ck_q)
    stats = np.empty(6)
    max_depth = 10
    ck_q = np.empty((max_depth + 2, model.dim))
    ck_ps = np.empty((max_depth + 2, model.dim))
    lp = _engine.nuts_transition(model.code, model.margs(), q, lp, grad, float(eps),
                                 inv_mass, max_depth, MAX_DELTA_ENERGY, st,
                                 ws, ck_q, ck_ps, stats)
    out = {
        "lp": float(lp),
        "treedepth": int(stats[0]),
        "n_leapfrog": int(stats[1]),
        "divergent": bool(stats[2]),
        "energy": float(stats[3]),
        "accept_stat": float(stats[4] / stats[5]) if stats[5] > 0 else 0.0,
    }
    return q, out


def _run_single_chain(model: PosteriorModel, cfg: SamplerConfig, chain: int):
    st = _engine.rng_init(int(cfg.seed), int(chain))
    q, ok = _engine.init_position(model.code, model.margs(), model.dim,
                                  float(cfg.init_radius), st, 100)
    if not ok:
        raise RuntimeError(
            f"chain {chain}: no finite log-density found in 100 init draws; "
            "check the data/model")
    eps_fixed = -1.0 if cfg.step_size is None else float(cfg.step_size)
    ends = slow_window_ends(cfg.warmup) if (cfg.step_size is None and cfg.adapt_mass) \
        else np.empty(0, dtype=np.int64)

    t0 = time.perf_counter()
    q, lp, grad, eps, inv_mass, eps_trace, div_trace = _engine.run_warmup(
        model.code, model.margs(), q, int(cfg.warmup), float(cfg.target_accept),
        int(cfg.max_treedepth), MAX_DELTA_ENERGY, st, ends, INIT_BUFFER,
        eps_fixed, cfg.adapt_mass)
    t1 = time.perf_counter()

    uncon = np.empty((cfg.draws, model.dim))
    lps = np.empty(cfg.draws)
    stats = np.empty((cfg.draws, 5))
    _engine.run_draws(model.code, model.margs(), q, lp, grad, eps, inv_mass,
                      int(cfg.max_treedepth), MAX_DELTA_ENERGY, st, uncon, lps, stats)
    t2 = time.perf_counter()

    return ChainOutput(
        chain=chain,
        names=model.layout.names,
        draws=model.layout.constrain(uncon),
        unconstrained=uncon,
        lp=lps,
        stepsize=np.full(cfg.draws, eps),
        treedepth=stats[:, 0].astype(np.int64),
        n_leapfrog=stats[:, 1].astype(np.int64),
        divergent=stats[:, 2].astype(bool),
        energy=stats[:, 3].copy(),
        accept_stat=stats[:, 4].copy(),
        inv_mass=inv_mass,
        warmup_stepsize=eps_trace,
        warmup_divergent=div_trace.astype(bool),
        warmup_seconds=t1 - t0,
        sampling_seconds=t2 - t1,
    )


def adapt_run(model: PosteriorModel, cfg: SamplerConfig = SamplerConfig()):
    """Warm up, adapt, and sample all chains; returns one ChainOutput each.

    Raises AllDivergent when more than 90% of post-warm-up iterations
    diverge, which indicates a broken model or gradient rather than an
    unlucky run.
    """
    if cfg.parallel and cfg.chains > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.chains) as ex:
            futures = [ex.submit(_run_single_chain, model, cfg, c) for c in range(cfg.chains)]
            outputs = [f.result() for f in futures]
    else:
        outputs = [_run_single_chain(model, cfg, c) for c in range(cfg.chains)]
    total = sum(o.divergent.size for o in outputs)
    bad = sum(o.n_divergent for o in outputs)
    if total and bad / total > 0.9:
        raise AllDivergent(
            f"{bad}/{total} post-warm-up iterations diverged; the model or "
            "its gradient looks broken")
    return outputs
