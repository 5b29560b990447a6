"""Multi-chain orchestration: phased training plans, greedy layer growth,
empty-topic pruning, and per-sweep likelihood traces."""

from __future__ import annotations

import logging
import os
import traceback
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import gammaln

from .distributions import dirichlet_cols, gamma_array
from .mbn import mbn_gibbs_sweep
from .pgbn import pgbn_compute_q, pgbn_gibbs_sweep
from .state import MBN, ChainState, CountMatrix, NetworkConfig, init_from_prior
from .streams import RandomStream

log = logging.getLogger(__name__)

WORKERS_ENV = "BELIEFNETS_WORKERS"


@dataclass(frozen=True)
class Phase:
    action: str          # "run" | "grow" | "prune"
    sweeps: int = 0      # for "run"
    width: int = 0       # for "grow": size of the appended layer
    layer: int | None = None  # for "prune": 0-based layer, default top

    def __post_init__(self):
        if self.action not in ("run", "grow", "prune"):
            raise ValueError(f"unknown action: {self.action}")
        if self.action == "run" and self.sweeps < 1:
            raise ValueError("run phases need at least one sweep")
        if self.action == "grow" and self.width < 1:
            raise ValueError("grow phases need a positive width")


@dataclass(frozen=True)
class TrainPlan:
    phases: tuple
    chains: int = 4
    burn_in: int = 0
    collect: int = 0
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in < 0 or self.collect < 0:
            raise ValueError("burn_in and collect must be non-negative")


def simple_plan(burn_in: int, collect: int, thin: int, chains: int,
                seed: int) -> TrainPlan:
    """One run phase long enough to warm up and gather `collect` samples."""
    return TrainPlan(phases=(Phase("run", sweeps=burn_in + collect * thin),),
                     chains=chains, burn_in=burn_in, collect=collect,
                     thin=thin, seed=seed)


@dataclass
class ChainRunResult:
    chain_id: int
    samples: list = field(default_factory=list)
    loglik: np.ndarray | None = None
    scalar_traces: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class RunResult:
    chains: list
    config: NetworkConfig
    plan: TrainPlan

    @property
    def surviving(self) -> list:
        return [c for c in self.chains if c.error is None]

    def pooled_samples(self) -> list:
        out = []
        for c in self.surviving:
            out.extend(c.samples)
        return out


def train_loglik(state: ChainState, data: CountMatrix | None = None) -> float:
    """Training-data log likelihood under the current bottom activation:
    multinomial columns for the multinomial kind, independent Poisson cells
    for the Poisson-gamma kind."""
    x = data.x if data is not None else state.x[0]
    a = state.a[0]
    logp = np.log(np.maximum(a, 1e-300))
    if state.kind == MBN:
        key = "loglik_const"
        const = state._quanta_cache.get(key)
        if const is None:
            n_j = x.sum(axis=0)
            const = float(gammaln(n_j + 1).sum() - gammaln(x + 1).sum())
            state._quanta_cache[key] = const
        return float(const + (x * logp).sum())
    return float((x * logp - a).sum() - gammaln(x + 1).sum())


def sweep_fn(kind: str):
    return mbn_gibbs_sweep if kind == MBN else pgbn_gibbs_sweep


def grow_layer(state: ChainState, K_new: int, stream: RandomStream | None = None
               ) -> ChainState:
    """Append a prior-initialized top layer of width K_new.

    Existing layers are untouched; the old top-level activation vector is
    replaced by a fresh prior draw of the new size.  Augmented counts for the
    new layer stay zero until the next sweep.
    """
    if K_new < 1:
        raise ValueError("K_new must be >= 1")
    stream = stream or state.rng
    cfg = state.config
    K_old = cfg.layer_widths[-1]
    new_cfg = cfg.with_widths(cfg.layer_widths + (K_new,))
    T_new = new_cfg.T
    state.config = new_cfg
    eta_new = np.full(K_old, new_cfg.eta[T_new - 1])
    if cfg.eta_hyperprior is not None:
        a_h, b_h, eta0 = cfg.eta_hyperprior
        alpha = gamma_array(np.array([a_h]), b_h, stream)[0]
        direction = dirichlet_cols(np.full(K_old, eta0), stream)
        state.eta_alpha = np.append(state.eta_alpha, alpha)
        state.eta_dir.append(direction)
        eta_new = alpha * direction
    state.eta.append(eta_new)
    state.phi.append(dirichlet_cols(
        np.repeat(eta_new[:, None], K_new, axis=1), stream))
    J = state.J
    if state.kind == MBN:
        state.c = np.append(state.c, gamma_array(np.array([cfg.e0]), cfg.f0, stream))
        state.r = dirichlet_cols(np.full(K_new, cfg.gamma0 / K_new), stream)
        state.n = np.vstack([state.n, np.zeros((1, J), dtype=np.int64)])
    else:
        state.c = np.vstack([state.c, gamma_array(np.full((1, J), cfg.e0),
                                                  cfg.f0, stream)])
        state.r = gamma_array(np.full(K_new, cfg.gamma0 / K_new), cfg.c0, stream)
        state.q = np.vstack([state.q, np.ones((1, J))])
    state.a.append(None)
    state.refresh_top_activation()
    if state.kind == MBN:
        conc = state.c[T_new - 1] * state.a[T_new]
        state.theta.append(dirichlet_cols(conc, stream))
    else:
        state.theta.append(gamma_array(state.a[T_new],
                                       state.c[T_new - 1][None, :], stream))
        pgbn_compute_q(state)
    state.a[T_new - 1] = state.phi[T_new - 1] @ state.theta[T_new - 1]
    state.x.append(np.zeros((K_new, J), dtype=np.int64))
    state.m.append(np.zeros((J, K_new), dtype=np.int64))
    state.y_vk.append(np.zeros((K_old, K_new), dtype=np.int64))
    return state


def prune_empty_topics(states: list, layer: int | None = None):
    """Drop layer topics with zero current usage, uniformly across chains.

    The retained width is the largest per-chain active-topic count, so no
    chain loses a live topic; each chain keeps its own top topics by usage.
    Returns (states, retained width, per-chain kept-index arrays).
    """
    if not states:
        raise ValueError("no chains to prune")
    T = states[0].T
    i = T - 1 if layer is None else layer
    if not 0 <= i < T:
        raise ValueError("layer out of range")
    usages = [st.m[i].sum(axis=0) for st in states]
    width = max(int((u > 0).sum()) for u in usages)
    if width == 0:
        raise ValueError("pruning would remove every topic")
    new_cfg = None
    mappings = []
    for st, usage in zip(states, usages):
        order = np.argsort(-usage, kind="stable")[:width]
        keep = np.sort(order)
        mappings.append(keep)
        st.phi[i] = st.phi[i][:, keep]
        st.theta[i] = st.theta[i][keep, :]
        st.m[i] = st.m[i][:, keep]
        st.y_vk[i] = st.y_vk[i][:, keep]
        st.x[i + 1] = st.x[i + 1][keep, :]
        if i == T - 1:
            st.r = st.r[keep]
            if st.kind == MBN:
                st.r = st.r / st.r.sum()
            st.refresh_top_activation()
        else:
            st.phi[i + 1] = st.phi[i + 1][keep, :]
            st.phi[i + 1] /= np.maximum(st.phi[i + 1].sum(axis=0, keepdims=True),
                                        1e-300)
            st.y_vk[i + 1] = st.y_vk[i + 1][keep, :]
            st.eta[i + 1] = st.eta[i + 1][keep]
            if st.eta_dir:
                st.eta_dir[i + 1] = st.eta_dir[i + 1][keep]
                st.eta_dir[i + 1] /= st.eta_dir[i + 1].sum()
            st.refresh_activation(i + 1)
        st.refresh_activation(i)
        widths = list(st.config.layer_widths)
        widths[i] = width
        st.config = st.config.with_widths(widths)
        new_cfg = st.config
    if states[0].kind == MBN:
        for st in states:
            st.n[i + 1] = st.x[i + 1].sum(axis=0)
    return states, width, mappings


def _resolve_jobs(n_jobs, chains: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    if n_jobs is not None:
        return max(1, int(n_jobs))
    return max(1, min(chains, os.cpu_count() or 1))


def _phase_worker(state, chain_id, sweeps, sweeps_done,
                  plan, n_collected, sweep_kwargs):
    try:
        samples = []
        loglik = np.empty(sweeps)
        traces = {f"c{i + 2}": np.empty(sweeps) for i in range(state.T)}
        sweep = sweep_fn(state.kind)
        for s in range(sweeps):
            sweep(state, stream=state.rng, **sweep_kwargs)
            loglik[s] = train_loglik(state)
            for i in range(state.T):
                traces[f"c{i + 2}"][s] = (state.c[i] if state.kind == MBN
                                          else state.c[i].mean())
            done = sweeps_done + s + 1
            if (done > plan.burn_in and (done - plan.burn_in) % plan.thin == 0
                    and n_collected + len(samples) < plan.collect):
                samples.append(state.snapshot(chain_id))
        return state, samples, loglik, traces, None
    except Exception:
        log.exception("chain %d aborted", chain_id)
        return None, [], np.empty(0), {}, traceback.format_exc()


def run_chains(plan: TrainPlan, config: NetworkConfig, data: CountMatrix,
               n_jobs: int | None = None, fixed_phi: dict | None = None,
               sweep_kwargs: dict | None = None) -> RunResult:
    """Execute a training plan over independent chains.

    Chains are initialized from the prior with distinct child streams of the
    plan seed and run in parallel; samples are recorded every `thin` sweeps
    once past `burn_in`, up to `collect` per chain.  Grow and prune phases
    are synchronization points.  A failing chain is dropped with its error
    recorded; the others continue.
    """
    sweep_kwargs = dict(sweep_kwargs or {})
    if fixed_phi:
        fixed_phi = {int(k): np.asarray(v, float) for k, v in fixed_phi.items()}
        for lay, mat in fixed_phi.items():
            expected = (config.feature_dims(data.V)[lay], config.layer_widths[lay])
            if mat.shape != expected:
                raise ValueError(f"fixed topic matrix for layer {lay} must have "
                                 f"shape {expected}, got {mat.shape}")
        sweep_kwargs["fixed_phi_layers"] = tuple(sorted(fixed_phi))
    jobs = _resolve_jobs(n_jobs, plan.chains)
    results = {c: ChainRunResult(chain_id=c, loglik=np.empty(0))
               for c in range(plan.chains)}
    states = {}
    for c in range(plan.chains):
        stream = RandomStream(plan.seed).child(c)
        states[c] = init_from_prior(config, data.J, data, stream)
        if fixed_phi:
            for lay, mat in fixed_phi.items():
                states[c].phi[lay] = mat.copy()
                states[c].refresh_activation(lay)
    sweeps_done = 0
    current_cfg = config
    for phase in plan.phases:
        live = [c for c in states if results[c].error is None]
        if len(live) == 0:
            break
        if phase.action == "run":
            out = Parallel(n_jobs=min(jobs, len(live)))(
                delayed(_phase_worker)(
                    states[c], c, phase.sweeps,
                    sweeps_done, plan, len(results[c].samples),
                    sweep_kwargs)
                for c in live)
            for c, (state, samples, loglik, traces, err) in zip(live, out):
                res = results[c]
                if err is not None:
                    res.error = err
                    states[c] = None
                    continue
                states[c] = state
                res.samples.extend(samples)
                res.loglik = np.concatenate([res.loglik, loglik])
                for k, v in traces.items():
                    prev = res.scalar_traces.get(k, np.empty(0))
                    res.scalar_traces[k] = np.concatenate([prev, v])
            sweeps_done += phase.sweeps
        elif phase.action == "grow":
            for c in live:
                grow_layer(states[c], phase.width)
            current_cfg = states[live[0]].config
        else:  # prune
            pruned, width, _ = prune_empty_topics([states[c] for c in live],
                                                  phase.layer)
            for c, st in zip(live, pruned):
                states[c] = st
            current_cfg = states[live[0]].config
            log.info("pruned to %d topics", width)
    return RunResult(chains=[results[c] for c in sorted(results)],
                     config=current_cfg, plan=plan)
