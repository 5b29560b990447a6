"""Gibbs sweep and generative samplers for the multinomial belief network.

Update order follows the sampling procedure exactly: an upward pass that
augments with latent counts and refreshes the topic weights layer by layer,
a top-level update, then a downward pass refreshing hidden units and
concentrations.  Layers are indexed from 0 throughout.
"""

from __future__ import annotations

import numpy as np

from .distributions import (
    _TINY,
    assign_quanta,
    crt_array,
    dirichlet_cols,
    multinomial_cells,
    polya_cols,
    sample_gcrtp,
)
from .state import ChainState, CountMatrix, NetworkConfig, init_from_prior
from .streams import RandomStream


def split_layer_counts(state: ChainState, i: int, stream: RandomStream):
    """Split x^(i+1) cellwise over topics: y ~ Mult(x_vj, {phi_vk theta_kj}_k).

    Only the two reductions the updates need are stored: m[i][j, k] (y summed
    over features) and y_vk[i][v, k] (y summed over samples).  The quantum
    index arrays for layer 0 are cached since its counts never change.
    """
    x = state.x[i]
    K = state.config.layer_widths[i]
    J = state.J
    cache = state._quanta_cache.get(i) if i == 0 else None
    if cache is None:
        v_idx, j_idx = np.nonzero(x)
        counts = x[v_idx, j_idx]
        cell = np.repeat(np.arange(counts.size), counts)
        v_of_q = v_idx[cell]
        j_of_q = j_idx[cell]
        if i == 0:
            state._quanta_cache[0] = (v_idx, j_idx, counts, cell, v_of_q, j_of_q)
    else:
        v_idx, j_idx, counts, cell, v_of_q, j_of_q = cache
    probs = state.phi[i][v_idx, :] * state.theta[i][:, j_idx].T
    _, k = assign_quanta(counts, probs, stream, cell=cell)
    V_i = x.shape[0]
    state.m[i] = np.bincount(j_of_q * K + k, minlength=J * K).reshape(J, K)
    state.y_vk[i] = np.bincount(v_of_q * K + k, minlength=V_i * K).reshape(V_i, K)


def mbn_upward_layer(state: ChainState, i: int, stream: RandomStream,
                     fix_phi: bool = False, skip_crt: bool = False):
    """One upward step at layer i: split counts, draw the level-(i+2) counts
    by CRT, and resample the layer's topic weights."""
    split_layer_counts(state, i, stream)
    if skip_crt:  # deliberate mutation used by the calibration harness
        x_next = state.m[i].T.copy()
    else:
        conc = np.maximum(state.c[i] * state.a[i + 1], _TINY)
        x_next = crt_array(state.m[i].T, conc, stream)
    state.x[i + 1] = x_next
    state.n[i + 1] = x_next.sum(axis=0)
    if not fix_phi:
        state.phi[i] = dirichlet_cols(state.eta[i][:, None] + state.y_vk[i], stream)


def mbn_sample_r(state: ChainState, stream: RandomStream):
    """Resample the top-level activation from its Dirichlet posterior."""
    K_T = state.config.layer_widths[-1]
    conc = state.config.gamma0 / K_T + state.x[state.T].sum(axis=1)
    state.r = dirichlet_cols(conc, stream)
    state.refresh_top_activation()


def mbn_downward_layer(state: ChainState, i: int, stream: RandomStream,
                       update_c: bool = True):
    """One downward step at layer i: resample hidden units, then the
    concentration feeding them, then refresh the layer's activation."""
    conc = state.c[i] * state.a[i + 1] + state.m[i].T
    state.theta[i] = dirichlet_cols(conc, stream)
    if update_c:
        state.c[i] = sample_gcrtp(int(state.n[i + 1].sum()), state.n[i],
                                  state.config.e0, state.config.f0,
                                  alpha_init=state.c[i], stream=stream)
    state.a[i] = state.phi[i] @ state.theta[i]


def mbn_sample_eta(state: ChainState, i: int, stream: RandomStream):
    """Resample the layer's topic-prior concentrations under their
    gamma-Dirichlet hyperprior, via CRT augmentation of the topic counts."""
    a_h, b_h, eta0 = state.config.eta_hyperprior
    conc = np.maximum(state.eta_alpha[i] * state.eta_dir[i], _TINY)
    z = crt_array(state.y_vk[i], conc[:, None], stream)
    alpha = sample_gcrtp(int(z.sum()), state.m[i].sum(axis=0), a_h, b_h,
                         alpha_init=float(state.eta_alpha[i]), stream=stream)
    state.eta_dir[i] = dirichlet_cols(eta0 + z.sum(axis=1), stream)
    state.eta_alpha[i] = alpha
    state.eta[i] = alpha * state.eta_dir[i]


def mbn_gibbs_sweep(state: ChainState, data: CountMatrix | None = None,
                    stream: RandomStream | None = None, *,
                    fixed_phi_layers=(), update_c: bool = True,
                    update_r: bool = True, skip_crt: bool = False) -> ChainState:
    """One full Gibbs sweep: upward pass, top-level update, downward pass.

    fixed_phi_layers names 0-based layers whose topic weights are held fixed
    (the attribution mode); update_c / update_r freeze the remaining global
    parameters so the sweep can serve as a conditional sampler for theta.
    """
    stream = stream or state.rng
    if data is not None:
        state.set_data(data)
    for i in range(state.T):
        mbn_upward_layer(state, i, stream,
                         fix_phi=i in fixed_phi_layers, skip_crt=skip_crt)
    if update_r:
        mbn_sample_r(state, stream)
    for i in range(state.T - 1, -1, -1):
        mbn_downward_layer(state, i, stream, update_c=update_c)
    if state.config.eta_hyperprior is not None:
        for i in range(state.T):
            if i not in fixed_phi_layers:
                mbn_sample_eta(state, i, stream)
    state.iteration += 1
    return state


# ---------------------------------------------------------------------------
# Generative samplers


def mbn_generate_latent(config: NetworkConfig, V: int, J: int, n,
                        stream: RandomStream, shared: dict | None = None):
    """Ancestral draw through the Dirichlet representation.

    Returns the generated CountMatrix and the full latent state that produced
    it (the calibration harness reads its ground-truth functionals).
    """
    state = init_from_prior(config, J, n, stream, shared=shared, V=V)
    x = multinomial_cells(state.n[0], state.a[0].T, stream).T
    data = CountMatrix(x)
    state.data = data
    state.x[0] = x
    return data, state


def spread_counts(weights: np.ndarray, counts: np.ndarray,
                  stream: RandomStream) -> np.ndarray:
    """Push per-(topic, sample) counts down through topic weight columns.

    weights: (V, K) column distributions; counts: (K, J).  Each count quantum
    at (k, j) lands on a feature v ~ weights[:, k]; returns the (V, J) totals.
    """
    K, J = counts.shape
    V = weights.shape[0]
    k_idx, j_idx = np.nonzero(counts)
    cellcounts = counts[k_idx, j_idx]
    probs = weights.T[k_idx]
    cell, v = assign_quanta(cellcounts, probs, stream)
    j_of_q = j_idx[cell]
    return np.bincount(v * J + j_of_q, minlength=V * J).reshape(V, J)


def mbn_generate_counts(config: NetworkConfig, V: int, J: int, n,
                        stream: RandomStream, shared: dict | None = None):
    """Ancestral draw through the count representation (hidden units
    integrated out): CRT totals down the stack, a top multinomial, then
    alternating Polya and multinomial splits."""
    state = init_from_prior(config, J, n, stream, shared=shared, V=V)
    phi, c, r = state.phi, state.c, state.r
    T = config.T
    n_t = np.zeros((T + 1, J), dtype=np.int64)
    n_t[0] = state.n[0]
    for i in range(T):
        n_t[i + 1] = crt_array(n_t[i], c[i], stream)
    x_cur = multinomial_cells(n_t[T], np.repeat(r[None, :], J, axis=0), stream).T
    for i in range(T - 1, -1, -1):
        m_cols = polya_cols(n_t[i], x_cur, stream)
        x_cur = spread_counts(phi[i], m_cols, stream)
    latents = {"phi": phi, "c": c, "r": r, "n_t": n_t}
    return CountMatrix(x_cur), latents


def mbn_predictive(samples) -> np.ndarray:
    """Posterior predictive feature probabilities: the bottom activation
    averaged over samples (already column-normalized by construction)."""
    if not samples:
        raise ValueError("need at least one posterior sample")
    p = None
    for s in samples:
        a = s.phi[0] @ s.theta[0]
        p = a if p is None else p + a
    return p / len(samples)
