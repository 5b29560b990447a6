"""Gibbs sweep and generative samplers for the Poisson-gamma belief network.

Same sweep skeleton as the multinomial network; the per-sample integer totals
are replaced by real scale factors q, hidden units are gamma distributed, and
every concentration is per sample and per layer.
"""

from __future__ import annotations

import numpy as np

from .distributions import _TINY, crt_array, dirichlet_cols, gamma_array, sumlog_array
from .mbn import split_layer_counts, spread_counts
from .state import ChainState, CountMatrix, DegenerateStateError, NetworkConfig, init_from_prior
from .streams import RandomStream


def pgbn_compute_q(state: ChainState):
    """Refresh the per-sample scale factors: q^(1) = 1 and
    q^(t+1) = ln(1 + q^(t) / c^(t+1))."""
    if (state.c <= 0).any():
        raise ValueError("scale parameters must be positive")
    state.q[0] = 1.0
    for i in range(state.T):
        state.q[i + 1] = np.log1p(state.q[i] / state.c[i])


def pgbn_upward_layer(state: ChainState, i: int, stream: RandomStream,
                      fix_phi: bool = False, skip_crt: bool = False):
    split_layer_counts(state, i, stream)
    if skip_crt:
        x_next = state.m[i].T.copy()
    else:
        conc = np.maximum(state.a[i + 1], _TINY)
        x_next = crt_array(state.m[i].T, conc, stream)
    state.x[i + 1] = x_next
    if not fix_phi:
        state.phi[i] = dirichlet_cols(state.eta[i][:, None] + state.y_vk[i], stream)


def pgbn_sample_r(state: ChainState, stream: RandomStream):
    """Gamma-Poisson conjugate update of the top-level activations."""
    cfg = state.config
    K_T = cfg.layer_widths[-1]
    shape = cfg.gamma0 / K_T + state.x[state.T].sum(axis=1)
    rate = cfg.c0 + state.q[state.T].sum()
    state.r = gamma_array(shape, rate, stream)
    state.refresh_top_activation()


def pgbn_downward_layer(state: ChainState, i: int, stream: RandomStream,
                        update_c: bool = True):
    cfg = state.config
    shape = state.a[i + 1] + state.m[i].T
    rate = (state.c[i] + state.q[i])[None, :]
    state.theta[i] = gamma_array(shape, rate, stream)
    if update_c:
        state.c[i] = gamma_array(cfg.e0 + state.a[i + 1].sum(axis=0),
                                 cfg.f0 + state.theta[i].sum(axis=0), stream)
    state.a[i] = state.phi[i] @ state.theta[i]


def pgbn_gibbs_sweep(state: ChainState, data: CountMatrix | None = None,
                     stream: RandomStream | None = None, *,
                     fixed_phi_layers=(), update_c: bool = True,
                     update_r: bool = True, skip_crt: bool = False) -> ChainState:
    """One full sweep: refresh q, upward pass, top-level update, downward
    pass, refresh q again once all scales are updated (never mid-layer)."""
    stream = stream or state.rng
    if data is not None:
        state.set_data(data)
    pgbn_compute_q(state)
    for i in range(state.T):
        pgbn_upward_layer(state, i, stream,
                          fix_phi=i in fixed_phi_layers, skip_crt=skip_crt)
    if update_r:
        pgbn_sample_r(state, stream)
    for i in range(state.T - 1, -1, -1):
        pgbn_downward_layer(state, i, stream, update_c=update_c)
    pgbn_compute_q(state)
    state.iteration += 1
    return state


# ---------------------------------------------------------------------------
# Generative samplers


def pgbn_generate_latent(config: NetworkConfig, V: int, J: int,
                         stream: RandomStream, shared: dict | None = None):
    """Ancestral draw through the gamma representation: Poisson counts from
    the bottom activation."""
    state = init_from_prior(config, J, None, stream, shared=shared, V=V)
    x = stream.bump().poisson(state.a[0]).astype(np.int64)
    data = CountMatrix(x)
    state.data = data
    state.x[0] = x
    return data, state


def pgbn_generate_counts(config: NetworkConfig, V: int, J: int,
                         stream: RandomStream, shared: dict | None = None):
    """Ancestral draw through the count representation: a Poisson at the top,
    then alternating sums of logarithmic draws and multinomial splits."""
    state = init_from_prior(config, J, None, stream, shared=shared, V=V)
    phi, c, r = state.phi, state.c, state.r
    T = config.T
    q = np.ones((T + 1, J))
    for i in range(T):
        q[i + 1] = np.log1p(q[i] / c[i])
    x_cur = stream.bump().poisson(q[T][None, :] * r[:, None]).astype(np.int64)
    for i in range(T - 1, -1, -1):
        p = -np.expm1(-q[i + 1])
        m_cols = sumlog_array(x_cur, p[None, :], stream)
        x_cur = spread_counts(phi[i], m_cols, stream)
    latents = {"phi": phi, "c": c, "r": r, "q": q}
    return CountMatrix(x_cur), latents


def pgbn_predictive(samples) -> np.ndarray:
    """Posterior predictive feature probabilities: the bottom activation,
    column-normalized then averaged over samples."""
    if not samples:
        raise ValueError("need at least one posterior sample")
    p = None
    for s in samples:
        a = s.phi[0] @ s.theta[0]
        tot = a.sum(axis=0)
        if (tot <= 0).any():
            raise DegenerateStateError("a posterior sample has an all-zero activation column")
        a = a / tot
        p = a if p is None else p + a
    return p / len(samples)
