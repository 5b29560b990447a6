"""Samplers and exact log-pmf evaluators for the count distributions the networks need.

Everything here is pure given (arguments, stream): samplers draw only from the
stream they are handed, so concurrent use with distinct streams is safe.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import gammaln, logsumexp

from .streams import RandomStream

log = logging.getLogger(__name__)

_TINY = np.finfo(np.float64).tiny

# crt_log_pmf is backed by a lazily grown Stirling table; sizes beyond this are
# refused rather than silently extended (the pmf is only needed at test scale).
MAX_STIRLING_N = 64

_stirling_cache: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Stirling numbers and the CRT pmf


def log_stirling1_table(n_max: int) -> np.ndarray:
    """Table of log unsigned Stirling numbers of the first kind.

    Entry [n, m] holds log s(n, m); impossible (n, m) pairs hold -inf.
    Built with the recurrence s(n+1, m) = n*s(n, m) + s(n, m-1) in log space.
    """
    global _stirling_cache
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if n_max > MAX_STIRLING_N:
        raise ValueError(
            f"Stirling table restricted to n <= {MAX_STIRLING_N}, got {n_max}")
    if _stirling_cache is None or _stirling_cache.shape[0] <= n_max:
        tab = np.full((n_max + 1, n_max + 1), -np.inf)
        tab[0, 0] = 0.0
        for n in range(1, n_max + 1):
            with np.errstate(divide="ignore"):
                grown = np.log(n - 1) + tab[n - 1, 1:n + 1]
            tab[n, 1:n + 1] = np.logaddexp(grown, tab[n - 1, 0:n])
        _stirling_cache = tab
    return _stirling_cache[:n_max + 1, :n_max + 1]


def crt_log_pmf(m: int, n: int, alpha: float) -> float:
    """log P(m occupied tables | n customers, concentration alpha).

    Out-of-support m (m > n, or m = 0 with n >= 1, etc.) returns -inf rather
    than raising; the pmf is simply zero there.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n < 0:
        raise ValueError("n must be >= 0")
    if m < 0 or m > n:
        return -np.inf
    table = log_stirling1_table(n)
    return float(table[n, m] + m * np.log(alpha) + gammaln(alpha) - gammaln(alpha + n))


# ---------------------------------------------------------------------------
# Gamma and Dirichlet sampling


def gamma_array(shape, rate, stream: RandomStream) -> np.ndarray:
    """Gamma(shape, rate) draws, elementwise over broadcast arrays.

    Shapes below 1 go through the boosting identity
    Gamma(a) = Gamma(a+1) * U^(1/a), evaluated in log space so tiny shapes
    cannot underflow to zero.
    """
    shape, rate = np.broadcast_arrays(np.asarray(shape, float), np.asarray(rate, float))
    if shape.size and (shape.min() <= 0 or rate.min() <= 0):
        raise ValueError("gamma shape and rate must be positive")
    gen = stream.bump()
    out = np.empty(shape.shape)
    big = shape >= 1.0
    if big.any():
        out[big] = gen.standard_gamma(shape[big])
    small = ~big
    if small.any():
        sh = shape[small]
        boost = gen.standard_gamma(sh + 1.0)
        logu = np.log1p(-gen.random(sh.shape))
        out[small] = np.exp(np.log(boost) + logu / sh)
    return np.maximum(out / rate, _TINY)


def sample_gamma(shape: float, rate: float, stream: RandomStream, size=None):
    """Draw from Gamma(shape, rate) in the shape-rate parameterization."""
    if size is None:
        return float(gamma_array(shape, rate, stream))
    return gamma_array(np.full(size, shape), rate, stream)


def dirichlet_cols(conc, stream: RandomStream, allow_zero: bool = False) -> np.ndarray:
    """One Dirichlet draw per column of `conc` (K x J), normalized in log space.

    With allow_zero=True, zero concentrations receive exactly zero mass
    (colors absent from a Polya urn can never be drawn).  If a whole column
    degenerates numerically, all mass goes to its largest concentration.
    """
    conc = np.asarray(conc, float)
    squeeze = conc.ndim == 1
    if squeeze:
        conc = conc[:, None]
    if allow_zero:
        if conc.size and conc.min() < 0:
            raise ValueError("concentrations must be non-negative")
        if conc.size and not (conc.sum(axis=0) > 0).all():
            raise ValueError("each column needs at least one positive concentration")
    elif conc.size == 0 or conc.min() <= 0:
        raise ValueError("concentrations must be positive")
    gen = stream.bump()
    pos = conc > 0
    safe = np.where(pos, conc, 1.0)
    boost = gen.standard_gamma(safe + 1.0)
    logu = np.log1p(-gen.random(conc.shape))
    logg = np.where(pos, np.log(boost) + logu / safe, -np.inf)
    top = logg.max(axis=0, keepdims=True)
    dead = ~np.isfinite(top[0])
    if dead.any():
        # whole column underflowed: put mass 1 on the largest concentration
        idx = conc[:, dead].argmax(axis=0)
        logg[:, dead] = -np.inf
        logg[idx, np.nonzero(dead)[0]] = 0.0
        top[0, dead] = 0.0
    w = np.exp(logg - top)
    w /= w.sum(axis=0, keepdims=True)
    return w[:, 0] if squeeze else w


def sample_dirichlet(conc, stream: RandomStream) -> np.ndarray:
    """Draw a probability vector from Dirichlet(conc)."""
    return dirichlet_cols(np.asarray(conc, float), stream)


# ---------------------------------------------------------------------------
# Multinomial splitting


def assign_quanta(counts, probs, stream: RandomStream, cell=None):
    """Assign each count quantum of cell i a category ~ Categorical(probs[i]).

    counts: (cells,) non-negative ints; probs: (cells, K) non-negative weights,
    not necessarily normalized.  Returns (cell_index, category) per quantum.
    `cell` may carry a precomputed repeat(arange(cells), counts) so hot loops
    can reuse it.  Cells whose weights sum below 1e-300 fall back to their
    argmax entry.
    """
    counts = np.asarray(counts)
    probs = np.asarray(probs, float)
    ncells, K = probs.shape
    cum = probs.cumsum(axis=1)
    tot = cum[:, -1].copy()
    bad = (tot < 1e-300) & (counts > 0)
    if bad.any():
        log.warning("multinomial split: %d cells with vanishing total weight; "
                    "assigning their counts to the argmax entry", int(bad.sum()))
        idx = probs[bad].argmax(axis=1)
        cum[bad] = 0.0
        rows = np.nonzero(bad)[0]
        for r, k in zip(rows, idx):
            cum[r, k:] = 1.0
        tot[bad] = 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cum /= np.maximum(tot[:, None], _TINY)
    flat = (cum + np.arange(ncells)[:, None]).ravel()
    if cell is None:
        cell = np.repeat(np.arange(ncells), counts)
    gen = stream.bump()
    q = gen.random(cell.size) + cell
    k = np.searchsorted(flat, q, side="right") - cell * K
    return cell, np.minimum(k, K - 1)


def multinomial_cells(counts, probs, stream: RandomStream) -> np.ndarray:
    """Independent Mult(counts[i], probs[i]) draws for a batch of cells.

    Returns an integer array of the same shape as probs whose rows sum to
    counts exactly.
    """
    counts = np.asarray(counts)
    probs = np.asarray(probs, float)
    ncells, K = probs.shape
    cell, k = assign_quanta(counts, probs, stream)
    y = np.bincount(cell * K + k, minlength=ncells * K).reshape(ncells, K)
    return y


def sample_multinomial(n: int, p, stream: RandomStream) -> np.ndarray:
    """Draw counts from Mult(n, p); the result always totals exactly n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    p = np.asarray(p, float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p must be a non-empty vector")
    if p.min() < 0:
        raise ValueError("probabilities must be non-negative")
    return multinomial_cells(np.array([n]), p[None, :], stream)[0]


# ---------------------------------------------------------------------------
# Chinese restaurant table draws


def crt_array(n, alpha, stream: RandomStream) -> np.ndarray:
    """CRT(n, alpha) draws, elementwise: the number of occupied tables after
    seating n customers, via the Bernoulli-sum construction (O(n) per cell)."""
    n = np.asarray(n)
    alpha = np.broadcast_to(np.asarray(alpha, float), n.shape)
    if n.size and n.min() < 0:
        raise ValueError("counts must be >= 0")
    if n.size and (alpha[n > 0] <= 0).any():
        raise ValueError("alpha must be positive wherever n > 0")
    flat_n = n.ravel()
    flat_a = alpha.ravel()
    total = int(flat_n.sum())
    if total == 0:
        return np.zeros(n.shape, dtype=np.int64)
    idx = np.repeat(np.arange(flat_n.size), flat_n)
    starts = np.concatenate(([0], np.cumsum(flat_n)[:-1]))
    seat = np.arange(total) - np.repeat(starts, flat_n)  # 0-based customer index
    a = flat_a[idx]
    p = a / (a + seat)  # first customer always opens a table
    gen = stream.bump()
    hit = gen.random(total) < p
    out = np.bincount(idx[hit], minlength=flat_n.size)
    return out.reshape(n.shape)


def sample_crt(n: int, alpha: float, stream: RandomStream) -> int:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return int(crt_array(np.array([n]), alpha, stream)[0])


# ---------------------------------------------------------------------------
# Sums of logarithmic variables


def sumlog_array(l, p, stream: RandomStream) -> np.ndarray:
    """SumLog(l, p) draws, elementwise: sums of l iid Logarithmic(p) variables."""
    l = np.asarray(l)
    p = np.broadcast_to(np.asarray(p, float), l.shape)
    if l.size and l.min() < 0:
        raise ValueError("l must be >= 0")
    if l.size and ((p[l > 0] <= 0) | (p[l > 0] >= 1)).any():
        raise ValueError("p must lie in (0, 1) wherever l > 0")
    flat_l = l.ravel()
    total = int(flat_l.sum())
    if total == 0:
        return np.zeros(l.shape, dtype=np.int64)
    idx = np.repeat(np.arange(flat_l.size), flat_l)
    gen = stream.bump()
    draws = gen.logseries(p.ravel()[idx], size=total)
    out = np.bincount(idx, weights=draws, minlength=flat_l.size)
    return out.astype(np.int64).reshape(l.shape)


def sample_sumlog(l: int, p: float, stream: RandomStream) -> int:
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return int(sumlog_array(np.array([l]), p, stream)[0])


# ---------------------------------------------------------------------------
# Polya urns and Dirichlet-multinomials


def sample_dirichlet_multinomial(n: int, conc, stream: RandomStream) -> np.ndarray:
    """Mult(n, p) with p ~ Dirichlet(conc)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return sample_multinomial(n, sample_dirichlet(conc, stream), stream)


def sample_polya(n: int, y, stream: RandomStream) -> np.ndarray:
    """Contents of a Polya urn grown to n balls from initial counts y.

    Equal in distribution to y + DirMult(n - sum(y), y).
    """
    y = np.asarray(y)
    if y.min() < 0:
        raise ValueError("initial counts must be >= 0")
    tot = int(y.sum())
    if n < tot:
        raise ValueError("n must be at least the initial urn content")
    if n > tot and tot == 0:
        raise ValueError("cannot grow an empty urn")
    if n == tot:
        return y.copy()
    extra = np.zeros_like(y)
    pos = y > 0
    w = sample_dirichlet(y[pos].astype(float), stream)
    extra[pos] = sample_multinomial(n - tot, w, stream)
    return y + extra


def polya_cols(n, x, stream: RandomStream) -> np.ndarray:
    """Columnwise Polya draws: column j grows x[:, j] (K x J) to n[j] balls."""
    n = np.asarray(n)
    x = np.asarray(x)
    K, J = x.shape
    tot = x.sum(axis=0)
    if (n < tot).any():
        raise ValueError("n must be at least the initial urn content")
    rem = n - tot
    if ((rem > 0) & (tot == 0)).any():
        raise ValueError("cannot grow an empty urn")
    out = x.copy()
    live = rem > 0
    if not live.any():
        return out
    conc = x[:, live].astype(float)
    w = dirichlet_cols(conc, stream, allow_zero=True)
    extra = multinomial_cells(rem[live], w.T, stream).T
    out[:, live] += extra
    return out


# ---------------------------------------------------------------------------
# Concentration parameter under CRT-distributed table counts


def sample_gcrtp(m_total: int, n_groups, a: float, b: float, alpha_init: float,
                 stream: RandomStream, rounds: int = 5) -> float:
    """Sample the concentration of a CRT likelihood under a Gamma(a, b) prior.

    Target density is proportional to
        Gam(alpha | a, b) * alpha^m_total * prod_j Gamma(alpha) / Gamma(alpha + n_j).
    Uses the beta/Bernoulli auxiliary-variable kernel: per group with n_j > 0,
    w_j ~ Beta(alpha+1, n_j) and s_j ~ Bernoulli(n_j / (n_j + alpha)), then
    alpha ~ Gam(a + m_total - sum s_j, b - sum log w_j).  The kernel is run for
    a fixed number of rounds from alpha_init and the last draw is returned.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if m_total < 0:
        raise ValueError("m_total must be >= 0")
    if alpha_init <= 0:
        raise ValueError("alpha_init must be positive")
    n_groups = np.asarray(n_groups)
    if n_groups.size and n_groups.min() < 0:
        raise ValueError("group sizes must be >= 0")
    n_act = n_groups[n_groups > 0].astype(float)
    if n_act.size == 0:
        # no groups carry evidence: exact conjugate draw
        return sample_gamma(a + m_total, b, stream)
    alpha = float(alpha_init)
    gen = stream.bump()
    for _ in range(rounds):
        for _attempt in range(100):
            w = np.clip(gen.beta(alpha + 1.0, n_act), _TINY, 1.0)
            s = gen.random(n_act.size) < n_act / (n_act + alpha)
            shape = a + m_total - s.sum()
            rate = b - np.log(w).sum()
            if shape > 0 and rate > 0:  # rate > 0 always holds; guard anyway
                break
        else:
            raise RuntimeError("auxiliary draws kept the gamma shape non-positive; "
                               "m_total is inconsistent with the group sizes")
        alpha = max(gen.standard_gamma(shape) / rate, _TINY)
    return alpha


# ---------------------------------------------------------------------------
# Exact log-pmfs (used by the identity tests and as oracles)


def poisson_log_pmf(x, lam):
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(lam) - lam - gammaln(x + 1)
    out = np.where((lam == 0) & (x == 0), 0.0, out)
    out = np.where((lam == 0) & (x > 0), -np.inf, out)
    return out if out.ndim else float(out)


def binomial_log_pmf(k, n, p):
    k = np.asarray(k, float)
    choose = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = choose + _xlogy(k, p) + _xlogy(n - k, 1 - p)
    out = np.where((k < 0) | (k > n), -np.inf, out)
    return out if out.ndim else float(out)


def negbinom_log_pmf(m, r, p):
    """NB(m | r, p) with pmf proportional to p^m (1-p)^r."""
    m = np.asarray(m, float)
    out = (gammaln(r + m) - gammaln(r) - gammaln(m + 1)
           + r * np.log1p(-p) + _xlogy(m, p))
    out = np.where(m < 0, -np.inf, out)
    return out if out.ndim else float(out)


def logarithmic_log_pmf(k, p):
    k = np.asarray(k, float)
    with np.errstate(divide="ignore"):
        out = -np.log(-np.log1p(-p)) + _xlogy(k, p) - np.log(k)
    out = np.where(k < 1, -np.inf, out)
    return out if out.ndim else float(out)


def sumlog_log_pmf(m: int, l: int, p: float) -> float:
    """log pmf of a sum of l iid Logarithmic(p) draws, by exact convolution."""
    if l == 0:
        return 0.0 if m == 0 else -np.inf
    if m < l:
        return -np.inf
    base = np.exp(logarithmic_log_pmf(np.arange(m + 1), p))
    base[0] = 0.0
    acc = base.copy()
    for _ in range(l - 1):
        acc = np.convolve(acc, base)[:m + 1]
    with np.errstate(divide="ignore"):
        return float(np.log(acc[m]))


def multinomial_log_pmf(x, n, p) -> float:
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    if x.sum() != n:
        return -np.inf
    return float(gammaln(n + 1) - gammaln(x + 1).sum() + _xlogy(x, p).sum())


def dirichlet_multinomial_log_pmf(x, n, conc) -> float:
    """DirMult(x | n, conc); zero concentrations force the matching count to 0."""
    x = np.asarray(x, float)
    conc = np.asarray(conc, float)
    if x.sum() != n or (x < 0).any():
        return -np.inf
    if ((conc == 0) & (x > 0)).any():
        return -np.inf
    pos = conc > 0
    A = conc.sum()
    val = (gammaln(n + 1) - gammaln(x + 1).sum()
           + gammaln(A) - gammaln(A + n)
           + (gammaln(conc[pos] + x[pos]) - gammaln(conc[pos])).sum())
    return float(val)


def polya_log_pmf(m, n, y) -> float:
    """Polya(m | n, y): probability the urn started at y ends at m with n balls."""
    m = np.asarray(m)
    y = np.asarray(y)
    if (m < y).any() or m.sum() != n:
        return -np.inf
    return dirichlet_multinomial_log_pmf(m - y, n - int(y.sum()), y.astype(float))


def _xlogy(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x == 0, 0.0, x * np.log(y))
    return out
