"""Holdout construction, held-out perplexity, bootstrap intervals, and
standard MCMC summary statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .state import CountMatrix
from .streams import RandomStream


class ZeroProbabilityError(ValueError):
    """The predictive assigned zero probability to observed held-out counts.

    Carries the offending cell count and sample indices so callers can report
    and, if they choose, drop the affected samples and recompute.
    """

    def __init__(self, n_cells: int, sample_indices):
        self.n_cells = int(n_cells)
        self.sample_indices = np.asarray(sample_indices)
        super().__init__(
            f"predictive probability is zero on {self.n_cells} held-out cells "
            f"across {self.sample_indices.size} samples")


@dataclass
class HoldoutSplit:
    train: CountMatrix
    test: CountMatrix
    fraction: float
    seed: int


def holdout_split(data: CountMatrix, fraction: float, stream: RandomStream) -> HoldoutSplit:
    """Split each count quantum independently into test with the given
    probability; train + test reproduce the original matrix exactly."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    gen = stream.bump()
    test = gen.binomial(data.x, fraction)
    train = data.x - test
    return HoldoutSplit(
        train=CountMatrix(train, data.feature_labels, data.sample_labels),
        test=CountMatrix(test, data.feature_labels, data.sample_labels),
        fraction=fraction,
        seed=stream.seed,
    )


def per_sample_log_scores(test: CountMatrix, p: np.ndarray):
    """Average held-out log probability per quantum, per sample.

    Samples with an empty test column are excluded; returns (scores, kept
    column indices).  Zero predictive probability on a positive count raises
    ZeroProbabilityError.
    """
    p = np.asarray(p, float)
    if p.shape != test.x.shape:
        raise ValueError("predictive matrix shape must match the test matrix")
    colsums = p.sum(axis=0)
    if np.abs(colsums - 1.0).max() > 1e-6:
        raise ValueError("predictive columns must sum to 1 within 1e-6")
    keep = np.nonzero(test.n_j > 0)[0]
    bad = (test.x > 0) & (p <= 0)
    if bad.any():
        raise ZeroProbabilityError(bad.sum(), np.nonzero(bad.any(axis=0))[0])
    x = test.x[:, keep].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(x > 0, np.log(np.maximum(p[:, keep], 1e-300)), 0.0)
    scores = (x * logp).sum(axis=0) / test.n_j[keep]
    return scores, keep


def perplexity(test: CountMatrix, p: np.ndarray) -> float:
    """Held-out perplexity: exp of the negative mean per-quantum predictive
    log probability, averaged over samples with non-empty test columns."""
    scores, keep = per_sample_log_scores(test, p)
    if keep.size == 0:
        raise ValueError("no samples with held-out counts")
    return float(np.exp(-scores.mean()))


def bootstrap_ci(per_sample_stats, stream: RandomStream, level: float = 0.95,
                 B: int = 10_000, statistic=np.mean):
    """Percentile bootstrap interval for an aggregate of per-sample statistics.

    Resamples sample indices (documents are the unit of replication) and
    recomputes `statistic` on each replicate.
    """
    stats = np.asarray(per_sample_stats, float)
    if stats.size < 2:
        raise ValueError("need at least two samples to bootstrap")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    gen = stream.bump()
    idx = gen.integers(0, stats.size, size=(B, stats.size))
    reps = np.apply_along_axis(statistic, 1, stats[idx])
    lo = (1 - level) / 2
    return (float(np.quantile(reps, lo)), float(np.quantile(reps, 1 - lo)))


def topic_entropy(phi_column) -> float:
    """Shannon entropy (nats) of a topic column, with 0 ln 0 = 0."""
    p = np.asarray(phi_column, float)
    pos = p > 0
    return float(-(p[pos] * np.log(p[pos])).sum())


# ---------------------------------------------------------------------------
# MCMC summaries: rank-normalized split R-hat, bulk/tail ESS, HDI


@dataclass
class McmcSummary:
    mean: float
    sd: float
    hdi_3: float
    hdi_97: float
    mcse_mean: float
    ess_bulk: float
    ess_tail: float
    r_hat: float

    def as_row(self) -> dict:
        return {
            "mean": self.mean, "sd": self.sd,
            "hdi_3%": self.hdi_3, "hdi_97%": self.hdi_97,
            "mcse_mean": self.mcse_mean,
            "ess_bulk": self.ess_bulk, "ess_tail": self.ess_tail,
            "r_hat": self.r_hat,
        }


def _split_chains(traces: np.ndarray) -> np.ndarray:
    C, N = traces.shape
    half = N // 2
    return np.concatenate([traces[:, :half], traces[:, N - half:]], axis=0)


def _rank_normalize(traces: np.ndarray) -> np.ndarray:
    flat = traces.ravel()
    ranks = np.empty_like(flat)
    order = np.argsort(flat, kind="stable")
    ranks[order] = np.arange(1, flat.size + 1)
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(traces.shape)


def _basic_rhat(traces: np.ndarray) -> float:
    C, N = traces.shape
    means = traces.mean(axis=1)
    variances = traces.var(axis=1, ddof=1)
    W = variances.mean()
    B = N * means.var(ddof=1)
    if W <= 0:
        return 1.0
    var_hat = (N - 1) / N * W + B / N
    return float(np.sqrt(var_hat / W))


def _chain_autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    size = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def _ess_geyer(traces: np.ndarray) -> float:
    """Effective sample size via Geyer's initial positive monotone sequence
    on the chain-combined autocorrelation."""
    C, N = traces.shape
    if N < 4:
        raise ValueError("need at least 4 draws per chain")
    acov = np.stack([_chain_autocovariance(traces[c]) for c in range(C)])
    mean_var = (acov[:, 0] * N / (N - 1)).mean()
    var_plus = mean_var * (N - 1) / N + traces.mean(axis=1).var(ddof=1)
    if var_plus <= 0 or mean_var <= 0:
        return float(C * N)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    npairs = N // 2
    pairs = rho[:2 * npairs].reshape(npairs, 2).sum(axis=1)
    nonpos = pairs <= 0
    cut = int(np.argmax(nonpos)) if nonpos.any() else npairs
    kept = np.minimum.accumulate(pairs[:max(cut, 1)])
    tau = max(-1.0 + 2.0 * kept.sum(), 0.01)
    return float(C * N / tau)


def _hdi(draws: np.ndarray, mass: float = 0.94):
    srt = np.sort(draws)
    n = srt.size
    window = max(int(np.ceil(mass * n)), 2)
    if window >= n:
        return float(srt[0]), float(srt[-1])
    widths = srt[window - 1:] - srt[:n - window + 1]
    i = int(np.argmin(widths))
    return float(srt[i]), float(srt[i + window - 1])


def mcmc_summary(traces) -> McmcSummary:
    """Summarize per-chain scalar series: rank-normalized split R-hat and
    bulk/tail effective sample sizes, a 94% highest-density interval by
    shortest-interval scan, and the Monte Carlo standard error of the mean."""
    traces = np.asarray(traces, float)
    if traces.ndim != 2 or traces.shape[0] < 2:
        raise ValueError("need at least two chains")
    if traces.shape[1] < 4:
        raise ValueError("need at least four draws per chain")
    flat = traces.ravel()
    mean = float(flat.mean())
    sd = float(flat.std(ddof=1))
    hdi_3, hdi_97 = _hdi(flat)
    split = _split_chains(traces)
    if sd == 0.0:
        total = float(flat.size)
        return McmcSummary(mean, 0.0, hdi_3, hdi_97, 0.0, total, total, 1.0)
    z = _rank_normalize(split)
    r_hat = _basic_rhat(z)
    ess_bulk = _ess_geyer(z)
    q05, q95 = np.quantile(flat, [0.05, 0.95])
    ess_tail = min(_ess_geyer(_split_chains((traces <= q05).astype(float))),
                   _ess_geyer(_split_chains((traces <= q95).astype(float))))
    mcse = sd / np.sqrt(ess_bulk)
    return McmcSummary(mean, sd, hdi_3, hdi_97, float(mcse),
                       float(ess_bulk), float(ess_tail), float(r_hat))
