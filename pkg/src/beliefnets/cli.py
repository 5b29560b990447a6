"""Command-line surface: fit, split, perplexity, sbc, consensus, generate.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.  All
randomness flows from --seed; chain c uses child stream c, so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io as bio
from .calibration import run_sbc
from .consensus import TopicSet, consensus_topics, project_topics, robust_filter
from .evaluation import ZeroProbabilityError, bootstrap_ci, holdout_split, per_sample_log_scores
from .mbn import mbn_generate_counts, mbn_generate_latent, mbn_predictive
from .pgbn import pgbn_generate_counts, pgbn_generate_latent, pgbn_predictive
from .state import MBN, PGBN, CountMatrix, NetworkConfig
from .streams import RandomStream
from .trainer import TrainPlan, simple_plan, run_chains
from .evaluation import perplexity as eval_perplexity


def _widths(text: str) -> tuple:
    try:
        return tuple(int(w) for w in text.split(","))
    except ValueError:
        raise click.BadParameter("layers must be a comma-separated list of ints")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Deep belief networks for count data."""
    import logging
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        stream=sys.stderr)


model_opt = click.option("--model", type=click.Choice([MBN, PGBN]), default=MBN,
                         show_default=True)


@main.command()
@model_opt
@click.option("--layers", default="30", show_default=True,
              help="Comma-separated layer widths, bottom first.")
@click.option("--gamma0", type=float, default=1.0, show_default=True)
@click.option("--e0", type=float, default=1.0, show_default=True)
@click.option("--f0", type=float, default=1.0, show_default=True)
@click.option("--eta", type=float, default=0.05, show_default=True)
@click.option("--c0", type=float, default=1.0, show_default=True,
              help="Top-level gamma rate (pgbn only).")
@click.option("--eta-hyper", default=None,
              help="a,b[,eta0] to infer the topic smoothing prior.")
@click.option("--chains", type=int, default=4, show_default=True)
@click.option("--burnin", type=int, default=1000, show_default=True)
@click.option("--collect", type=int, default=100, show_default=True,
              help="Posterior samples per chain.")
@click.option("--thin", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=None,
              help="Worker processes (default: one per chain, capped at CPUs; "
                   "env BELIEFNETS_WORKERS overrides).")
@click.option("--fix-phi1", type=click.Path(exists=True, dir_okay=False),
              default=None,
              help="TSV matrix of known bottom-layer topics; skips their "
                   "resampling so hidden units give attributions.")
@click.option("--grow", multiple=True, metavar="WIDTH:SWEEPS",
              help="After the main run: append a WIDTH-topic layer, run SWEEPS "
                   "more, prune empty topics.  Repeatable.")
@click.argument("data_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
def fit(model, layers, gamma0, e0, f0, eta, c0, eta_hyper, chains, burnin,
        collect, thin, seed, jobs, fix_phi1, grow, data_file, out_dir):
    """Fit a belief network to a count matrix and persist the posterior."""
    widths = _widths(layers)
    hyper = None
    if eta_hyper:
        parts = [float(x) for x in eta_hyper.split(",")]
        if len(parts) == 2:
            parts.append(1.0)
        hyper = tuple(parts)
    config = NetworkConfig(kind=model, layer_widths=widths, gamma0=gamma0,
                           e0=e0, f0=f0, eta=eta, c0=c0, eta_hyperprior=hyper)
    data = bio.read_count_matrix(data_file)
    fixed_phi = None
    if fix_phi1:
        mat, _, _ = bio.read_weight_matrix(fix_phi1)
        colsum = mat.sum(axis=0)
        if (colsum <= 0).any():
            raise click.ClickException("fixed topic matrix has an empty column")
        fixed_phi = {0: mat / colsum}
    out = Path(out_dir)
    if (out / "manifest.json").exists():
        raise click.ClickException(f"{out_dir} already holds a run")
    phases = [dict(action="run", sweeps=burnin + collect * thin)]
    for g in grow:
        try:
            width, sweeps = (int(x) for x in g.split(":"))
        except ValueError:
            raise click.BadParameter("--grow expects WIDTH:SWEEPS")
        phases.append(dict(action="grow", width=width))
        phases.append(dict(action="run", sweeps=sweeps))
        phases.append(dict(action="prune"))
    from .trainer import Phase
    plan = TrainPlan(phases=tuple(Phase(**p) for p in phases), chains=chains,
                     burn_in=burnin, collect=collect, thin=thin, seed=seed)
    result = run_chains(plan, config, data, n_jobs=jobs, fixed_phi=fixed_phi)
    if not result.surviving:
        raise click.ClickException("all chains failed:\n"
                                   + (result.chains[0].error or ""))
    manifest = bio.save_run(out, config, result, bio.file_sha256(data_file),
                            command=" ".join(sys.argv[1:]))
    click.echo(f"run written to {out_dir}: "
               f"{sum(e['n_samples'] for e in manifest['chains'])} samples "
               f"across {len(manifest['chains'])} chains")


@main.command()
@click.option("--fraction", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.argument("data_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
def split(fraction, seed, data_file, out_dir):
    """Hold out a fraction of each count quantum into a test matrix."""
    if not 0 < fraction < 1:
        raise click.UsageError("--fraction must lie strictly between 0 and 1")
    data = bio.read_count_matrix(data_file)
    piece = holdout_split(data, fraction, RandomStream(seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    note = [f"fraction={fraction}", f"seed={seed}", f"source={Path(data_file).name}"]
    bio.write_count_matrix(out / "train.tsv", piece.train, comments=note)
    bio.write_count_matrix(out / "test.tsv", piece.test, comments=note)
    click.echo(f"wrote {out / 'train.tsv'} and {out / 'test.tsv'}")


def _predictive_for(manifest, chains_samples):
    pooled = [s for chain in chains_samples for s in chain]
    if not pooled:
        raise click.ClickException("run directory holds no posterior samples")
    kind = manifest["config"]["kind"]
    return (mbn_predictive if kind == MBN else pgbn_predictive)(pooled)


@main.command()
@click.option("--bootstrap", "B", type=int, default=10_000, show_default=True,
              help="Bootstrap resamples for the confidence interval.")
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--per-sample", "per_sample", type=click.Path(dir_okay=False),
              default=None, help="Also dump per-sample contributions to this TSV.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("test_file", type=click.Path(exists=True, dir_okay=False))
def perplexity(B, level, seed, per_sample, output, run_dir, test_file):
    """Held-out perplexity of a fitted run, with a bootstrap interval."""
    manifest, _, chains_samples = bio.load_run(run_dir)
    test = bio.read_count_matrix(test_file)
    if test.n_j.sum() == 0:
        raise click.ClickException("test matrix is empty")
    p = _predictive_for(manifest, chains_samples)
    if p.shape != test.x.shape:
        raise click.ClickException("test matrix shape differs from the fit")
    n_zero_cells = 0
    dropped = 0
    try:
        scores, keep = per_sample_log_scores(test, p)
    except ZeroProbabilityError as err:
        # footnote semantics: drop the offending samples, report how many
        n_zero_cells = err.n_cells
        dropped = err.sample_indices.size
        mask = np.ones(test.J, dtype=bool)
        mask[err.sample_indices] = False
        test = CountMatrix(test.x[:, mask])
        scores, keep = per_sample_log_scores(test, p[:, mask])
    value = float(np.exp(-scores.mean()))
    stream = RandomStream(seed)
    lo, hi = bootstrap_ci(scores, stream, level=level, B=B,
                          statistic=lambda s: np.exp(-np.mean(s)))
    rows = [{"metric": "perplexity", "value": value},
            {"metric": "ci_low", "value": lo},
            {"metric": "ci_high", "value": hi},
            {"metric": "n_samples_scored", "value": int(scores.size)},
            {"metric": "n_samples_empty_test", "value": int(test.J - keep.size)},
            {"metric": "n_samples_dropped_zero_prob", "value": dropped},
            {"metric": "n_cells_zero_prob", "value": n_zero_cells}]
    text = "metric\tvalue\n" + "\n".join(f"{r['metric']}\t{_num(r['value'])}" for r in rows)
    if output:
        Path(output).write_text(text + "\n")
    else:
        click.echo(text)
    if per_sample:
        bio.write_tsv(per_sample, [{"sample": int(j), "log_score": float(s)}
                                   for j, s in zip(keep, scores)])


def _num(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


@main.command()
@model_opt
@click.option("--layers", default="3", show_default=True)
@click.option("--V", "V", type=int, default=5, show_default=True)
@click.option("--J", "J", type=int, default=8, show_default=True)
@click.option("--n", "n_j", type=int, default=20, show_default=True,
              help="Total count per sample (mbn).")
@click.option("--sims", type=int, default=200, show_default=True)
@click.option("--draws", "L", type=int, default=31, show_default=True)
@click.option("--thin", type=int, default=5, show_default=True)
@click.option("--warmup", type=int, default=200, show_default=True)
@click.option("--gamma0", type=float, default=1.0, show_default=True)
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--break-crt", is_flag=True,
              help="Deliberately skip the table-count step (harness check).")
@click.argument("out_dir", type=click.Path(file_okay=False))
def sbc(model, layers, V, J, n_j, sims, L, thin, warmup, gamma0, eta, seed,
        jobs, break_crt, out_dir):
    """Simulation-based calibration of the sampler; exit 1 if any functional
    fails rank uniformity at p <= 0.001."""
    config = NetworkConfig(kind=model, layer_widths=_widths(layers),
                           gamma0=gamma0, eta=eta)
    reports = run_sbc(config, V, J, n_j, sims, L, thin, RandomStream(seed),
                      warmup=warmup, mutation="skip_crt" if break_crt else None,
                      n_jobs=jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rep in reports:
        rows.append({"functional": rep.functional, "chi2": rep.chi2,
                     "p_value": rep.p_value, "num_sims": rep.num_sims,
                     "L": rep.L, "passed": rep.passed})
        with open(out / f"ranks_{rep.functional}.csv", "w") as fh:
            fh.write("rank,count\n")
            for rank, count in enumerate(rep.histogram):
                fh.write(f"{rank},{count}\n")
    bio.write_tsv(out / "sbc_report.tsv", rows)
    for r in rows:
        click.echo(f"{r['functional']}\tp={r['p_value']:.3g}\t"
                   f"{'pass' if r['passed'] else 'FAIL'}")
    if not all(r["passed"] for r in rows):
        raise click.ClickException("rank uniformity rejected")


@main.command()
@click.option("--layer", type=int, default=2, show_default=True,
              help="1-based layer whose topics are matched.")
@click.option("--threshold", type=float, default=0.25, show_default=True)
@click.option("--mode", type=click.Choice(["close", "far"]), default="close",
              show_default=True, help="Robustness comparison direction.")
@click.option("-o", "--out-dir", type=click.Path(file_okay=False), required=True)
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def consensus(layer, threshold, mode, out_dir, run_dir):
    """Consensus topics across chains, with robustness filtering and
    projection onto observed features."""
    manifest, config, chains_samples = bio.load_run(run_dir)
    if layer < 1 or layer > config.T:
        raise click.UsageError("layer out of range for this run")
    i = layer - 1
    sets = []
    for cid, samples in enumerate(chains_samples):
        if not samples:
            continue
        phi = np.mean([s.phi[i] for s in samples], axis=0)
        phi /= phi.sum(axis=0, keepdims=True)
        sets.append(TopicSet(chain_id=cid, topics=phi))
    if len(sets) < 2:
        raise click.ClickException("need at least two chains with samples")
    result = consensus_topics(sets)
    filtered = robust_filter(result, threshold=threshold, mode=mode)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(filtered.centroids.shape[1]):
        for v in range(filtered.centroids.shape[0]):
            rows.append({"centroid": k, "feature": v,
                         "weight": float(filtered.centroids[v, k])})
    bio.write_tsv(out / "consensus_topics.tsv", rows)
    rob = [{"centroid": k, "max_jsd": float(result.max_jsd[k]),
            "robust": bool(result.robust[k])}
           for k in range(result.centroids.shape[1])]
    bio.write_tsv(out / "robustness.tsv", rob)
    proj = filtered.centroids
    for lower in range(i - 1, -1, -1):
        phi_mean = np.mean([np.mean([s.phi[lower] for s in samples], axis=0)
                            for samples in chains_samples if samples], axis=0)
        phi_mean /= phi_mean.sum(axis=0, keepdims=True)
        proj = project_topics(phi_mean, proj)
    prows = []
    for k in range(proj.shape[1]):
        for v in range(proj.shape[0]):
            prows.append({"centroid": k, "feature": v, "weight": float(proj[v, k])})
    bio.write_tsv(out / "projected_topics.tsv", prows)
    click.echo(f"{filtered.centroids.shape[1]} robust centroids "
               f"(of {result.centroids.shape[1]}), silhouette "
               f"{result.silhouette:.4f}")


@main.command()
@model_opt
@click.option("--layers", default="1", show_default=True)
@click.option("--V", "V", type=int, required=True)
@click.option("--J", "J", type=int, required=True)
@click.option("--n", "n_j", type=int, default=10, show_default=True,
              help="Total count per sample (mbn).")
@click.option("--gamma0", type=float, default=1.0, show_default=True)
@click.option("--eta", type=float, default=0.5, show_default=True)
@click.option("--representation", type=click.Choice(["latent", "counts"]),
              default="latent", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.argument("out_file", type=click.Path(dir_okay=False))
def generate(model, layers, V, J, n_j, gamma0, eta, representation, seed, out_file):
    """Draw a synthetic count matrix from the generative model."""
    config = NetworkConfig(kind=model, layer_widths=_widths(layers),
                           gamma0=gamma0, eta=eta)
    stream = RandomStream(seed)
    n = np.full(J, n_j, dtype=np.int64)
    if model == MBN:
        gen = mbn_generate_latent if representation == "latent" else mbn_generate_counts
        data = gen(config, V, J, n, stream)[0]
    else:
        gen = pgbn_generate_latent if representation == "latent" else pgbn_generate_counts
        data = gen(config, V, J, stream)[0]
    bio.write_count_matrix(out_file, data,
                           comments=[f"model={model}", f"seed={seed}",
                                     f"representation={representation}"])
    click.echo(f"wrote {out_file}")


if __name__ == "__main__":
    main()
