"""Count-matrix TSV files and run-directory persistence.

Count matrices are tab-separated: optional '#' comment lines, a header row of
sample labels (first cell names the feature column), then one row per feature
with integer cells.  Run directories hold manifest.json plus
chain_<c>/sample_<i>.json files, likelihood traces, and a diagnostics table.
Nothing time-dependent is written, so reruns with the same seed are
byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .evaluation import mcmc_summary
from .state import CountMatrix, NetworkConfig, PosteriorSample
from .trainer import RunResult, TrainPlan

FORMAT_VERSION = 1


def read_count_matrix(path) -> CountMatrix:
    rows, labels = [], []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split("\t")
            if header is None:
                header = cells[1:]
                continue
            labels.append(cells[0])
            rows.append([int(round(float(v))) for v in cells[1:]])
    if header is None or not rows:
        raise ValueError(f"{path}: no count rows found")
    x = np.asarray(rows, dtype=np.int64)
    if x.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return CountMatrix(x, feature_labels=labels, sample_labels=header)


def write_count_matrix(path, data: CountMatrix, comments=()):
    feat = data.feature_labels or [f"f{v}" for v in range(data.V)]
    samp = data.sample_labels or [f"s{j}" for j in range(data.J)]
    with open(path, "w") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("feature\t" + "\t".join(samp) + "\n")
        for v in range(data.V):
            fh.write(feat[v] + "\t" + "\t".join(str(int(x)) for x in data.x[v]) + "\n")


def read_weight_matrix(path):
    """Float matrix in the count-matrix TSV layout (e.g. fixed signatures)."""
    rows, labels = [], []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cells = line.split("\t")
            if header is None:
                header = cells[1:]
                continue
            labels.append(cells[0])
            rows.append([float(v) for v in cells[1:]])
    if header is None or not rows:
        raise ValueError(f"{path}: no rows found")
    return np.asarray(rows, float), labels, header


def write_weight_matrix(path, w, row_labels=None, col_labels=None, comments=()):
    w = np.asarray(w, float)
    row_labels = row_labels or [f"f{v}" for v in range(w.shape[0])]
    col_labels = col_labels or [f"k{j}" for j in range(w.shape[1])]
    with open(path, "w") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("feature\t" + "\t".join(col_labels) + "\n")
        for v in range(w.shape[0]):
            fh.write(row_labels[v] + "\t" + "\t".join(repr(float(x)) for x in w[v]) + "\n")


def write_tsv(path, rows: list[dict]):
    """Plain TSV with a header row taken from the first dict's keys."""
    if not rows:
        raise ValueError("nothing to write")
    keys = list(rows[0])
    with open(path, "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[k]) for k in keys) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_sha256(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def config_to_dict(config: NetworkConfig) -> dict:
    d = dataclasses.asdict(config)
    d["layer_widths"] = list(config.layer_widths)
    d["eta"] = list(config.eta)
    if config.eta_hyperprior is not None:
        d["eta_hyperprior"] = list(config.eta_hyperprior)
    return d


def config_from_dict(d: dict) -> NetworkConfig:
    kwargs = dict(d)
    kwargs["layer_widths"] = tuple(kwargs["layer_widths"])
    kwargs["eta"] = tuple(kwargs["eta"])
    if kwargs.get("eta_hyperprior") is not None:
        kwargs["eta_hyperprior"] = tuple(kwargs["eta_hyperprior"])
    return NetworkConfig(**kwargs)


def save_run(run_dir, config: NetworkConfig, result: RunResult, data_hash: str,
             command: str = "") -> dict:
    """Persist a training run: manifest, per-chain samples, traces, diagnostics."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    plan = result.plan
    chain_entries = []
    for chain in result.chains:
        cdir = run_dir / f"chain_{chain.chain_id}"
        cdir.mkdir(exist_ok=True)
        files = []
        for i, sample in enumerate(chain.samples):
            fname = f"chain_{chain.chain_id}/sample_{i}.json"
            with open(run_dir / fname, "w") as fh:
                json.dump(sample.to_dict(), fh, sort_keys=True)
            files.append(fname)
        trace_name = f"chain_{chain.chain_id}/trace.tsv"
        keys = sorted(chain.scalar_traces)
        with open(run_dir / trace_name, "w") as fh:
            fh.write("sweep\tloglik" + "".join(f"\t{k}" for k in keys) + "\n")
            for s in range(chain.loglik.size):
                fh.write(str(s + 1) + "\t" + repr(float(chain.loglik[s])))
                for k in keys:
                    fh.write("\t" + repr(float(chain.scalar_traces[k][s])))
                fh.write("\n")
        chain_entries.append({
            "chain_id": chain.chain_id,
            "n_samples": len(chain.samples),
            "samples": files,
            "trace": trace_name,
            "error": chain.error,
        })
    diag_rows = _diagnostics_rows(result)
    if diag_rows:
        write_tsv(run_dir / "diagnostics.tsv", diag_rows)
    cfg = config_to_dict(result.config)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "config_hash": _json_sha256(cfg),
        "initial_config": config_to_dict(config),
        "data_hash": data_hash,
        "seed": plan.seed,
        "plan": {
            "phases": [dataclasses.asdict(p) for p in plan.phases],
            "chains": plan.chains,
            "burn_in": plan.burn_in,
            "collect": plan.collect,
            "thin": plan.thin,
        },
        "chains": chain_entries,
        "diagnostics": "diagnostics.tsv" if diag_rows else None,
        "command": command,
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def _diagnostics_rows(result: RunResult) -> list[dict]:
    """Split-R-hat style summaries of the scalar traces over the collection
    window, pooled across surviving chains."""
    live = result.surviving
    if len(live) < 2:
        return []
    window = result.plan.collect * result.plan.thin
    names = sorted({k for c in live for k in c.scalar_traces})
    rows = []
    for name in ["loglik"] + names:
        traces = []
        for c in live:
            series = c.loglik if name == "loglik" else c.scalar_traces.get(name)
            if series is None or series.size == 0:
                break
            traces.append(series[-window:] if window else series)
        else:
            n = min(t.size for t in traces)
            if n < 4:
                continue
            summ = mcmc_summary(np.stack([t[-n:] for t in traces]))
            row = {"name": name}
            row.update(summ.as_row())
            rows.append(row)
    return rows


def load_run(run_dir):
    """Read back a run directory: (manifest, config, per-chain sample lists)."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    config = config_from_dict(manifest["config"])
    chains = []
    for entry in manifest["chains"]:
        samples = []
        for fname in entry["samples"]:
            with open(run_dir / fname) as fh:
                samples.append(PosteriorSample.from_dict(json.load(fh)))
        chains.append(samples)
    return manifest, config, chains
