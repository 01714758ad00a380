"""Command-line front end: ``co3 simulate | fit | select-d | evaluate | prior-k``.

Exit codes: 0 success, 1 configuration or I/O error, 2 ingestion error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, cutoffs_for, gibbs_controls, load_config, model_config,
                     scenario_config)
from .dataio import (IngestionError, read_dataset, read_json, read_partition, sha256_file,
                     write_dataset, write_json, write_matrix, write_partition, write_table)
from .inference import ari, bari, estimate_coclustering, select_d
from .model import NumericalFailure, Partition
from .prior import prior_k_pmf
from .sampler import derive_seed, run_chain
from .simulate import generate_dataset

log = logging.getLogger("co3")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: object = None
    input_checksum: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    version: str = __version__
    results: dict = field(default_factory=dict)

    def write(self, out_dir: Path, name: str = "manifest.json") -> Path:
        path = out_dir / name
        write_json(path, {
            "subcommand": self.subcommand, "config": self.config, "seed": self.seed,
            "input_checksum": self.input_checksum, "outputs": sorted(self.outputs),
            "wall_time_s": round(self.wall_time_s, 3), "version": self.version,
            "results": self.results,
        })
        return path


def _workers():
    try:
        return max(1, int(os.environ.get("CO3_THREADS", "1")))
    except ValueError:
        return 1


class _Outputs:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _truth_payload(sim):
    return {
        "rows": sim.rows.labels.tolist(), "cols": sim.cols.labels.tolist(),
        "n_censored": sim.n_censored, "config": sim.config.echo(),
    }


def cmd_simulate(config_path, out_dir, replicates=None) -> RunManifest:
    """Write simulated dataset CSV(s), truth JSON sidecar(s) and a manifest."""
    t0 = time.perf_counter()
    settings = load_config(config_path, overrides={"replicates": replicates})
    out = _Outputs(out_dir)
    reps = settings["replicates"]
    if reps < 1:
        raise ConfigError("replicates must be >= 1")
    if reps == 1:
        seeds = [settings["seed"]]
        prefixes = [""]
    else:
        seeds = [derive_seed(settings["seed"], r) for r in range(reps)]
        prefixes = [f"rep_{r:03d}/" for r in range(reps)]

    def one(args):
        seed, prefix = args
        return prefix, seed, generate_dataset(scenario_config(settings, seed=seed))

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        sims = list(pool.map(one, zip(seeds, prefixes)))
    censored = {}
    for prefix, seed, sim in sims:
        write_dataset(out.path(prefix + "data.csv"), sim.data)
        truth = _truth_payload(sim)
        truth["seed"] = seed
        write_json(out.path(prefix + "truth.json"), truth)
        censored[prefix or "."] = sim.n_censored
    manifest = RunManifest(
        "simulate", settings.echo(), seed=settings["seed"],
        input_checksum=_checksums(config=config_path),
        outputs=out.files, wall_time_s=time.perf_counter() - t0,
        results={"replicate_seeds": seeds, "n_censored": censored},
    )
    manifest.write(out.dir)
    return manifest


def _checksums(**paths):
    return {k: sha256_file(v) for k, v in paths.items() if v is not None}


def _load_data(data_path, settings):
    return read_dataset(data_path, header=settings["header"], c=settings["c"],
                        binary01=settings["binary01"])


def cmd_fit(data_path, config_path, out_dir, truth_path=None) -> RunManifest:
    """Fit the model and write partitions, similarities, traces, LPML and a manifest."""
    t0 = time.perf_counter()
    settings = load_config(config_path)
    data = _load_data(data_path, settings)
    cutoffs = cutoffs_for(settings, data.c)
    config = model_config(settings)
    controls = gibbs_controls(settings)
    chain = run_chain(data, cutoffs, config, controls)
    if not chain.valid:
        raise NumericalFailure(chain.error or "chain failed")
    est = estimate_coclustering(chain)
    out = _Outputs(out_dir)
    write_partition(out.path("rows.csv"), est.rows)
    write_partition(out.path("cols.csv"), est.cols)
    write_matrix(out.path("row_similarity.csv"), est.row_similarity)
    write_matrix(out.path("col_similarity.csv"), est.col_similarity)
    it = np.arange(chain.iterations_run)
    write_table(out.path("k_trace.csv"), ["iteration", "k_n", "k_p"], [it, chain.k_n, chain.k_p])
    kept = np.arange(controls.burn_in, controls.iterations, controls.thin)[:chain.n_draws]
    write_table(out.path("sigma_trace.csv"), ["iteration", "sigma1_sq", "sigma2_sq"],
                [kept, chain.sigma1_sq, chain.sigma2_sq])
    lpml_value = float(np.sum(chain.log_cpo()))
    results = {"lpml": lpml_value, "k_n_hat": est.rows.n_clusters, "k_p_hat": est.cols.n_clusters,
               "n": data.n, "p": data.p, "c": data.c, "draws": chain.n_draws}
    write_json(out.path("summary.json"), results)
    if truth_path is not None:
        results.update(_metrics(est.rows, est.cols, read_json(truth_path)))
    manifest = RunManifest(
        "fit", {**settings.echo(), "model": config.echo()}, seed=controls.seed,
        input_checksum=_checksums(data=data_path, config=config_path, truth=truth_path),
        outputs=out.files, wall_time_s=time.perf_counter() - t0, results=results,
    )
    manifest.write(out.dir)
    return manifest


def cmd_select_d(data_path, config_path, d_min, d_max, out_dir) -> RunManifest:
    """LPML over ``d_min..d_max``; writes ``lpml.csv`` and a manifest with ``best_d``."""
    t0 = time.perf_counter()
    if d_min < 1 or d_max < d_min:
        raise ConfigError("need 1 <= d_min <= d_max")
    settings = load_config(config_path)
    data = _load_data(data_path, settings)
    cutoffs = cutoffs_for(settings, data.c)
    report = select_d(data, cutoffs, model_config(settings), range(d_min, d_max + 1),
                      gibbs_controls(settings), workers=_workers())
    out = _Outputs(out_dir)
    ds = sorted(report.per_d)
    write_table(out.path("lpml.csv"), ["d", "lpml"], [ds, [report.per_d[d] for d in ds]])
    manifest = RunManifest(
        "select-d", settings.echo(), seed=settings["seed"],
        input_checksum=_checksums(data=data_path, config=config_path),
        outputs=out.files, wall_time_s=time.perf_counter() - t0,
        results={"best_d": report.best_d, "failed": {str(k): v for k, v in report.failed.items()}},
    )
    manifest.write(out.dir)
    return manifest


def _metrics(rows, cols, truth):
    true_rows = Partition(np.asarray(truth["rows"]))
    true_cols = Partition(np.asarray(truth["cols"]))
    return {
        "ari_rows": ari(rows, true_rows), "ari_cols": ari(cols, true_cols),
        "bari": bari(rows, cols, true_rows, true_cols),
        "k_n_hat": rows.n_clusters, "k_p_hat": cols.n_clusters,
        "k_n_true": true_rows.n_clusters, "k_p_true": true_cols.n_clusters,
    }


def cmd_evaluate(est_dir, truth_path, out_dir=None) -> RunManifest:
    """Compare estimated partitions in ``est_dir`` with a truth sidecar."""
    t0 = time.perf_counter()
    est_dir = Path(est_dir)
    truth = read_json(truth_path)
    rows = read_partition(est_dir / "rows.csv")
    cols = read_partition(est_dir / "cols.csv")
    metrics = _metrics(rows, cols, truth)
    out = _Outputs(out_dir or est_dir)
    write_json(out.path("evaluation.json"), metrics)
    manifest = RunManifest(
        "evaluate", {"est_dir": str(est_dir)}, seed=None,
        input_checksum=_checksums(truth=truth_path, rows=est_dir / "rows.csv",
                                  cols=est_dir / "cols.csv"),
        outputs=out.files, wall_time_s=time.perf_counter() - t0, results=metrics,
    )
    manifest.write(out.dir, "evaluate_manifest.json")
    return manifest


def cmd_prior_k(n, p, alpha1, alpha2, out_path=None) -> str:
    prior = prior_k_pmf(n, p, alpha1, alpha2)
    ks, probs = prior.as_arrays()
    lines = ["k,probability"] + [f"{int(k)},{float(pr)!r}" for k, pr in zip(ks, probs)]
    text = "\n".join(lines) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co3", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic datasets")
    s.add_argument("--config", required=False)
    s.add_argument("--out", required=True)
    s.add_argument("--replicates", type=int)

    f = sub.add_parser("fit", help="run the Gibbs sampler and estimate partitions")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--truth", help="truth JSON; adds ARI/BARI to the manifest")

    d = sub.add_parser("select-d", help="LPML over a range of latent dimensions")
    d.add_argument("--data", required=True)
    d.add_argument("--config")
    d.add_argument("--d-min", type=int, required=True)
    d.add_argument("--d-max", type=int, required=True)
    d.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score estimated partitions against truth")
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out")

    k = sub.add_parser("prior-k", help="prior pmf of the number of bivariate clusters")
    k.add_argument("--n", type=int, required=True)
    k.add_argument("--p", type=int, required=True)
    k.add_argument("--alpha1", type=float, default=1.0)
    k.add_argument("--alpha2", type=float, default=1.0)
    k.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            m = cmd_simulate(args.config, args.out, args.replicates)
        elif args.command == "fit":
            m = cmd_fit(args.data, args.config, args.out, args.truth)
        elif args.command == "select-d":
            m = cmd_select_d(args.data, args.config, args.d_min, args.d_max, args.out)
        elif args.command == "evaluate":
            m = cmd_evaluate(args.est, args.truth, args.out)
        else:
            cmd_prior_k(args.n, args.p, args.alpha1, args.alpha2, args.out)
            return EXIT_OK
    except IngestionError as exc:
        log.error("%s", exc)
        return EXIT_INGEST
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, OSError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("%s done in %.1fs: %s", m.subcommand, m.wall_time_s, ", ".join(m.outputs))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
