"""Command-line entry point: ``dirichlet-nas {search,oracle,band,diagnose,eval}``.

Configuration comes from an optional YAML file; command-line flags override
it.  Every output embeds the resolved config and the package version.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from . import bench
from . import diagnostics as dg
from . import engine
from . import space as sp
from .errors import ConfigError, ContractError, NumericError
from .progressive import StageSpec
from .rng import stream

log = logging.getLogger("dirichlet_nas")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ARTIFACT = 4


@dataclass
class DatasetSpec:
    kind: str = "spirals"
    n: int = 4096
    noise: float = 0.1
    seed: int = 0

    def build(self) -> bench.ToyDataset:
        return bench.gen_dataset(self.kind, self.n, self.noise, self.seed)


@dataclass
class DiagnosticsSpec:
    eigenvalue: bool = False      # per-epoch dominant Hessian eigenvalue
    trace: bool = False           # per-epoch Hutchinson trace
    band: bool = False            # per-epoch exploration band (needs an oracle)
    band_samples: int = 100
    power_iters: int = 100
    trace_probes: int = 16


@dataclass
class OracleSpec:
    budget_steps: int = 500
    r_seeds: int = 3
    path: str | None = None       # table used for ranks and bands


@dataclass
class RunConfig:
    space: str = "micro"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    search: engine.SearchConfig = field(default_factory=engine.SearchConfig)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    out: str = "runs/default"
    workers: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search"] = self.search.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        known = {"space", "dataset", "search", "oracle", "diagnostics", "out", "workers"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            search = dict(d.get("search") or {})
            if isinstance(search.get("stages"), str):
                search["stages"] = StageSpec.parse(search["stages"])
            return cls(space=d.get("space", "micro"),
                       dataset=DatasetSpec(**(d.get("dataset") or {})),
                       search=engine.SearchConfig.from_dict(search),
                       oracle=OracleSpec(**(d.get("oracle") or {})),
                       diagnostics=DiagnosticsSpec(**(d.get("diagnostics") or {})),
                       out=d.get("out", "runs/default"), workers=int(d.get("workers", 1)))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> "RunConfig":
        spec = sp.get_space(self.space)
        if self.dataset.kind not in bench.DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.n < 64:
            raise ConfigError("dataset needs at least 64 samples")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.search.validate(spec)
        return self


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config) as f:
                raw = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    cfg = RunConfig.from_dict(raw)
    s = cfg.search
    if args.seed is not None:
        s.seed = args.seed
    if args.stage_schedule:
        s.stages = StageSpec.parse(args.stage_schedule)
    if args.lam is not None:
        s.lambda_anchor = args.lam
    if args.distance:
        s.distance = args.distance
    if args.out:
        cfg.out = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    if getattr(args, "oracle", None):
        cfg.oracle.path = args.oracle
    return cfg.validate()


def _provenance(cfg: RunConfig) -> dict:
    return {"version": __version__, "config": cfg.to_dict()}


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def _write_csv(path, cfg: RunConfig, rows, fields):
    # provenance on a leading comment line; read with comment="#"
    with open(path, "w") as f:
        f.write("# " + json.dumps(_provenance(cfg), sort_keys=True) + "\n")
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})


def _load_oracle(cfg: RunConfig, dataset) -> bench.OracleTable | None:
    if not cfg.oracle.path:
        return None
    return bench.OracleTable.load(cfg.oracle.path, dataset)


def _oracle_cfg(cfg: RunConfig) -> bench.DiscreteTrainConfig:
    return bench.DiscreteTrainConfig(budget_steps=cfg.oracle.budget_steps)


# hooks -----------------------------------------------------------------------------

def diagnostics_hook(cfg: RunConfig, dataset, table, rows: list):
    """Per-epoch instruments; they draw only from their own streams."""
    spec = sp.get_space(cfg.space)
    d = cfg.diagnostics
    seed = cfg.search.seed

    def hook(state, rec):
        row = {"epoch": rec["epoch"]}
        if d.eigenvalue or d.trace:
            f = dg.state_logits_loss(state, dataset, rng=stream(seed, "diag-masks", rec["epoch"]))
            mu = dg.state_mu(state)
            if d.eigenvalue:
                eig = dg.dominant_eigenvalue(f, mu, d.power_iters, rng=stream(seed, "diag-eig", rec["epoch"]))
                row.update(eigenvalue=eig.value, eig_converged=eig.converged)
            if d.trace:
                row["trace"] = dg.hessian_trace(f, mu, d.trace_probes, stream(seed, "diag-trace", rec["epoch"]))
        if d.band and table is not None:
            band = dg.exploration_band(state.betas(), spec, table.__getitem__, d.band_samples,
                                       stream(seed, "diag-band", rec["epoch"]), state.net.edge_ops)
            row.update(band_min=band["min"], band_max=band["max"], band_mean=band["mean"],
                       mean_arch_score=band["mean_arch_score"])
        rec["diagnostics"] = {k: v for k, v in row.items() if k != "epoch"}
        rows.append(row)
    return hook


# commands --------------------------------------------------------------------------

def cmd_search(cfg: RunConfig) -> int:
    spec = sp.get_space(cfg.space)
    dataset = cfg.dataset.build()
    table = _load_oracle(cfg, dataset)
    os.makedirs(cfg.out, exist_ok=True)
    rows: list = []
    hooks = []
    d = cfg.diagnostics
    if d.eigenvalue or d.trace or d.band:
        hooks.append(diagnostics_hook(cfg, dataset, table, rows))

    def save(state, path):
        d = engine.state_to_dict(state)
        d["provenance"] = _provenance(cfg)
        with open(path, "w") as f:
            json.dump(d, f)

    def stage_hook(state):
        save(state, os.path.join(cfg.out, f"checkpoint_stage{state.stage}.json"))

    state = engine.init_state(cfg.search, spec, dataset)
    try:
        genotype, traj, state = engine.run_search(cfg.search, spec, dataset, state=state,
                                                  epoch_hooks=hooks, stage_hook=stage_hook)
    except NumericError as exc:
        dump = os.path.join(cfg.out, "abort_state.json")
        save(state, dump)
        print(f"numeric failure: {exc}; state dumped to {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    prov = _provenance(cfg)
    _write_json(os.path.join(cfg.out, "genotype.json"), {**genotype.to_dict(), **prov})
    traj.write(os.path.join(cfg.out, "trajectory.jsonl"), header={"type": "header", **prov})
    summary = {"type": "summary", "genotype": genotype.to_dict(), "epochs": state.epoch,
               "final_eta_norm": float(np.linalg.norm(np.concatenate(state.etas()))), **prov}
    if table is not None:
        summary["oracle_accuracy"] = table[genotype]
        summary["oracle_rank"] = bench.rank_of(genotype, table)
    _write_json(os.path.join(cfg.out, "summary.json"), summary)
    if rows:
        _write_csv(os.path.join(cfg.out, "diagnostics.csv"), cfg, rows, dg.CSV_FIELDS)
    print(json.dumps({"genotype": genotype.key(), "names": genotype.names(),
                      "oracle_rank": summary.get("oracle_rank")}))
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    spec = sp.get_space(cfg.space)
    dataset = cfg.dataset.build()
    table = bench.build_oracle(spec, dataset, _oracle_cfg(cfg), cfg.oracle.r_seeds, cfg.workers)
    table.metadata["provenance"] = _provenance(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "oracle.json")
    table.save(path)
    best = table.best()
    print(json.dumps({"path": path, "entries": len(table.accuracies), "best": best.key(),
                      "best_accuracy": table[best]}))
    return 0


def cmd_band(cfg: RunConfig, checkpoint: str, n_samples: int) -> int:
    spec = sp.get_space(cfg.space)
    dataset = cfg.dataset.build()
    table = _load_oracle(cfg, dataset)
    if table is None:
        raise ContractError("band needs an oracle table (--oracle)")
    state = engine.load_checkpoint(checkpoint)
    band = dg.exploration_band(state.betas(), spec, table.__getitem__, n_samples,
                               stream(cfg.search.seed, "band-cli"), state.net.edge_ops)
    rows = [{"kind": "sample", "index": i, "genotype": g, "score": s}
            for i, (g, s) in enumerate(zip(band["genotypes"], band["scores"]))]
    rows.append({"kind": "mean_arch", "index": "", "genotype": band["mean_arch"],
                 "score": band["mean_arch_score"]})
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "band.csv")
    _write_csv(path, cfg, rows, ("kind", "index", "genotype", "score"))
    print(json.dumps({"path": path, "min": band["min"], "max": band["max"],
                      "mean_arch_score": band["mean_arch_score"]}))
    return 0


def cmd_diagnose(cfg: RunConfig, checkpoint: str) -> int:
    dataset = cfg.dataset.build()
    state = engine.load_checkpoint(checkpoint)
    seed, d = cfg.search.seed, cfg.diagnostics
    f = dg.state_logits_loss(state, dataset, rng=stream(seed, "diag-masks", state.epoch))
    mu = dg.state_mu(state)
    eig = dg.dominant_eigenvalue(f, mu, d.power_iters, rng=stream(seed, "diag-eig", state.epoch))
    tr = dg.hessian_trace(f, mu, d.trace_probes, stream(seed, "diag-trace", state.epoch))
    bound = dg.laplace_bound_check(state.betas(), f, n_mc=200, rng=stream(seed, "diag-bound"),
                                   probes=d.trace_probes)
    row = {"epoch": state.epoch, "eigenvalue": eig.value, "eig_converged": eig.converged, "trace": tr,
           "bound_lhs": bound["lhs"], "bound_lhs_se": bound["lhs_se"], "bound_rhs": bound["rhs"],
           "delta_used": bound["delta_used"], "psd_proxy": bound["psd_proxy"]}
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "diagnose.csv")
    _write_csv(path, cfg, [row], list(row))
    print(json.dumps({"path": path, **row}))
    return 0


def cmd_eval(cfg: RunConfig, genotype_file: str) -> int:
    dataset = cfg.dataset.build()
    with open(genotype_file) as f:
        genotype = sp.Genotype.from_dict(json.load(f))
    seeds = list(range(cfg.oracle.r_seeds))
    accs = [bench.train_discrete(genotype, dataset, seed=s, cfg=_oracle_cfg(cfg)) for s in seeds]
    print(json.dumps({"genotype": genotype.key(), "accuracy": float(np.mean(accs)), "per_seed": accs}))
    return 0


# argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("--stage-schedule", help='e.g. "25:2:4,25:1:2" (epochs:K:ops)')
    common.add_argument("--lambda", dest="lam", type=float, help="anchor strength")
    common.add_argument("--distance", choices=["eta-l2", "kl"])
    common.add_argument("--oracle", help="oracle table JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dirichlet-nas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("search", parents=[common], help="run the staged search")
    sub.add_parser("oracle", parents=[common], help="build the exhaustive oracle table")
    b = sub.add_parser("band", parents=[common], help="exploration band from a checkpoint")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--n", type=int, default=100)
    dg_ = sub.add_parser("diagnose", parents=[common], help="curvature diagnostics from a checkpoint")
    dg_.add_argument("--checkpoint", required=True)
    e = sub.add_parser("eval", parents=[common], help="train a discrete genotype")
    e.add_argument("--genotype", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        if args.command == "band":
            return cmd_band(cfg, args.checkpoint, args.n)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, args.checkpoint)
        return cmd_eval(cfg, args.genotype)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
