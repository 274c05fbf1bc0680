"""Command line: ``simulate``, ``run``, ``rank`` and ``report``.

Exit codes: 0 success, 2 usage or data error, 3 numerical failure.
Tables go to stdout, artifacts to files, logs to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .gcn_model import NumericalError
from .graph_data import CohortError, GraphError, load_cohort, threshold_and_rescale, validate_adjacency
from .inference import PipelineConfig, PipelineError, format_leverage, run_pipeline, write_report
from .intervention import InterventionError
from .synth_scm import PRESETS, ScmSpec, generate_cohort, preset, write_simulation

log = logging.getLogger("causal_gcn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig(PipelineConfig):
    features: str | None = None
    covariates: str | None = None
    labels: str | None = None
    adjacency: str | None = None
    output_dir: str = "run"
    tau: float | None = None
    target_density: float | None = None

    def pipeline(self) -> PipelineConfig:
        names = {f.name for f in fields(PipelineConfig)}
        return PipelineConfig(**{k: v for k, v in asdict(self).items() if k in names})


def default_threads() -> int:
    env = os.environ.get("CAUSAL_GCN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CAUSAL_GCN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.config:
        try:
            spec = ScmSpec.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise UsageError(f"invalid SCM config {args.config}: {exc}") from exc
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = preset(args.preset, seed=args.seed or 0, p=args.nodes)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    log.info("simulating %d subjects, p=%d, causal nodes %s", args.n, spec.p, list(spec.causal_nodes))
    ds, truth = generate_cohort(spec, args.n, n_mc=args.mc)
    for path in write_simulation(ds, truth, spec, args.out_dir):
        log.info("wrote %s", path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_FLAG_FIELDS = {
    "features": "features", "covariates": "covariates", "labels": "labels", "adjacency": "adjacency",
    "out_dir": "output_dir", "k_folds": "k_folds", "seed": "seed", "hidden": "hidden", "dropout": "dropout",
    "lr": "learning_rate", "ridge": "ridge", "epochs": "epochs", "batch_size": "batch_size",
    "n_pcs": "n_pcs", "pct_lo": "pct_lo", "pct_hi": "pct_hi", "bootstrap": "n_bootstrap", "alpha": "alpha",
    "conditioning": "conditioning", "tau": "tau", "target_density": "target_density", "threads": "threads",
}


def build_run_config(args) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise UsageError("config file must hold a flat JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
    if args.data_dir:
        d = Path(args.data_dir)
        for key in ("features", "covariates", "labels", "adjacency"):
            values[key] = str(d / f"{key}.csv")
    for flag, key in _FLAG_FIELDS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    for flag, key, val in (("batchnorm", "batchnorm", True), ("no_renormalize", "renormalize", False),
                           ("permissive", "strict", False), ("no_baselines", "baselines", False)):
        if getattr(args, flag):
            values[key] = val
    values.setdefault("threads", default_threads())
    if values.get("tau") is not None and values.get("target_density") is not None:
        raise UsageError("tau and target_density are mutually exclusive")
    missing = [k for k in ("features", "covariates", "labels", "adjacency") if not values.get(k)]
    if missing:
        raise UsageError(f"missing input paths: {missing} (use --data-dir or the individual flags)")
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def cmd_run(args) -> int:
    cfg = build_run_config(args)
    thresholding = cfg.tau is not None or cfg.target_density is not None
    ds = load_cohort(cfg.features, cfg.covariates, cfg.labels, cfg.adjacency, raw_adjacency=thresholding)
    if thresholding:
        res = threshold_and_rescale(ds.adjacency, tau=cfg.tau, target_density=cfg.target_density)
        validate_adjacency(res.adjacency)
        from dataclasses import replace

        ds = replace(ds, adjacency=res.adjacency)
        log.info("adjacency density %.4f after thresholding", res.density)
    log.info("loaded %d subjects, %d nodes, %d covariates", ds.n_subjects, ds.n_nodes, ds.n_covariates)
    pcfg = cfg.pipeline()
    if args.dry_run:
        from .graph_data import stratified_kfold

        stratified_kfold(ds.labels, pcfg.k_folds, pcfg.seed)
        log.info("dry run: configuration and data are valid")
        return EXIT_OK
    report = run_pipeline(ds, pcfg, keep_models=True)
    out = Path(cfg.output_dir)
    write_report(report, out)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote report to %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rank / report
# ---------------------------------------------------------------------------

RANK_HEADER = ("rank", "node", "100x|dAD|", "dAUC_self")


def _load_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(doc, dict) or not str(doc.get("version", "")).startswith("causal-gcn-report/"):
        raise UsageError(f"{path}: not a causal-gcn report")
    for key in ("effects", "ablation", "auc"):
        if key not in doc:
            raise UsageError(f"{path}: malformed report, missing {key!r}")
    return doc


def rank_table(doc: dict, top: int) -> list[tuple[str, ...]]:
    try:
        abl = {int(a["node_id"]): float(a["delta_auc_self"]) for a in doc["ablation"]}
        seen, rows = set(), []
        ad = {}
        for e in doc["effects"]:
            if e["cls"] == "AD":
                ad[int(e["node_id"])] = float(e["delta_mean"])
        for e in sorted(doc["effects"], key=lambda e: int(e["rank"])):
            j = int(e["node_id"])
            if j in seen:
                continue
            seen.add(j)
            rows.append((str(e["rank"]), e["node_name"], format_leverage(ad[j]), f"{abl.get(j, float('nan')):.6f}"))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed report: {exc}") from exc
    return rows[: max(top, 0)]


def _print_table(header, rows) -> None:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) if i == 1 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    print(line(header))
    for r in rows:
        print(line(r))


def cmd_rank(args) -> int:
    doc = _load_report(args.report)
    _print_table(RANK_HEADER, rank_table(doc, args.top))
    return EXIT_OK


def cmd_report(args) -> int:
    doc = _load_report(args.report)
    for key, label in (("auc_model", "causal GCN"), ("auc_mlp", "MLP baseline"), ("auc_gcn", "vanilla GCN")):
        a = doc["auc"].get(key) or {}
        if a.get("mean") is None:
            continue
        sd = a.get("sd")
        print(f"{label:<14} AUC {a['mean']:.3f}" + (f" +/- {sd:.3f}" if sd is not None else ""))
    conc = doc.get("concordance", {})
    rho = conc.get("spearman_abs_delta_vs_ablation")
    stab = conc.get("rank_stability_mean_pairwise_spearman")
    print(f"spearman(|dAD|, dAUC_self): {'n/a' if rho is None else f'{rho:.3f}'}")
    print(f"fold rank stability:        {'n/a' if stab is None else f'{stab:.3f}'}")
    agree = conc.get("fold_sign_agreement", [])
    if agree:
        print(f"nodes without fold sign reversal: {sum(agree)}/{len(agree)}")
    print()
    _print_table(RANK_HEADER, rank_table(doc, args.top))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-gcn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic cohort with ground-truth effects")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS, default="single-cause")
    g.add_argument("--config", help="ScmSpec JSON file")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--nodes", type=int, default=10, help="node count for presets")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--mc", type=int, default=20_000, help="Monte Carlo draws for the ground truth")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="cross-validated training and effect estimation")
    r.add_argument("--config", help="flat JSON config; flags override it")
    r.add_argument("--data-dir", help="directory holding features/covariates/labels/adjacency.csv")
    for name in ("features", "covariates", "labels", "adjacency"):
        r.add_argument(f"--{name}")
    r.add_argument("--out-dir")
    r.add_argument("--k-folds", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--hidden", type=int)
    r.add_argument("--dropout", type=float)
    r.add_argument("--lr", type=float)
    r.add_argument("--ridge", type=float)
    r.add_argument("--epochs", type=int)
    r.add_argument("--batch-size", type=int)
    r.add_argument("--batchnorm", action="store_true")
    r.add_argument("--n-pcs", type=int)
    r.add_argument("--pct-lo", type=float)
    r.add_argument("--pct-hi", type=float)
    r.add_argument("--bootstrap", type=int, help="bootstrap replicates B")
    r.add_argument("--alpha", type=float)
    r.add_argument("--conditioning", choices=("implicit", "explicit"))
    r.add_argument("--no-renormalize", action="store_true", help="keep original propagation entries when severing")
    r.add_argument("--tau", type=float, help="edge weight threshold")
    r.add_argument("--target-density", type=float, help="keep this fraction of edges")
    r.add_argument("--threads", type=int, help="default: CAUSAL_GCN_THREADS or logical CPU count")
    r.add_argument("--permissive", action="store_true", help="average over completed folds if some abort")
    r.add_argument("--no-baselines", action="store_true")
    r.add_argument("--dry-run", action="store_true", help="validate config and data only")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("rank", help="top-N effect table from report.json")
    k.add_argument("report")
    k.add_argument("--top", type=int, default=15)
    k.set_defaults(func=cmd_rank)

    o = sub.add_parser("report", help="summary of report.json")
    o.add_argument("report")
    o.add_argument("--top", type=int, default=15)
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CohortError, GraphError, InterventionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PipelineError as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.numeric else EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
