"""Pipeline orchestration and command-line entry points.

Subcommands: synth, prune, map, train, predict, eval, pipeline. The
two-stage pipeline maps each online-B workload onto the offline repository,
trains one predictor per target on the augmented table, predicts the
held-out row, then repeats for online-C against the repository extended
with the mapped B rows.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import cluster, evaluate, factors, ingest, mapping, predict, synth
from .errors import ConfigError, DataError, DbtuneError, NumericalError


@dataclass(frozen=True)
class PipelineConfig:
    manifest: str = ""
    method: str = "kmeans"
    k_min: int = 2
    k_max: int = 15
    factor_cap: int = factors.DEFAULT_FACTOR_CAP
    predictor: str = "gpr"
    alpha: float = 1e-1
    trees: int = 200
    depth: int = 50
    hidden: int = 64
    epochs: int = 500
    map_score: str = "euclid"
    n_map: int = 5
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.method not in ("kmeans", "gmm"):
            raise ConfigError(f"method must be kmeans or gmm, got {self.method!r}")
        if self.predictor not in ("gpr", "rf", "nn"):
            raise ConfigError(f"predictor must be gpr, rf or nn, got {self.predictor!r}")
        if self.map_score not in mapping.SCORE_VARIANTS:
            raise ConfigError(f"map_score must be one of {mapping.SCORE_VARIANTS}")
        if self.k_min < 2 or self.k_max < self.k_min:
            raise ConfigError(f"bad k range [{self.k_min}, {self.k_max}]")


def _stage(name):
    """Context that prefixes propagated errors with the failing stage name."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, DbtuneError):
                raise type(exc)(f"[{name}] {exc}") from exc
            return False
    return _Ctx()


def _workload_seed(base_seed: int, workload_id: str) -> int:
    return base_seed + zlib.crc32(workload_id.encode()) % 100000


def _load_and_clean(config: PipelineConfig, out: Path) -> ingest.Corpus:
    with _stage("ingest"):
        corpus = ingest.load_corpus_from_manifest(config.manifest)
        corpus, dropped = ingest.drop_constant_columns(corpus)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dropped_columns.txt").write_text("".join(n + "\n" for n in dropped))
    return corpus


def run_prune(config: PipelineConfig, corpus: ingest.Corpus | None = None
              ) -> cluster.PrunedMetricSet:
    """Factor the offline metrics, cluster loadings and pick representatives."""
    out = Path(config.out)
    if corpus is None:
        corpus = _load_and_clean(config, out)
    with _stage("factors"):
        x = factors.build_metric_matrix(list(corpus.offline))
        model = factors.fit_factors(x)
        model = factors.retain_significant(model, config.factor_cap)
    (out / "loadings.csv").write_text(factors.export_loadings_csv(model))
    (out / "eigenvalues.csv").write_text(factors.export_eigenvalues_csv(model))

    n_metrics = len(model.metric_names)
    if n_metrics < 2:
        warnings.warn("only one metric available; cluster sweep skipped", stacklevel=2)
        pruned = cluster.PrunedMetricSet(metric_names=model.metric_names, cluster_of=(0,))
    else:
        k_max = min(config.k_max, n_metrics)
        ks = tuple(range(config.k_min, k_max + 1))
        if not ks:
            ks = (2,)
        with _stage("cluster"):
            sel = cluster.sweep_k(model.points, config.method, ks, config.seed)
            pruned = cluster.select_representatives(sel.model, model)
        (out / "cluster_report.csv").write_text(sel.report_csv())
    (out / "pruned_metrics.txt").write_text(
        "".join(n + "\n" for n in pruned.metric_names))
    return pruned


def _train_predictor(config: PipelineConfig, features: np.ndarray,
                     targets: np.ndarray, seed: int):
    if config.predictor == "gpr":
        return predict.gpr_fit(features, targets, config.alpha)
    if config.predictor == "rf":
        return predict.rf_fit(features, targets, config.trees, config.depth, seed)
    return predict.mlp_fit(features, targets, predict.MlpConfig(
        hidden_units=config.hidden, epochs=config.epochs, seed=seed))


def _map_train_predict(config, sources, targets, pruned, scaler, stage_name):
    """Map each target onto the sources, train on the augmented table and
    predict its held-out validation row."""
    points = []
    results = []
    map_tables = []
    for table in sorted(targets, key=lambda t: t.workload_id):
        wid = table.workload_id
        with _stage(f"{stage_name}/{wid}"):
            map_part, val_part = ingest.split_map_validation(table, config.n_map)
            res = mapping.map_and_augment(sources, map_part, pruned, scaler,
                                          config.map_score)
            feats = predict.build_features(res.augmented, pruned, scaler)
            model = _train_predictor(config, feats, res.augmented.latency,
                                     _workload_seed(config.seed, wid))
            val_feats = predict.build_features(val_part, pruned, scaler)
            pred = predict.predict_with(model, val_feats)
        points.append((wid, float(val_part.latency[0]), float(pred[0])))
        results.append(res)
        map_tables.append(map_part)
    return points, results, map_tables


def run_two_stage(config: PipelineConfig) -> list[evaluate.EvalReport]:
    """Two-stage latency prediction over the online-B and online-C groups."""
    out = Path(config.out)
    corpus = _load_and_clean(config, out)
    pruned = run_prune(config, corpus)
    with _stage("scaler"):
        scaler = predict.fit_scaler(list(corpus.offline), corpus.schema)

    offline = list(corpus.offline)
    if not corpus.online_b or not corpus.online_c:
        raise DataError("two-stage pipeline needs online_b and online_c groups")

    points_b, results_b, map_tables_b = _map_train_predict(
        config, offline, corpus.online_b, pruned, scaler, "stage1")
    stage1 = evaluate.EvalReport(f"{config.predictor}_stage1", tuple(points_b))

    # stage-2 repository: offline plus every mapped B table
    repo = offline + map_tables_b
    points_c, results_c, _ = _map_train_predict(
        config, repo, corpus.online_c, pruned, scaler, "stage2")
    stage2 = evaluate.EvalReport(f"{config.predictor}_stage2", tuple(points_c))

    reports = [stage1, stage2]
    (out / "map_report.csv").write_text(
        mapping.mapping_report_csv(results_b + results_c))
    for report in reports:
        (out / f"predictions_{report.model_name}.csv").write_text(
            report.predictions_csv())
    csv_text, aligned = evaluate.compare_models(reports)
    (out / "summary.csv").write_text(csv_text)
    (out / "summary.txt").write_text(aligned)
    return reports


def run_eval(config: PipelineConfig, predictions_dir) -> str:
    """Recompute MAPE/MSE from prediction CSVs and render the comparison."""
    pdir = Path(predictions_dir)
    files = sorted(pdir.glob("predictions_*.csv"))
    if not files:
        raise DataError(f"no predictions_*.csv files in {pdir}")
    reports = []
    for f in files:
        name = f.stem.removeprefix("predictions_")
        with _stage(f"eval/{f.name}"):
            reports.append(evaluate.parse_predictions_csv(f.read_text(), name))
    csv_text, aligned = evaluate.compare_models(reports)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(csv_text)
    (out / "summary.txt").write_text(aligned)
    return aligned


# ---------------------------------------------------------------------------
# argparse plumbing
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--manifest")
    p.add_argument("--method", choices=["kmeans", "gmm"])
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--factor-cap", dest="factor_cap", type=int)
    p.add_argument("--predictor", choices=["gpr", "rf", "nn"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--map-score", dest="map_score", choices=list(mapping.SCORE_VARIANTS))
    p.add_argument("--n-map", dest="n_map", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
        unknown = set(doc) - {f.name for f in fields(PipelineConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(doc)
    for f in fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            merged[f.name] = v
    return PipelineConfig(**merged)


def _cmd_synth(args) -> int:
    spec = synth.SynthSpec.from_json(args.spec) if args.spec else synth.SynthSpec()
    if args.seed is not None:
        spec = synth.SynthSpec(**{**spec.__dict__, "seed": args.seed})
    corpus, truth = synth.generate_corpus(spec)
    manifest = synth.write_corpus(corpus, args.out)
    (Path(args.out) / "ground_truth.json").write_text(json.dumps({
        "latent_of_metric": list(truth.latent_of_metric),
        "nearest_source_of": truth.nearest_source_of,
        "planted_source_of": truth.planted_source_of,
        "latency_params": truth.latency_params,
    }, indent=2) + "\n")
    print(manifest)
    return 0


def _cmd_prune(args) -> int:
    config = build_config(args)
    if not config.manifest:
        raise ConfigError("prune requires --manifest")
    pruned = run_prune(config)
    for name in pruned.metric_names:
        print(name)
    return 0


def _read_pruned(path) -> cluster.PrunedMetricSet:
    names = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not names:
        raise DataError(f"pruned metric file {path} is empty")
    return cluster.PrunedMetricSet(metric_names=tuple(names),
                                   cluster_of=tuple(range(len(names))))


def _cmd_map(args) -> int:
    config = build_config(args)
    if not config.manifest:
        raise ConfigError("map requires --manifest")
    out = Path(config.out)
    corpus = _load_and_clean(config, out)
    pruned = _read_pruned(args.pruned)
    scaler = predict.fit_scaler(list(corpus.offline), corpus.schema)
    results = []
    for table in list(corpus.online_b) + list(corpus.online_c):
        results.append(mapping.map_and_augment(
            list(corpus.offline), table, pruned, scaler, config.map_score))
    text = mapping.mapping_report_csv(results)
    (out / "map_report.csv").write_text(text)
    print(text, end="")
    return 0


def _cmd_train(args) -> int:
    config = build_config(args)
    if not config.manifest:
        raise ConfigError("train requires --manifest")
    out = Path(config.out)
    corpus = _load_and_clean(config, out)
    pruned = _read_pruned(args.pruned)
    scaler = predict.fit_scaler(list(corpus.offline), corpus.schema)
    feats = np.vstack([predict.build_features(t, pruned, scaler)
                       for t in corpus.offline])
    targets = np.concatenate([t.latency for t in corpus.offline])
    model = _train_predictor(config, feats, targets, config.seed)
    predict.save_model(model, out / "model.json")
    (out / "preprocess.json").write_text(json.dumps({
        "pruned_metrics": list(pruned.metric_names),
        "scaler_means": scaler.means.tolist(),
        "scaler_stds": scaler.stds.tolist(),
        "n_knobs": scaler.n_knobs,
        "constant_features": list(scaler.constant_features),
    }) + "\n")
    print(out / "model.json")
    return 0


def _cmd_predict(args) -> int:
    config = build_config(args)
    if not config.manifest:
        raise ConfigError("predict requires --manifest")
    model_dir = Path(args.model_dir)
    model = predict.load_model(model_dir / "model.json")
    pre = json.loads((model_dir / "preprocess.json").read_text())
    scaler = predict.StandardScaler(
        means=np.array(pre["scaler_means"]), stds=np.array(pre["scaler_stds"]),
        n_knobs=pre["n_knobs"], constant_features=tuple(pre["constant_features"]))
    pruned = cluster.PrunedMetricSet(
        metric_names=tuple(pre["pruned_metrics"]),
        cluster_of=tuple(range(len(pre["pruned_metrics"]))))
    corpus = ingest.load_corpus_from_manifest(config.manifest)
    corpus, _ = ingest.drop_constant_columns(corpus)
    points = []
    for table in corpus.group(args.group):
        feats = predict.build_features(table, pruned, scaler)
        preds = predict.predict_with(model, feats)
        for i in range(table.n_rows):
            points.append((table.workload_id, float(table.latency[i]), float(preds[i])))
    if not points:
        raise DataError(f"no rows in group {args.group!r}")
    report = evaluate.EvalReport(config.predictor, tuple(points))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"predictions_{config.predictor}.csv"
    path.write_text(report.predictions_csv())
    print(path)
    return 0


def _cmd_eval(args) -> int:
    config = build_config(args)
    print(run_eval(config, args.predictions_dir), end="")
    return 0


def _cmd_pipeline(args) -> int:
    config = build_config(args)
    if not config.manifest:
        raise ConfigError("pipeline requires --manifest")
    reports = run_two_stage(config)
    _, aligned = evaluate.compare_models(reports)
    print(aligned, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbtune",
        description="Automated DBMS-tuning pipeline: metric pruning, workload "
                    "mapping and latency prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prune", help="factor + cluster metrics, emit pruned set")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("map", help="map online workloads onto the offline repository")
    _add_config_flags(p)
    p.add_argument("--pruned", required=True, help="pruned metric list file")
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("train", help="train one predictor on the offline corpus")
    _add_config_flags(p)
    p.add_argument("--pruned", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict latency with a saved model")
    _add_config_flags(p)
    p.add_argument("--model-dir", required=True)
    p.add_argument("--group", default="online_b", choices=list(ingest.GROUP_NAMES))
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="recompute metrics from prediction CSVs")
    _add_config_flags(p)
    p.add_argument("--predictions-dir", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run the full two-stage pipeline")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
