#!/usr/bin/env python3
"""
가치관 페르소나 설문 시뮬레이션 파이프라인 (CLI)

사용 예:
    python datasets/make_demo_data.py
    python run_pipeline.py ingest
    python run_pipeline.py --backend mock simulate
    python run_pipeline.py calibrate --run runs/<run>
    python run_pipeline.py evaluate --run runs/<run>
    python run_pipeline.py export --run runs/<run> mae_lines

출력 디렉토리:
    runs/<timestamp>-<config digest>/
        manifest.yaml
        predictions/   calibration/   evaluation/   shapley/   sweeps/   exports/
"""
import argparse
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import yaml

from calibration.temperature_fit import (
    DEFAULT_SWEEP_GRID,
    DEFAULT_T_GRID,
    apply_calibration,
    fit_temperature_loo,
    temperature_sweep,
    write_calibration_report,
)
from experiment_validation.cultural_map import load_map_projection, map_points_table
from experiment_validation.metrics import (
    cells_from_frame,
    cells_to_frame,
    evaluate_predictions,
    guidance_box_table,
    mae_lines_table,
    question_scatter_table,
    summarize_cells,
    variance_box_table,
)
from experiment_validation.shapley_attribution import EvalContext, country_shapley, write_shapley_report
from experiment_validation.significance_tests import best_method_table, pairwise_method_tests
from simulation.population_simulation import (
    load_prediction_dump,
    sample_size_band,
    simulate_population,
    sweep_sample_size,
    write_prediction_dump,
)
from utils.logging_utils import get_logger
from utils.output_files import file_digest, write_table, write_yaml
from utils.persona_generator import (
    PERSONA_MODES,
    catalog_prompt_variant,
    load_descriptor_catalog,
    load_descriptor_prompt_variants,
    sample_population,
)
from utils.prompts import load_guidance_templates
from utils.run_config import RunConfig, load_config
from utils.scoring_backend import build_backend
from utils.survey_data import country_counts, filter_questions, human_distribution, load_dataset

logger = get_logger("cli")

ARTIFACT_VERSION = "0.3.0"
EXPORT_KINDS = ("mae_lines", "variance_box", "sample_size_curve", "temperature_curves", "map_points",
                "question_scatter", "guidance_box")


def banner(title: str) -> None:
    print(f"\n{'=' * 70}", flush=True)
    print(title, flush=True)
    print(f"{'=' * 70}", flush=True)


# =============================================================================
# 1. 실행 디렉토리 / Manifest
# =============================================================================

@dataclass
class RunManifest:
    artifact_version: str
    config: dict
    config_digest: str
    created: str
    inputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    commands: List[str] = field(default_factory=list)


def new_run_dir(cfg: RunConfig) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    base = os.path.join(cfg.out_dir, f"{stamp}-{cfg.digest()[:8]}")
    run_dir, suffix = base, 1
    while os.path.exists(run_dir):
        suffix += 1
        run_dir = f"{base}-{suffix}"
    os.makedirs(run_dir)
    return run_dir


def input_digests(cfg: RunConfig, config_path: Optional[str]) -> Dict[str, str]:
    paths = [cfg.dataset.question_catalog, cfg.dataset.respondent_table, cfg.persona.descriptor_catalog,
             cfg.persona.descriptor_prompts, cfg.prompt.guidance_file, cfg.evaluation.map_loadings, config_path]
    return {p: file_digest(p) for p in paths if p and os.path.exists(p)}


def record_stage(run_dir: str, cfg: RunConfig, config_path: Optional[str], stage: str, seconds: float) -> None:
    """manifest.yaml 갱신 (없으면 생성)"""
    path = os.path.join(run_dir, "manifest.yaml")
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            manifest = RunManifest(**(yaml.safe_load(f) or {}))
    else:
        manifest = RunManifest(
            artifact_version=ARTIFACT_VERSION,
            config=cfg.to_dict(),
            config_digest=cfg.digest(),
            created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
    manifest.inputs.update(input_digests(cfg, config_path))
    manifest.timings[stage] = round(seconds, 3)
    manifest.commands.append(stage)
    write_yaml(asdict(manifest), path)


# =============================================================================
# 2. 공통 입력
# =============================================================================

def load_inputs(cfg: RunConfig):
    ds = load_dataset(cfg.dataset.question_catalog, cfg.dataset.respondent_table, cfg.dataset.attribute_columns)
    questions = {q.id: q for q in ds.questions}
    return ds, questions


def evaluation_questions(cfg: RunConfig, ds, mode: Optional[str] = None) -> List[str]:
    if cfg.evaluation.questions:
        unknown = [q for q in cfg.evaluation.questions if q not in set(ds.question_ids)]
        if unknown:
            raise ValueError(f"evaluation.questions not in catalog: {unknown}")
        return list(cfg.evaluation.questions)
    kept = filter_questions(ds, cfg.countries, cfg.dataset.max_missing_fraction)
    if (mode or cfg.prompt.mode) not in PERSONA_MODES:
        return kept
    persona_items = set(cfg.persona.items)
    return [qid for qid in kept if qid not in persona_items]


def human_table(ds, countries: Sequence[str], qids: Sequence[str]):
    return {(c, q): human_distribution(ds, q, c) for c in countries for q in qids}


def method_label(mode: str, guidance_key: str, n_keys: int) -> str:
    return mode if n_keys == 1 else f"{mode}@{guidance_key}"


def make_backend(cfg: RunConfig, questions):
    return build_backend(
        cfg.backend.kind,
        questions,
        model_id=cfg.backend.model,
        base_url=cfg.backend.base_url,
        strategy=cfg.backend.strategy,
        rps=cfg.backend.rps,
        max_retries=cfg.backend.max_retries,
        mock_gamma=cfg.mock.gamma,
        mock_mean_rule=cfg.mock.mean_rule,
        cache_path=cfg.backend.cache_path,
    )


def persona_catalog(cfg: RunConfig, questions, mode: str):
    if mode != "value":
        return None
    catalog = load_descriptor_catalog(cfg.persona.descriptor_catalog)
    catalog.validate(questions, cfg.persona.items)
    return catalog


def require_run_dir(run_dir: Optional[str]) -> str:
    if not run_dir:
        raise ValueError("This command needs --run <run directory>")
    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"Run directory not found: {run_dir}")
    return run_dir


def load_all_predictions(run_dir: str, include_calibrated: bool = True):
    predictions = load_prediction_dump(os.path.join(run_dir, "predictions"))
    calibrated_dir = os.path.join(run_dir, "calibration", "predictions")
    if include_calibrated and os.path.isdir(calibrated_dir):
        predictions += load_prediction_dump(calibrated_dir)
    return predictions


# =============================================================================
# 3. 명령
# =============================================================================

def cmd_ingest(cfg: RunConfig) -> dict:
    banner("📋 Dataset summary")
    ds, questions = load_inputs(cfg)
    counts = dict(sorted(country_counts(ds).items()))
    print(f"Questions: {len(ds.questions)}  Respondents: {len(ds.respondents)}")
    for country, n in counts.items():
        marker = "✅" if country in cfg.countries else "  "
        print(f"  {marker} {country:20s} {n:6d}")

    kept = filter_questions(ds, cfg.countries, cfg.dataset.max_missing_fraction)
    print(f"\nQuestions with < {cfg.dataset.max_missing_fraction:.0%} missing in every target country "
          f"({len(kept)}/{len(ds.questions)}):")
    print("  " + ", ".join(kept))

    if os.path.exists(cfg.persona.descriptor_catalog):
        catalog = load_descriptor_catalog(cfg.persona.descriptor_catalog)
        catalog.validate(questions, cfg.persona.items)
        print(f"\n✅ Descriptor catalog covers {len(cfg.persona.items)} persona items ({catalog.provenance})")
        variant = catalog_prompt_variant(catalog)
        if cfg.persona.descriptor_prompts and variant is not None:
            variants = load_descriptor_prompt_variants(cfg.persona.descriptor_prompts)
            if variant in variants:
                print(f"   prompt variant: {variant} (known variants: {', '.join(variants)})")
            else:
                logger.warning(f"Catalog prompt variant '{variant}' not in {cfg.persona.descriptor_prompts}")
    return {"respondents": counts, "questions": kept}


def cmd_simulate(cfg: RunConfig, run_dir: str) -> List:
    banner(f"🚀 Simulating: mode={cfg.prompt.mode}, backend={cfg.backend.kind}, n={cfg.persona.n}")
    ds, questions = load_inputs(cfg)
    qids = evaluation_questions(cfg, ds)
    templates = load_guidance_templates(cfg.prompt.guidance_file)
    keys = cfg.guidance_keys
    for key in keys:
        if key not in templates:
            raise ValueError(f"Unknown guidance key: {key} (available: {sorted(templates)})")
    mode = cfg.prompt.mode
    catalog = persona_catalog(cfg, questions, mode)
    backend = make_backend(cfg, questions)

    predictions = []
    for country in cfg.countries:
        n = cfg.persona.n if mode in PERSONA_MODES else 0
        pop = sample_population(ds, country, cfg.persona.items, catalog, n, cfg.seed,
                                mode=mode if mode in PERSONA_MODES else "value",
                                include_nationality=cfg.persona.include_nationality,
                                attributes=cfg.persona.attributes)
        for key in keys:
            for qid in qids:
                pred = simulate_population(pop, questions[qid], templates[key], mode, backend,
                                           max_workers=cfg.max_workers, model_id=cfg.backend.model,
                                           progress=True)
                predictions.append(_relabel(pred, method_label(mode, key, len(keys))))
        print(f"✅ {country}: {len(qids) * len(keys)} questions", flush=True)

    write_prediction_dump(predictions, os.path.join(run_dir, "predictions"))
    hits = getattr(backend, "hits", None)
    if hits is not None:
        print(f"📦 Cache: {backend.hits} hits, {backend.misses} misses")
    return predictions


def _relabel(pred, label: str):
    return pred if pred.method == label else replace(pred, method=label)


def _group_by_method(predictions) -> Dict[Tuple[str, str], List]:
    groups: Dict[Tuple[str, str], List] = {}
    for pred in predictions:
        groups.setdefault((pred.method, pred.model), []).append(pred)
    return groups


def _per_question(preds, human) -> Tuple[Dict[str, List], Dict[str, List]]:
    by_q_pred: Dict[str, List] = {}
    by_q_human: Dict[str, List] = {}
    for pred in sorted(preds, key=lambda p: (p.question_id, p.country)):
        by_q_pred.setdefault(pred.question_id, []).append(pred)
        by_q_human.setdefault(pred.question_id, []).append(human[(pred.country, pred.question_id)])
    return by_q_pred, by_q_human


def cmd_calibrate(cfg: RunConfig, run_dir: str) -> pd.DataFrame:
    banner("🌡️  Leave-one-out temperature calibration")
    ds, questions = load_inputs(cfg)
    predictions = load_all_predictions(run_dir, include_calibrated=False)
    countries = sorted({p.country for p in predictions})
    qids = sorted({p.question_id for p in predictions})
    human = human_table(ds, countries, qids)
    grid = cfg.calibration.grid or DEFAULT_T_GRID

    reports, fits, calibrated_all = [], [], []
    for (method, model), preds in sorted(_group_by_method(predictions).items()):
        by_q_pred, by_q_human = _per_question(preds, human)
        fit = fit_temperature_loo(by_q_pred, by_q_human, grid, cfg.calibration.criterion)
        calibrated, report = apply_calibration(preds, fit, human, questions)
        calibrated_all.extend(calibrated)
        reports.append(report)
        for fold in fit.folds:
            fits.append({"method": method, "model": model, "question_id": fold.held_out, "T": fold.T,
                         "criterion": fit.objective, "train_criterion": fold.train_criterion})
        print(f"✅ {method} / {model}: T per question "
              + ", ".join(f"{q}={t:.3g}" for q, t in fit.per_question_T.items()))

    out = os.path.join(run_dir, "calibration")
    report = pd.concat(reports, ignore_index=True) if reports else pd.DataFrame()
    write_calibration_report(report, os.path.join(out, "calibration_report.csv"))
    write_table(pd.DataFrame(fits), os.path.join(out, "temperature_fits.csv"))
    write_prediction_dump(calibrated_all, os.path.join(out, "predictions"))
    return report


def cmd_evaluate(cfg: RunConfig, run_dir: str) -> pd.DataFrame:
    banner("📊 Evaluation")
    ds, questions = load_inputs(cfg)
    predictions = load_all_predictions(run_dir)
    countries = sorted({p.country for p in predictions})
    qids = sorted({p.question_id for p in predictions})
    human = human_table(ds, countries, qids)

    cells = evaluate_predictions(predictions, human, questions)
    summary = summarize_cells(cells)
    out = os.path.join(run_dir, "evaluation")
    write_table(cells_to_frame(cells), os.path.join(out, "cells.csv"))
    write_table(summary, os.path.join(out, "summary.csv"))

    methods = sorted({c.method for c in cells})
    if len(methods) >= 2:
        write_table(best_method_table(cells), os.path.join(out, "best_method.csv"))
        write_table(pairwise_method_tests(cells), os.path.join(out, "pairwise_tests.csv"))

    overall = summary[summary["level"] == "all"]
    print(f"{'method':30s} {'MAE':>8s} {'pred var':>9s} {'human var':>10s} {'W1':>8s}")
    for row in overall.to_dict("records"):
        print(f"{row['method']:30s} {row['mae']:8.4f} {row['pred_norm_variance']:9.4f} "
              f"{row['human_norm_variance']:10.4f} {row['wasserstein']:8.4f}")
    return summary


def cmd_shapley(cfg: RunConfig, run_dir: str) -> List:
    banner(f"🧩 Shapley attribution ({cfg.shapley.mode})")
    ds, questions = load_inputs(cfg)
    qids = evaluation_questions(cfg, ds, mode="value")
    templates = load_guidance_templates(cfg.prompt.guidance_file)
    guidance = templates[cfg.prompt.guidance_key]
    catalog = persona_catalog(cfg, questions, "value")
    backend = make_backend(cfg, questions)

    reports = []
    for country in cfg.countries:
        pop = sample_population(ds, country, cfg.persona.items, catalog, cfg.shapley.n_personas, cfg.seed,
                                include_nationality=cfg.persona.include_nationality)
        ctx = EvalContext(
            population=pop,
            questions=[questions[q] for q in qids],
            guidance=guidance,
            backend=backend,
            mode="value",
            max_workers=cfg.max_workers,
        )
        report = country_shapley(ds, ctx, mode=cfg.shapley.mode, n_permutations=cfg.shapley.n_permutations,
                                 seed=cfg.seed)
        reports.append(report)
        mean_phi = sum(report.values.values()) / len(report.items)
        print(f"✅ {country}: mean φ = {mean_phi:+.4f} (v(full)={report.v_full:.4f}, v(∅)={report.v_empty:.4f})")

    write_shapley_report(reports, os.path.join(run_dir, "shapley", "shapley_report.csv"))
    return reports


def cmd_sweep_n(cfg: RunConfig, run_dir: str, question: Optional[str]) -> pd.DataFrame:
    banner("📈 Sample-size sweep")
    ds, questions = load_inputs(cfg)
    mode = cfg.prompt.mode if cfg.prompt.mode in PERSONA_MODES else "value"
    if question is None:
        candidates = evaluation_questions(cfg, ds, mode)
        if not candidates:
            raise ValueError(
                "No evaluation question survives the missing-value filter "
                f"(dataset.max_missing_fraction={cfg.dataset.max_missing_fraction}); pass --question"
            )
        question = candidates[0]
    qid = question
    if qid not in questions:
        raise ValueError(f"Unknown question: {qid}")
    templates = load_guidance_templates(cfg.prompt.guidance_file)
    guidance = templates[cfg.prompt.guidance_key]
    catalog = persona_catalog(cfg, questions, mode)
    backend = make_backend(cfg, questions)

    tables, bands = [], []
    for country in cfg.countries:
        table = sweep_sample_size(
            ds, country, questions[qid], cfg.evaluation.sample_sizes, cfg.evaluation.repeats, cfg.seed,
            cfg.persona.items, catalog, guidance, backend, human_distribution(ds, qid, country),
            mode=mode, include_nationality=cfg.persona.include_nationality, max_workers=cfg.max_workers,
        )
        table.insert(0, "country", country)
        table.insert(1, "question_id", qid)
        band = sample_size_band(table)
        band.insert(0, "country", country)
        band.insert(1, "question_id", qid)
        tables.append(table)
        bands.append(band)
        print(f"✅ {country}: " + ", ".join(f"n={r['n']} MAE={r['mae_mean']:.4f}" for r in band.to_dict("records")))

    out = os.path.join(run_dir, "sweeps")
    table = pd.concat(tables, ignore_index=True)
    write_table(table, os.path.join(out, "sample_size.csv"))
    write_table(pd.concat(bands, ignore_index=True), os.path.join(out, "sample_size_band.csv"))
    return table


def cmd_sweep_temperature(cfg: RunConfig, run_dir: str) -> pd.DataFrame:
    banner("🌡️  Temperature sweep")
    ds, questions = load_inputs(cfg)
    predictions = load_all_predictions(run_dir, include_calibrated=False)
    countries = sorted({p.country for p in predictions})
    qids = sorted({p.question_id for p in predictions})
    human = human_table(ds, countries, qids)
    Ts = cfg.calibration.sweep_grid or DEFAULT_SWEEP_GRID

    tables = []
    for (method, model), preds in sorted(_group_by_method(predictions).items()):
        by_q_pred, by_q_human = _per_question(preds, human)
        table = temperature_sweep(by_q_pred, by_q_human, Ts)
        table.insert(0, "source_method", method)
        table.insert(1, "model", model)
        tables.append(table)
    table = pd.concat(tables, ignore_index=True)
    write_table(table, os.path.join(run_dir, "sweeps", "temperature.csv"))
    print(f"✅ {len(Ts)} temperatures x {len(tables)} (method, model) groups")
    return table


def _read(run_dir: str, *parts: str) -> pd.DataFrame:
    path = os.path.join(run_dir, *parts)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Report not found: {path} (run the producing command first)")
    return pd.read_csv(path)


def cmd_export(cfg: RunConfig, run_dir: str, kind: str) -> pd.DataFrame:
    banner(f"📤 Export: {kind}")
    if kind in ("mae_lines", "variance_box", "question_scatter", "guidance_box"):
        cells = cells_from_frame(_read(run_dir, "evaluation", "cells.csv"))
        table = {
            "mae_lines": mae_lines_table,
            "variance_box": variance_box_table,
            "question_scatter": question_scatter_table,
            "guidance_box": guidance_box_table,
        }[kind](cells)
    elif kind == "sample_size_curve":
        band = _read(run_dir, "sweeps", "sample_size_band.csv")
        table = band.melt(id_vars=["country", "question_id", "n"], var_name="statistic", value_name="mae")
    elif kind == "temperature_curves":
        sweep = _read(run_dir, "sweeps", "temperature.csv")
        table = sweep.melt(id_vars=["source_method", "model", "method", "T", "n_pairs"],
                           value_vars=["mae", "wasserstein"], var_name="metric", value_name="value")
    elif kind == "map_points":
        if not cfg.evaluation.map_loadings:
            raise ValueError("evaluation.map_loadings is not set")
        ds, _ = load_inputs(cfg)
        proj = load_map_projection(cfg.evaluation.map_loadings)
        predictions = [p for p in load_all_predictions(run_dir) if p.question_id in proj.loadings]
        if not predictions:
            raise ValueError("No predictions for map items; add them to evaluation.questions and re-run simulate")
        countries = sorted({p.country for p in predictions})
        qids = sorted({p.question_id for p in predictions})
        table = map_points_table(predictions, human_table(ds, countries, qids), proj)
    else:
        raise ValueError(f"Unknown export kind: {kind} (expected one of {EXPORT_KINDS})")

    path = write_table(table, os.path.join(run_dir, "exports", f"{kind}.csv"))
    print(f"📂 Saved to: {path} ({len(table)} rows)")
    return table


# =============================================================================
# 4. main
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Value-based persona survey simulation pipeline")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="override seed")
    parser.add_argument("--backend", choices=["http", "mock"], help="override backend.kind")
    parser.add_argument("--out", help="override out_dir (root of run directories)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate inputs and print a dataset summary")
    p.add_argument("--max-missing", type=float, help="override dataset.max_missing_fraction")

    p = sub.add_parser("simulate", help="simulate populations and write a prediction dump")
    p.add_argument("--run", help="existing run directory (default: new one)")
    p.add_argument("--mode", help="override prompt.mode")
    p.add_argument("-n", type=int, help="override persona.n")

    for name in ("calibrate", "evaluate", "sweep-temperature"):
        p = sub.add_parser(name)
        p.add_argument("--run", required=True, help="run directory with predictions/")

    p = sub.add_parser("shapley", help="per-item Shapley attribution")
    p.add_argument("--run", help="existing run directory (default: new one)")

    p = sub.add_parser("sweep-n", help="MAE as a function of the number of personas")
    p.add_argument("--run", help="existing run directory (default: new one)")
    p.add_argument("--question", help="question id (default: first evaluation question)")

    p = sub.add_parser("export", help="write a long-format plot table")
    p.add_argument("--run", required=True)
    p.add_argument("kind", choices=EXPORT_KINDS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "backend.kind": args.backend,
        "out_dir": args.out,
        "dataset.max_missing_fraction": getattr(args, "max_missing", None),
        "prompt.mode": getattr(args, "mode", None),
        "persona.n": getattr(args, "n", None),
    }
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            cmd_ingest(cfg)
            return 0

        run_dir = getattr(args, "run", None)
        if args.command in ("simulate", "shapley", "sweep-n") and not run_dir:
            run_dir = new_run_dir(cfg)
        run_dir = require_run_dir(run_dir)

        if args.command == "simulate":
            cmd_simulate(cfg, run_dir)
        elif args.command == "calibrate":
            cmd_calibrate(cfg, run_dir)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, run_dir)
        elif args.command == "shapley":
            cmd_shapley(cfg, run_dir)
        elif args.command == "sweep-n":
            cmd_sweep_n(cfg, run_dir, args.question)
        elif args.command == "sweep-temperature":
            cmd_sweep_temperature(cfg, run_dir)
        elif args.command == "export":
            cmd_export(cfg, run_dir, args.kind)

        record_stage(run_dir, cfg, args.config, args.command, time.perf_counter() - started)
        print(f"\n✅ Done: {run_dir}")
        return 0
    except (ValueError, RuntimeError, FileNotFoundError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
