import os

import pandas as pd
import pytest
import yaml

from run_pipeline import main
from utils.survey_data import save_dataset


@pytest.fixture
def workspace(tmp_path, dataset, catalog):
    """2개국 x 40명 데이터, P1/P2 설명문, 작은 집단 크기의 설정 파일"""
    catalog_path = tmp_path / "questions.yaml"
    table_path = tmp_path / "respondents.csv"
    save_dataset(dataset, str(catalog_path), str(table_path))

    descriptors = {}
    for (qid, option), text in catalog.entries.items():
        descriptors.setdefault(qid, {})[option] = text
    descriptor_path = tmp_path / "descriptors.yaml"
    descriptor_path.write_text(yaml.safe_dump({
        "provenance": {"generator": "test", "prompt_variant": "modular"},
        "descriptors": descriptors,
    }), encoding="utf-8")

    config = {
        "countries": ["Aland", "Borduria"],
        "out_dir": str(tmp_path / "runs"),
        "dataset": {"question_catalog": str(catalog_path), "respondent_table": str(table_path),
                    "attribute_columns": ["age", "gender"]},
        "persona": {"items": ["P1", "P2"], "descriptor_catalog": str(descriptor_path),
                    "descriptor_prompts": None, "n": 8, "attributes": ["age", "gender"]},
        "backend": {"kind": "mock", "cache_path": None},
        "evaluation": {"map_loadings": None, "sample_sizes": [2, 5], "repeats": 2},
        "shapley": {"n_personas": 4},
    }
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return tmp_path, str(config_path)


def run(config_path, *args):
    return main(["--config", config_path, *args])


def new_dir(root, name):
    path = root / name
    path.mkdir()
    return str(path)


# =============================================================================
# ingest
# =============================================================================

def test_ingest(workspace, capsys):
    _, config_path = workspace
    assert run(config_path, "ingest") == 0
    out = capsys.readouterr().out
    assert "Aland" in out and "Borduria" in out
    assert "prompt_variant=modular" in out


def test_ingest_missing_table_fails(workspace, capsys):
    root, config_path = workspace
    os.remove(root / "respondents.csv")
    assert run(config_path, "ingest") == 1
    assert "❌" in capsys.readouterr().err


def test_unknown_config_key_fails(workspace, capsys):
    root, _ = workspace
    bad = root / "bad.yaml"
    bad.write_text("backend:\n  kindd: mock\n", encoding="utf-8")
    assert run(str(bad), "ingest") == 1
    assert "backend.kindd" in capsys.readouterr().err


# =============================================================================
# simulate -> calibrate -> evaluate -> export
# =============================================================================

def test_simulate_is_deterministic(workspace):
    root, config_path = workspace
    a, b = new_dir(root, "a"), new_dir(root, "b")
    assert run(config_path, "simulate", "--run", a) == 0
    assert run(config_path, "simulate", "--run", b) == 0
    for name in ("predictions.csv", "persona_predictions.csv"):
        assert (root / "a" / "predictions" / name).read_bytes() == (root / "b" / "predictions" / name).read_bytes()

    preds = pd.read_csv(root / "a" / "predictions" / "predictions.csv")
    assert set(preds["question_id"]) == {"Q1", "Q2"}
    assert set(preds["country"]) == {"Aland", "Borduria"}


def test_seed_flag_changes_run(workspace):
    root, config_path = workspace
    a, b = new_dir(root, "a"), new_dir(root, "b")
    assert run(config_path, "simulate", "--run", a) == 0
    assert run(config_path, "--seed", "1", "simulate", "--run", b) == 0
    persona_a = (root / "a" / "predictions" / "persona_predictions.csv").read_bytes()
    persona_b = (root / "b" / "predictions" / "persona_predictions.csv").read_bytes()
    assert persona_a != persona_b


def test_full_flow(workspace):
    root, config_path = workspace
    run_dir = new_dir(root, "run")
    for command in ("simulate", "calibrate", "evaluate", "sweep-temperature"):
        assert run(config_path, command, "--run", run_dir) == 0
    for kind in ("mae_lines", "variance_box", "temperature_curves"):
        assert run(config_path, "export", "--run", run_dir, kind) == 0

    out = root / "run"
    report = pd.read_csv(out / "calibration" / "calibration_report.csv")
    assert len(report) == 4
    summary = pd.read_csv(out / "evaluation" / "summary.csv")
    assert set(summary["method"]) == {"value", "value_calibrated"}
    assert (out / "evaluation" / "best_method.csv").exists()
    assert (out / "evaluation" / "pairwise_tests.csv").exists()
    curves = pd.read_csv(out / "exports" / "temperature_curves.csv")
    assert set(curves["metric"]) == {"mae", "wasserstein"}

    with open(out / "manifest.yaml", encoding="utf-8") as f:
        manifest = yaml.safe_load(f)
    assert manifest["commands"][:4] == ["simulate", "calibrate", "evaluate", "sweep-temperature"]
    assert manifest["config"]["countries"] == ["Aland", "Borduria"]
    assert config_path in manifest["inputs"]


def test_export_needs_producing_command(workspace, capsys):
    root, config_path = workspace
    run_dir = new_dir(root, "run")
    assert run(config_path, "export", "--run", run_dir, "mae_lines") == 1
    assert "Report not found" in capsys.readouterr().err


def test_commands_need_existing_run(workspace):
    root, config_path = workspace
    assert run(config_path, "evaluate", "--run", str(root / "nowhere")) == 1


# =============================================================================
# country 모드 / 지도 / Shapley / sweep-n
# =============================================================================

def test_country_mode_and_map_points(workspace):
    root, config_path = workspace
    loadings = root / "loadings.yaml"
    loadings.write_text(yaml.safe_dump({"axes": ["x", "y"], "offsets": [0.0, 0.0],
                                        "loadings": {"P1": [1.0, 0.0], "P2": [0.0, 1.0]}}), encoding="utf-8")
    with open(config_path, encoding="utf-8") as f:
        config = yaml.safe_load(f)
    config["evaluation"]["map_loadings"] = str(loadings)
    config_path = str(root / "country.yaml")
    with open(config_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f)

    run_dir = new_dir(root, "run")
    assert run(config_path, "simulate", "--run", run_dir, "--mode", "country", "-n", "0") == 0
    preds = pd.read_csv(root / "run" / "predictions" / "predictions.csv")
    assert set(preds["question_id"]) == {"Q1", "Q2", "P1", "P2"}
    assert set(preds["method"]) == {"country"}

    assert run(config_path, "export", "--run", run_dir, "map_points") == 0
    points = pd.read_csv(root / "run" / "exports" / "map_points.csv")
    assert set(points["source"]) == {"country", "human"}
    assert (points["n_items"] == 2).all()


def test_map_points_needs_loadings(workspace):
    root, config_path = workspace
    run_dir = new_dir(root, "run")
    assert run(config_path, "simulate", "--run", run_dir) == 0
    assert run(config_path, "export", "--run", run_dir, "map_points") == 1


def test_shapley_command(workspace):
    root, config_path = workspace
    run_dir = new_dir(root, "run")
    assert run(config_path, "shapley", "--run", run_dir) == 0
    table = pd.read_csv(root / "run" / "shapley" / "shapley_report.csv")
    assert len(table) == 6
    assert set(table["item"]) == {"P1", "P2", "MEAN"}


def test_sweep_n_creates_run_dir(workspace):
    root, config_path = workspace
    assert run(config_path, "sweep-n", "--question", "Q1") == 0
    (run_dir,) = list((root / "runs").iterdir())
    band = pd.read_csv(run_dir / "sweeps" / "sample_size_band.csv")
    assert list(band["n"]) == [2, 5, 2, 5]
    assert set(band["country"]) == {"Aland", "Borduria"}

    assert run(config_path, "export", "--run", str(run_dir), "sample_size_curve") == 0


def test_sweep_n_without_surviving_questions_fails(workspace, capsys):
    root, config_path = workspace
    with open(config_path, encoding="utf-8") as f:
        config = yaml.safe_load(f)
    config["dataset"]["max_missing_fraction"] = 0.0
    strict_path = str(root / "strict.yaml")
    with open(strict_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f)

    assert run(strict_path, "sweep-n") == 1
    err = capsys.readouterr().err
    assert "❌" in err
    assert "--question" in err
