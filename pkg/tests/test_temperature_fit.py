import math

import numpy as np
import pandas as pd
import pytest

from calibration.temperature_fit import (
    DEFAULT_SWEEP_GRID,
    DEFAULT_T_GRID,
    CalibrationError,
    apply_calibration,
    calibrate_prediction,
    criterion_value,
    fit_temperature_loo,
    temperature_sweep,
    write_calibration_report,
)
from calibration.tilting import temperature_scale, tilt_mean_preserving
from simulation.population_simulation import PopulationPrediction
from utils.response_distribution import ResponseDistribution
from utils.survey_data import QuestionSpec


def dist(qid, probs):
    return ResponseDistribution.from_array(qid, range(1, len(probs) + 1), probs)


def prediction(d, country="Aland", method="value"):
    return PopulationPrediction(question_id=d.question_id, country=country, per_persona=(d,), aggregate=d,
                                expected_response=d.mean(), method=method, model="mock", n_personas=1,
                                persona_digests=("x",))


@pytest.fixture
def random_predictions():
    rng = np.random.default_rng(42)
    return {f"Q{i}": dist(f"Q{i}", rng.dirichlet(np.full(5, 2.0))) for i in range(6)}


def test_default_grids():
    assert len(DEFAULT_T_GRID) == 21
    assert DEFAULT_T_GRID[0] == pytest.approx(0.25) and DEFAULT_T_GRID[-1] == pytest.approx(16.0)
    assert 1.0 not in DEFAULT_T_GRID
    assert 0.3 in DEFAULT_SWEEP_GRID and 1.0 in DEFAULT_SWEEP_GRID


def test_self_calibration_selects_identity(random_predictions):
    fit = fit_temperature_loo(random_predictions, random_predictions, grid=[0.5, 1.0, 2.0, 4.0])
    assert set(fit.per_question_T.values()) == {1.0}
    assert fit.objective == "wasserstein"


def test_ties_break_toward_one():
    uniform = {f"Q{i}": dist(f"Q{i}", [0.25] * 4) for i in range(3)}
    fit = fit_temperature_loo(uniform, uniform, grid=[4.0, 0.5, 2.0, 0.25])
    # 모든 T가 동률 -> |log T| 최소: 0.5와 2.0 중 작은 값
    assert set(fit.per_question_T.values()) == {0.5}


def test_recovers_planted_temperature(random_predictions):
    human = {qid: tilt_mean_preserving(d, 3.0)[0] for qid, d in random_predictions.items()}
    fit = fit_temperature_loo(random_predictions, human, grid=DEFAULT_T_GRID)
    step = math.log2(DEFAULT_T_GRID[1]) - math.log2(DEFAULT_T_GRID[0])
    for T in fit.per_question_T.values():
        assert abs(math.log2(T) - math.log2(3.0)) <= step + 1e-9


def test_folds_never_see_their_own_question(random_predictions):
    fit = fit_temperature_loo(random_predictions, random_predictions, grid=[1.0, 2.0])
    assert [f.held_out for f in fit.folds] == list(random_predictions)
    for fold in fit.folds:
        assert fold.held_out not in fold.train_questions
        assert len(fold.train_questions) == len(random_predictions) - 1


def test_singleton_grid(random_predictions):
    fit = fit_temperature_loo(random_predictions, random_predictions, grid=[1.0])
    assert set(fit.per_question_T.values()) == {1.0}
    assert fit.params("Q0").T == 1.0


def test_fit_errors(random_predictions):
    one = {"Q0": random_predictions["Q0"]}
    with pytest.raises(CalibrationError):
        fit_temperature_loo(one, one)
    with pytest.raises(CalibrationError):
        fit_temperature_loo(random_predictions, random_predictions, grid=[])
    with pytest.raises(CalibrationError):
        fit_temperature_loo(random_predictions, random_predictions, grid=[1.0, -2.0])
    with pytest.raises(CalibrationError):
        fit_temperature_loo(random_predictions, random_predictions, criterion="kl")
    with pytest.raises(CalibrationError):
        fit_temperature_loo(random_predictions, {"Q0": random_predictions["Q0"]})


def test_per_country_lists_and_variance_criterion(random_predictions):
    preds = {qid: [prediction(d, "Aland"), prediction(d, "Borduria")] for qid, d in random_predictions.items()}
    human = {qid: [d, d] for qid, d in random_predictions.items()}
    fit = fit_temperature_loo(preds, human, grid=[0.5, 1.0, 2.0], criterion="variance_gap")
    assert set(fit.per_question_T.values()) == {1.0}


def test_variance_gap_criterion_value():
    a, b = dist("Q", [0.5, 0.0, 0.5]), dist("Q", [0.0, 1.0, 0.0])
    assert criterion_value(a, b, "variance_gap") == pytest.approx(1.0)
    assert criterion_value(a, b, "wasserstein") == pytest.approx(1.0)


# =============================================================================
# 적용
# =============================================================================

def test_apply_calibration_preserves_means(tmp_path, random_predictions):
    human_dists = {qid: temperature_scale(d, 2.0) for qid, d in random_predictions.items()}
    preds = [prediction(d) for d in random_predictions.values()]
    human = {("Aland", qid): h for qid, h in human_dists.items()}
    questions = {qid: QuestionSpec(qid, "t", 1, 5) for qid in random_predictions}
    fit = fit_temperature_loo({p.question_id: p for p in preds}, human_dists)

    calibrated, report = apply_calibration(preds, fit, human, questions)
    assert len(calibrated) == len(preds)
    for before, after in zip(preds, calibrated):
        assert after.method == "value_calibrated"
        assert after.per_persona == () and after.persona_digests == ()
        assert after.expected_response == pytest.approx(before.expected_response, abs=1e-9)
    np.testing.assert_allclose(report["mae_after"], report["mae_before"], atol=1e-9)
    assert (report["T"] > 1).all()

    path = write_calibration_report(report, str(tmp_path / "calibration" / "report.csv"))
    assert len(pd.read_csv(path)) == len(preds)


def test_calibrate_prediction_at_identity():
    pred = prediction(dist("Q", [0.2, 0.5, 0.3]))
    calibrated, beta = calibrate_prediction(pred, 1.0)
    assert calibrated.aggregate == pred.aggregate
    assert beta == 0.0


def test_apply_needs_fitted_question(random_predictions):
    fit = fit_temperature_loo(random_predictions, random_predictions, grid=[1.0])
    stray = prediction(dist("Q99", [0.5, 0.5]))
    with pytest.raises(CalibrationError):
        apply_calibration([stray], fit, {("Aland", "Q99"): stray.aggregate}, {"Q99": QuestionSpec("Q99", "t", 1, 2)})


# =============================================================================
# sweep
# =============================================================================

def test_sweep_tilting_mae_is_constant(random_predictions):
    human = {qid: dist(qid, [0.1, 0.2, 0.4, 0.2, 0.1]) for qid in random_predictions}
    table = temperature_sweep(random_predictions, human, [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    tilting = table[table["method"] == "tilting"]
    assert tilting["mae"].max() - tilting["mae"].min() <= 1e-9
    assert set(table["method"]) == {"scaling", "tilting"}
    assert (table["n_pairs"] == len(random_predictions)).all()


def test_sweep_scaling_flattens_to_midpoint():
    pred = {"A": dist("A", [0.7, 0.2, 0.1, 0.0]), "B": dist("B", [0.1, 0.1, 0.1, 0.7])}
    human = {"A": dist("A", [0.0, 0.0, 0.0, 1.0]), "B": dist("B", [0.0, 0.0, 0.0, 1.0])}
    table = temperature_sweep(pred, human, [1e6])
    scaling = table[table["method"] == "scaling"].iloc[0]
    # A의 support는 {1,2,3} -> 평평해지면 평균 2, B는 2.5
    expected = (abs(2.0 - 4.0) + abs(2.5 - 4.0)) / 2 / 3
    assert scaling["mae"] == pytest.approx(expected, abs=1e-4)


def test_sharpening_hurts_under_dispersed_predictions():
    human = {qid: dist(qid, p) for qid, p in {"A": [0.1, 0.3, 0.6], "B": [0.5, 0.3, 0.2]}.items()}
    pred = {qid: tilt_mean_preserving(h, 0.5)[0] for qid, h in human.items()}
    table = temperature_sweep(pred, human, [0.3, 1.0]).set_index(["method", "T"])
    assert table.loc[("scaling", 0.3), "mae"] >= table.loc[("scaling", 1.0), "mae"]
    assert table.loc[("scaling", 1.0), "mae"] == pytest.approx(0.0, abs=1e-9)


def test_sweep_errors():
    with pytest.raises(CalibrationError):
        temperature_sweep({}, {}, [1.0])
    d = dist("A", [0.5, 0.5])
    with pytest.raises(CalibrationError):
        temperature_sweep({"A": d}, {"A": d}, [0.0])
