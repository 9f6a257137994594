import json
import math

import numpy as np
import pytest

from amrmc.basis import BasisFamily, BasisSpec
from amrmc.experiments import (
    CSV_HEADER,
    MseCell,
    SweepGrid,
    batch_squared_errors,
    classify_regime,
    continuation_error_norm,
    estimate_mse_cell,
    multiperiod_error_study,
    parse_csv,
    run_cell,
    run_sweep,
    worst_case_target,
)
from amrmc.moments import expected_mse_closed_form, gram_analysis, lognormal_moments
from amrmc.paths import ExerciseGrid, SeedCoordinates
from amrmc.regression import PayoffSpec

HERMITE = BasisFamily.HERMITE
EXP = BasisFamily.EXP_MARTINGALE


def test_worst_case_targets():
    t = worst_case_target("normal", 7, 1.0, 2.0)
    assert t.coefficients[7] == pytest.approx(11.3137, abs=1e-4)
    assert np.array_equal(t.true_beta, np.eye(8)[7])
    t0 = worst_case_target("normal", 0)
    assert np.array_equal(t0.true_beta, [1.0])
    assert np.all(t0.y(np.array([-2.0, 0.1, 5.0])) == 1.0)
    t3 = worst_case_target("lognormal", 3)
    assert t3.coefficients.tolist() == [0, 0, 0, 1]
    assert t3.true_beta.tolist() == [0, 0, 0, 1]
    assert np.linalg.norm(t.true_beta) == 1.0
    with pytest.raises(ValueError):
        worst_case_target("normal", 2, 2.0, 1.0)


def test_cell_matches_closed_form_small():
    target = worst_case_target("normal", 1)
    cell = estimate_mse_cell(target, 500, 2000, "direct", SeedCoordinates(1, (1, 500)))
    assert cell.expected_mse == pytest.approx(0.01)
    assert abs(cell.mse_mean - cell.expected_mse) < 4 * cell.mse_stderr
    assert cell.mse_mean >= 0 and cell.mse_stderr >= 0


def test_cell_needs_two_batches():
    with pytest.raises(ValueError):
        estimate_mse_cell(worst_case_target("normal", 1), 10, 1, "direct", SeedCoordinates(1))


def test_scaled_method_is_exact_rescaling():
    target = worst_case_target("normal", 2)
    seed = SeedCoordinates(3, (2, 5000))
    raw = batch_squared_errors(target, 5000, 20, seed)
    cell = estimate_mse_cell(target, 5, 20, "scaled", seed, n_ref=5000)
    assert cell.method == "scaled"
    assert cell.mse_mean == pytest.approx(raw.mean() * 1000, rel=1e-15)
    assert cell.mse_median == pytest.approx(np.median(raw) * 1000, rel=1e-15)


def test_gram_failure_marks_cell_unavailable():
    target = worst_case_target("lognormal", 7, 1.0, 2.0)
    cell = estimate_mse_cell(target, 100, 3, "direct", SeedCoordinates(1))
    assert not cell.available
    assert math.isnan(cell.mse_mean)


def test_grid_validation():
    with pytest.raises(ValueError, match="batches"):
        SweepGrid("normal", (1,), (500,), base_seed=1, batches=1)
    with pytest.raises(ValueError, match="N_ref"):
        SweepGrid("normal", (8,), (500, 10**6), base_seed=1)
    SweepGrid("normal", (1,), (500, 10**6), base_seed=1)
    with pytest.raises(ValueError):
        SweepGrid("cauchy", (1,), (500,), base_seed=1)


def test_method_switch_at_threshold():
    g = SweepGrid("normal", (6, 7), (500,), base_seed=1)
    assert g.method_for(6) == "direct" and g.method_for(7) == "scaled"


def test_regime_examples():
    g = SweepGrid("normal", (2, 8), (500, 8000), base_seed=1, batches=2, N_ref=8000)
    lo, hi = g.thresholds(8000)
    assert lo == hi == pytest.approx(3.659, abs=1e-3)
    assert run_cell(g, 2, 8000).regime == "subcritical"
    assert run_cell(g, 8, 500).regime == "supercritical"
    assert g.thresholds(500)[0] == pytest.approx(2.530, abs=1e-3)
    lg = SweepGrid("lognormal", (1,), (500,), base_seed=1, batches=2)
    lo, hi = lg.thresholds(500)
    assert lo < 1 < hi
    assert run_cell(lg, 1, 500).regime == "band"
    assert classify_regime(3.0, 2.0, 2.0) == "supercritical"


@pytest.fixture(scope="module")
def small_sweep():
    grid = SweepGrid("normal", (1, 2, 7), (50, 200), base_seed=2024, batches=40,
                     scaled_threshold=7, N_ref=2000)
    return grid, run_sweep(grid)


def test_sweep_cells_reproduce_in_isolation(small_sweep):
    grid, result = small_sweep
    assert len(result.cells) == 6
    for cell in result.cells:
        alone = run_cell(grid, cell.K, cell.N, workers=3)
        assert alone.mse_mean == cell.mse_mean
        assert alone.mse_stderr == cell.mse_stderr
        assert alone.mse_median == cell.mse_median


def test_sweep_independent_of_workers(small_sweep):
    grid, result = small_sweep
    again = run_sweep(grid, workers=4)
    assert again.to_csv() == result.to_csv()


def test_scaled_cells_share_the_reference_run(small_sweep):
    _, result = small_sweep
    a, b = result.cell(7, 50), result.cell(7, 200)
    assert a.method == b.method == "scaled"
    assert a.mse_mean == pytest.approx(4 * b.mse_mean, rel=1e-14)


def test_csv_round_trip(small_sweep):
    _, result = small_sweep
    text = result.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    cells = parse_csv(text)
    assert len(cells) == len(result.cells)
    for parsed, original in zip(cells, result.cells):
        assert parsed.csv_row() == original.csv_row()
        assert parsed.mse_mean == pytest.approx(original.mse_mean, rel=1e-5)


def test_csv_rejects_bad_input():
    with pytest.raises(ValueError):
        parse_csv("a,b\n1,2\n")
    with pytest.raises(ValueError):
        MseCell.from_csv_row(["normal", "1"])


def test_json_and_plot_data(small_sweep):
    grid, result = small_sweep
    d = json.loads(json.dumps(result.to_json_dict()))
    assert d["grid"]["batches"] == 40 and len(d["cells"]) == 6
    plot = result.plot_data(samples=7)
    assert len(plot["points"]) == 6 and len(plot["critical_curve"]) == 7
    assert plot["critical_curve"][0]["N"] == pytest.approx(50)


def test_continuation_error_norm_examples():
    h = BasisSpec(HERMITE, 2)
    assert continuation_error_norm([1, 2, 3], [1, 2, 3], h, 1.0) == 0.0
    assert continuation_error_norm([0, 1, 0], [0, 0, 0], h, 1.0) == 1.0
    e = BasisSpec(EXP, 1)
    assert continuation_error_norm([0, 1], [0, 0], e, 1.0) == pytest.approx(math.sqrt(math.e))
    assert continuation_error_norm([0, 1], [0, 0], e, 1.0) == pytest.approx(1.64872, abs=1e-5)
    with pytest.raises(ValueError):
        continuation_error_norm([0, 1], [0, 0, 0], e, 1.0)


def test_multiperiod_zero_payoff():
    study = multiperiod_error_study("brownian", ExerciseGrid((0.5, 1.0, 1.5)), PayoffSpec("zero"),
                                    BasisSpec(HERMITE, 2), 200, 3, SeedCoordinates(5))
    assert [r.mean_sq_error for r in study.rows] == [0.0, 0.0]
    assert study.n_ref == 20_000
    assert all(r.bound_upper > 0 for r in study.rows)


def test_multiperiod_reduces_to_single_period_normal():
    # date 2 pays the worst-case target, so C_1 has coefficients e_K exactly
    K, N, reps = 2, 400, 400
    target = worst_case_target("normal", K, 1.0, 2.0)
    basis = target.basis
    payoff = PayoffSpec("basis", coefficients=(tuple([0.0] * (K + 1)), tuple(target.coefficients)),
                        basis=basis, dates=(2,))
    study = multiperiod_error_study("brownian", ExerciseGrid((1.0, 2.0)), payoff, basis, N, reps,
                                    SeedCoordinates(6), reference={1: target.true_beta})
    row = study.row(1)
    expected = expected_mse_closed_form("normal", K, N, rho=2.0)
    assert abs(row.mean_sq_error - expected) < 4 * row.stderr


def test_multiperiod_reduces_to_single_period_lognormal():
    K, N, reps, t1, t2 = 1, 400, 400, 0.5, 1.0
    target = worst_case_target("lognormal", K, t1, t2)
    basis = target.basis
    payoff = PayoffSpec("basis", coefficients=((0.0, 0.0), tuple(target.coefficients)),
                        basis=basis, dates=(2,))
    study = multiperiod_error_study("geometric", ExerciseGrid((t1, t2)), payoff, basis, N, reps,
                                    SeedCoordinates(7), reference={1: target.true_beta})
    # E[d^T Psi d] = trace(Sigma Psi^-1) / N
    gram = gram_analysis(basis, t1)
    mom = lognormal_moments(K, K, t1, t2)
    gamma = gram.matrix @ target.true_beta
    sigma = np.array([[mom.mixed(j, k) for k in range(K + 1)] for j in range(K + 1)])
    sigma -= np.outer(gamma, gamma)
    expected = float(np.trace(sigma @ gram.inverse)) / N
    row = study.row(1)
    assert abs(row.mean_sq_error - expected) < 4 * row.stderr


def test_multiperiod_needs_replications():
    with pytest.raises(ValueError):
        multiperiod_error_study("brownian", ExerciseGrid((0.5, 1.0)), PayoffSpec("zero"),
                                BasisSpec(HERMITE, 1), 10, 1, SeedCoordinates(1))
