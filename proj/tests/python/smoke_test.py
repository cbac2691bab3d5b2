"""Smoke tests for the _dmlg extension module.

Run directly (DMLG_MODULE_DIR must point at the built module) or via ctest.
"""

import math
import os
import sys

module_dir = os.environ.get("DMLG_MODULE_DIR")
if module_dir:
    sys.path.insert(0, module_dir)

import numpy as np  # noqa: E402

import _dmlg  # noqa: E402


def test_fold_plan():
    plan = _dmlg.make_fold_plan(333, 5, 1)
    sizes = sorted(plan.assignment.count(f) for f in range(1, 6))
    assert sizes == [66, 66, 67, 67, 67], sizes
    again = _dmlg.make_fold_plan(333, 5, 1)
    assert plan.assignment == again.assignment
    try:
        _dmlg.make_fold_plan(3, 5, 0)
    except _dmlg.DmlgError as e:
        assert "invalid-partition" in str(e)
    else:
        raise AssertionError("expected DmlgError")


def test_soft_threshold_and_grid():
    assert _dmlg.soft_threshold(3.0, 1.0) == 2.0
    assert _dmlg.soft_threshold(-0.5, 1.0) == 0.0
    grid = _dmlg.build_lambda_grid(1.0, 3, 0.01)
    assert np.allclose(grid, [1.0, 0.1, 0.01])


def test_quantile_and_averaging():
    assert _dmlg.empirical_quantile([5.0, 5.0, 5.0, 5.0], 5.0) == 0.625
    out = _dmlg.average_image_embeddings([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.allclose(out, [0.5, 0.5])


def test_lasso_matches_numpy_least_squares():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((60, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(60)
    spec = _dmlg.DesignSpec.build(y, np.empty((60, 0)), x)
    fit = _dmlg.fit_lasso(spec, 0.0, tol=1e-11, max_iter=100000)
    design = np.column_stack([np.ones(60), x])
    coefs, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert abs(fit.intercept - coefs[0]) < 1e-6
    assert np.max(np.abs(fit.penalized_coefs - coefs[1:])) < 1e-6
    assert _dmlg.kkt_residual(spec, fit, 0.0) < 1e-6


def test_end_to_end_dml():
    spec = _dmlg.DgpSpec(
        n=120,
        p=10,
        theta0=1.0,
        g_form=_dmlg.NuisanceForm(_dmlg.FunctionalForm.sparse_linear, 4, 1.2),
        m_form=_dmlg.NuisanceForm(_dmlg.FunctionalForm.sparse_linear, 4, 0.6),
        noise_sd_u=0.5,
        noise_sd_v=0.5,
        rho_y=0.7,
        rho_d=0.5,
        seed=9,
    )
    ds = _dmlg.generate(spec)
    assert ds.table.n == 120 and ds.table.p == 10
    assert np.max(np.abs(ds.table.y - (1.0 * ds.table.d + ds.g_values + ds.u))) == 0.0
    assert _dmlg.validate_table(ds.table).ok

    cfg = _dmlg.EstimatorConfig(k_folds=4, cv="kfold:3", grid=10, min_ratio=0.02, seed=3)
    plan = _dmlg.make_fold_plan(120, 4, 3)
    with_guess = _dmlg.run_dml_with_plan(ds.table, plan, cfg, True)
    without = _dmlg.run_dml_with_plan(ds.table, plan, cfg, False)
    assert abs(without.theta_hat - 1.0) < 0.5
    assert without.robust_se > 0.0
    report = _dmlg.compare_runs(with_guess, without)
    assert "with guesses" in report.table()

    theta, se = _dmlg.residual_on_residual(np.array([1.0, 1.0]), np.array([1.0, -1.0]))
    assert theta == 0.0 and abs(se - math.sqrt(0.5)) < 1e-12


def test_parse_and_mask():
    assert _dmlg.parse_final_tag("reasoning <final>110</final>", "price") == 110.0
    try:
        _dmlg.parse_final_tag("<final>1</final><final>2</final>", "price")
    except _dmlg.DmlgError as e:
        assert "ambiguous-final" in str(e)
    else:
        raise AssertionError("expected DmlgError")
    masked = _dmlg.mask_listing_text("Metal: gold\nFeedback Score: 4062\nCondition: new")
    assert "4062" not in masked and "Metal: gold" in masked
    assert "<final>" in _dmlg.system_prompt("price")


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok: {test.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
