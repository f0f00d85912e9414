import math

import numpy as np
import pytest

from wate.data import ObservationalDataset
from wate.design import main_effects
from wate.errors import EstimationError, MissingModelError
from wate.estimators import (
    EstimatorKind,
    estimate,
    estimate_aipw,
    estimate_atc_dr,
    estimate_atc_regression,
    estimate_att_dr,
    estimate_att_regression,
    estimate_dr_linear_in_pi,
    estimate_ipw_normalized,
    estimate_ipw_unnormalized,
    estimate_regression,
)
from wate.models import OutcomeModel, fit_outcome, predict_outcome
from wate.targets import (
    average_effect,
    compute_weights,
    effect_on_controls,
    effect_on_treated,
    evaluate_h,
    linear_in_propensity,
    overlap_effect,
)


def random_instance(seed, n=40, p=2):
    """Dataset plus a fitted outcome model and a synthetic propensity
    vector. The propensity is generated directly (not fitted) so estimator
    algebra can be tested in isolation."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    A = np.zeros(n)
    A[: n // 2] = 1.0
    rng.shuffle(A)
    Y = 1.0 + X @ rng.normal(size=p) + A * (0.5 + X[:, 0]) + rng.normal(size=n)
    ds = ObservationalDataset(X=X, A=A, Y=Y)
    om = fit_outcome(ds, main_effects(ds.covariate_names))
    pi = rng.uniform(0.08, 0.92, size=n)
    return ds, om, pi


def zero_outcome_model(om):
    return OutcomeModel(
        beta=np.zeros_like(om.beta),
        main_design=om.main_design,
        interaction_design=om.interaction_design,
        residual_variance=0.0,
    )


# --- hand-summed oracles -----------------------------------------------------


def test_regression_matches_fsum_oracle():
    ds, om, pi = random_instance(0)
    h = evaluate_h(overlap_effect(), ds.X, pi)
    m1 = predict_outcome(om, ds.X, 1)
    m0 = predict_outcome(om, ds.X, 0)
    oracle = math.fsum(
        h[i] * (m1[i] - m0[i]) for i in range(ds.n)
    ) / math.fsum(h)
    got = estimate_regression(ds, om, h).value
    assert got == pytest.approx(oracle, rel=1e-12)


def test_ipw_normalized_matches_fsum_oracle():
    ds, om, pi = random_instance(1)
    w = compute_weights(effect_on_treated(), ds.X, pi)
    a, y = ds.A, ds.Y
    top = math.fsum(a[i] * y[i] * w.w1[i] for i in range(ds.n)) / math.fsum(
        a[i] * w.w1[i] for i in range(ds.n)
    )
    bot = math.fsum(
        (1 - a[i]) * y[i] * w.w0[i] for i in range(ds.n)
    ) / math.fsum((1 - a[i]) * w.w0[i] for i in range(ds.n))
    got = estimate_ipw_normalized(ds, w).value
    assert got == pytest.approx(top - bot, rel=1e-12)


def test_aipw_matches_fsum_oracle():
    ds, om, pi = random_instance(2)
    h = evaluate_h(overlap_effect(), ds.X, pi)
    m1 = predict_outcome(om, ds.X, 1)
    m0 = predict_outcome(om, ds.X, 0)
    a, y = ds.A, ds.Y
    terms = [
        h[i]
        * (
            (a[i] * y[i] / pi[i] - (a[i] - pi[i]) / pi[i] * m1[i])
            - (
                (1 - a[i]) * y[i] / (1 - pi[i])
                + (a[i] - pi[i]) / (1 - pi[i]) * m0[i]
            )
        )
        for i in range(ds.n)
    ]
    oracle = math.fsum(terms) / math.fsum(h)
    got = estimate_aipw(ds, None, om, h, pi_hat=pi).value
    assert got == pytest.approx(oracle, rel=1e-12)


def test_att_dr_matches_fsum_oracle():
    ds, om, pi = random_instance(3)
    m0 = predict_outcome(om, ds.X, 0)
    a, y = ds.A, ds.Y
    terms = [
        a[i] * y[i]
        - (
            pi[i] * (1 - a[i]) * y[i] / (1 - pi[i])
            + (a[i] - pi[i]) * m0[i] / (1 - pi[i])
        )
        for i in range(ds.n)
    ]
    oracle = math.fsum(terms) / math.fsum(a)
    got = estimate_att_dr(ds, None, om, pi_hat=pi).value
    assert got == pytest.approx(oracle, rel=1e-12)


# --- closed-form sanity cases ------------------------------------------------


def test_regression_constant_effect():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 1))
    A = (np.arange(30) % 2).astype(float)
    Y = X[:, 0] + 2.5 * A
    ds = ObservationalDataset(X=X, A=A, Y=Y)
    om = fit_outcome(ds, main_effects(("x1",)))
    h = np.abs(rng.normal(size=30)) + 0.1
    assert estimate_regression(ds, om, h).value == pytest.approx(2.5, abs=1e-9)


def test_point_mass_h_reads_single_contrast():
    ds, om, _ = random_instance(5)
    h = np.zeros(ds.n)
    h[7] = 1.0
    m1 = predict_outcome(om, ds.X, 1)
    m0 = predict_outcome(om, ds.X, 0)
    got = estimate_regression(ds, om, h).value
    assert got == pytest.approx(m1[7] - m0[7], rel=1e-12)


def test_ipw_equal_propensities_give_mean_difference():
    ds, _, _ = random_instance(6)
    pi = np.full(ds.n, 0.5)
    w = compute_weights(average_effect(), ds.X, pi)
    got = estimate_ipw_normalized(ds, w).value
    expected = ds.Y[ds.A == 1].mean() - ds.Y[ds.A == 0].mean()
    assert got == pytest.approx(expected, rel=1e-12)


def test_ipw_zero_when_outcome_constant():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 1))
    A = (np.arange(20) % 2).astype(float)
    ds = ObservationalDataset(X=X, A=A, Y=np.full(20, 3.7))
    pi = rng.uniform(0.2, 0.8, 20)
    w = compute_weights(overlap_effect(), ds.X, pi)
    assert estimate_ipw_normalized(ds, w).value == pytest.approx(0.0, abs=1e-12)


def test_att_dr_shift_between_arms():
    # Controls sit exactly on the outcome model; every treated outcome is
    # m0 + delta. The adjustment terms then cancel for any propensity and
    # the estimate is exactly delta.
    rng = np.random.default_rng(8)
    n = 24
    X = rng.normal(size=(n, 1))
    A = (np.arange(n) % 2).astype(float)
    delta = 1.25
    om = OutcomeModel(
        beta=np.array([2.0, 0.5, 0.0, 0.0]),
        main_design=main_effects(("x1",)),
        interaction_design=main_effects(("x1",)),
        residual_variance=0.0,
    )
    m0 = predict_outcome(om, X, 0)
    Y = np.where(A == 1, m0 + delta, m0)
    ds = ObservationalDataset(X=X, A=A, Y=Y)
    pi = rng.uniform(0.1, 0.9, n)
    assert estimate_att_dr(ds, None, om, pi_hat=pi).value == pytest.approx(
        delta, rel=1e-12
    )


def test_atc_dr_shift_between_arms():
    # Mirror construction: treated sit on m1, controls are m1 - delta.
    rng = np.random.default_rng(28)
    n = 24
    X = rng.normal(size=(n, 1))
    A = (np.arange(n) % 2).astype(float)
    delta = -0.75
    om = OutcomeModel(
        beta=np.array([1.0, -0.5, 0.0, 0.0]),
        main_design=main_effects(("x1",)),
        interaction_design=main_effects(("x1",)),
        residual_variance=0.0,
    )
    m1 = predict_outcome(om, X, 1)
    Y = np.where(A == 1, m1, m1 - delta)
    ds = ObservationalDataset(X=X, A=A, Y=Y)
    pi = rng.uniform(0.1, 0.9, n)
    assert estimate_atc_dr(ds, None, om, pi_hat=pi).value == pytest.approx(
        delta, rel=1e-12
    )


def test_att_regression_indicator_form():
    ds, om, _ = random_instance(9)
    m0 = predict_outcome(om, ds.X, 0)
    a, y = ds.A, ds.Y
    oracle = math.fsum(a[i] * (y[i] - m0[i]) for i in range(ds.n)) / math.fsum(a)
    assert estimate_att_regression(ds, om).value == pytest.approx(oracle, rel=1e-12)


def test_atc_regression_indicator_form():
    ds, om, _ = random_instance(10)
    m1 = predict_outcome(om, ds.X, 1)
    a, y = ds.A, ds.Y
    oracle = math.fsum(
        (1 - a[i]) * (m1[i] - y[i]) for i in range(ds.n)
    ) / math.fsum(1 - a[i] for i in range(ds.n))
    assert estimate_atc_regression(ds, om).value == pytest.approx(oracle, rel=1e-12)


# --- exact algebraic identities ----------------------------------------------


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@pytest.mark.parametrize("seed", range(8))
def test_linear_form_nests_treated_and_control_estimators(seed):
    ds, om, pi = random_instance(seed, n=50)
    att = estimate_att_dr(ds, None, om, pi_hat=pi).value
    atc = estimate_atc_dr(ds, None, om, pi_hat=pi).value
    lin_att = estimate_dr_linear_in_pi(ds, None, om, 0, 1, pi_hat=pi).value
    lin_atc = estimate_dr_linear_in_pi(ds, None, om, 1, -1, pi_hat=pi).value
    assert close(att, lin_att)
    assert close(atc, lin_atc)


@pytest.mark.parametrize("seed", range(8))
def test_aipw_with_zero_outcome_model_is_unnormalized_ipw(seed):
    ds, om, pi = random_instance(seed, n=50)
    zero = zero_outcome_model(om)
    for target in (average_effect(), overlap_effect(), effect_on_treated()):
        h = evaluate_h(target, ds.X, pi)
        w = compute_weights(target, ds.X, pi)
        lhs = estimate_aipw(ds, None, zero, h, pi_hat=pi).value
        rhs = estimate_ipw_unnormalized(ds, w).value
        assert close(lhs, rhs)


@pytest.mark.parametrize("seed", range(8))
def test_aipw_with_zero_residuals_is_regression(seed):
    ds, om, pi = random_instance(seed, n=50)
    fitted = np.where(
        ds.A == 1.0, predict_outcome(om, ds.X, 1), predict_outcome(om, ds.X, 0)
    )
    ds_fit = ObservationalDataset(X=ds.X, A=ds.A, Y=fitted)
    om_fit = fit_outcome(ds_fit, om.main_design, om.interaction_design)
    h = evaluate_h(overlap_effect(), ds.X, pi)
    lhs = estimate_aipw(ds_fit, None, om_fit, h, pi_hat=pi).value
    rhs = estimate_regression(ds_fit, om_fit, h).value
    assert close(lhs, rhs, tol=1e-10)


@pytest.mark.parametrize("seed", range(8))
def test_constant_propensity_collapses_overlap_to_average(seed):
    # With a flat propensity h is constant, so it cancels from the weighted
    # average and the overlap-population estimate equals the plain one.
    ds, om, _ = random_instance(seed, n=50)
    pi = np.full(ds.n, 0.35 + 0.01 * seed)
    lhs = estimate(
        ds, EstimatorKind.AIPW, overlap_effect(), om=om, pi_hat=pi
    ).value
    rhs = estimate(
        ds, EstimatorKind.AIPW, average_effect(), om=om, pi_hat=pi
    ).value
    assert close(lhs, rhs)


@pytest.mark.parametrize("seed", range(6))
def test_swapping_treatment_labels_negates_the_estimators(seed):
    # Relabel arms: A' = 1 - A, pi' = 1 - pi, and an outcome model whose
    # arm means are exchanged. The treated-population estimate of the
    # relabeled problem is minus the control-population estimate of the
    # original.
    ds, om, pi = random_instance(seed, n=50)
    ds_swapped = ObservationalDataset(X=ds.X, A=1.0 - ds.A, Y=ds.Y)
    k = len(om.main_design)
    b0 = om.beta[0]
    b_main = om.beta[1 : 1 + k]
    c0 = om.beta[1 + k]
    c_inter = om.beta[2 + k :]
    swapped_beta = np.concatenate(
        [[b0 + c0], b_main + c_inter, [-c0], -c_inter]
    )
    om_swapped = OutcomeModel(
        beta=swapped_beta,
        main_design=om.main_design,
        interaction_design=om.interaction_design,
        residual_variance=om.residual_variance,
    )
    lhs = estimate_att_dr(ds_swapped, None, om_swapped, pi_hat=1.0 - pi).value
    rhs = estimate_atc_dr(ds, None, om, pi_hat=pi).value
    assert close(lhs, -rhs)
    lhs2 = estimate_ipw_normalized(
        ds_swapped, compute_weights(effect_on_treated(), ds.X, 1.0 - pi)
    ).value
    rhs2 = estimate_ipw_normalized(
        ds, compute_weights(effect_on_controls(), ds.X, pi)
    ).value
    assert close(lhs2, -rhs2)


# --- equivariance ------------------------------------------------------------


def _all_pipeline_values(ds, om, pi):
    h_ato = evaluate_h(overlap_effect(), ds.X, pi)
    w_ato = compute_weights(overlap_effect(), ds.X, pi)
    return np.array(
        [
            estimate_regression(ds, om, h_ato).value,
            estimate_ipw_normalized(ds, w_ato).value,
            estimate_aipw(ds, None, om, h_ato, pi_hat=pi).value,
            estimate_att_dr(ds, None, om, pi_hat=pi).value,
            estimate_atc_dr(ds, None, om, pi_hat=pi).value,
            estimate_dr_linear_in_pi(ds, None, om, 1, 2, pi_hat=pi).value,
        ]
    )


@pytest.mark.parametrize("shift", [-3.0, 2.5])
def test_location_shift_with_refit_leaves_estimates_alone(shift):
    # Holds for every estimator except the unnormalized weighting form,
    # whose arm weights do not sum to a common mass.
    ds, om, pi = random_instance(11, n=60)
    base = _all_pipeline_values(ds, om, pi)
    ds2 = ObservationalDataset(X=ds.X, A=ds.A, Y=ds.Y + shift)
    om2 = fit_outcome(ds2, om.main_design, om.interaction_design)
    shifted = _all_pipeline_values(ds2, om2, pi)
    np.testing.assert_allclose(shifted, base, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("scale", [-2.0, 0.5])
def test_scaling_outcome_scales_estimates(scale):
    ds, om, pi = random_instance(12, n=60)
    base = _all_pipeline_values(ds, om, pi)
    w_ato = compute_weights(overlap_effect(), ds.X, pi)
    base_unnorm = estimate_ipw_unnormalized(ds, w_ato).value
    ds2 = ObservationalDataset(X=ds.X, A=ds.A, Y=ds.Y * scale)
    om2 = fit_outcome(ds2, om.main_design, om.interaction_design)
    scaled = _all_pipeline_values(ds2, om2, pi)
    np.testing.assert_allclose(scaled, scale * base, rtol=1e-9, atol=1e-9)
    scaled_unnorm = estimate_ipw_unnormalized(ds2, w_ato).value
    assert scaled_unnorm == pytest.approx(scale * base_unnorm, rel=1e-9)


# --- dispatch ----------------------------------------------------------------


def test_dispatch_routes_aipw_to_closed_forms():
    ds, om, pi = random_instance(13, n=50)
    routed = estimate(ds, EstimatorKind.AIPW, effect_on_treated(), om=om, pi_hat=pi)
    assert routed.estimator is EstimatorKind.DR_LINEAR_IN_PI
    direct = estimate_att_dr(ds, None, om, pi_hat=pi)
    assert routed.value == pytest.approx(direct.value, rel=1e-14)
    lin = estimate(
        ds, EstimatorKind.AIPW, linear_in_propensity(1, 3), om=om, pi_hat=pi
    )
    assert lin.estimator is EstimatorKind.DR_LINEAR_IN_PI


def test_force_plain_aipw_changes_the_formula():
    ds, om, pi = random_instance(14, n=50)
    routed = estimate(ds, EstimatorKind.AIPW, effect_on_treated(), om=om, pi_hat=pi)
    plain = estimate(
        ds,
        EstimatorKind.AIPW,
        effect_on_treated(),
        om=om,
        pi_hat=pi,
        force_plain_aipw=True,
    )
    assert plain.estimator is EstimatorKind.AIPW
    assert plain.value != routed.value


def test_dispatch_regression_att_needs_no_propensity():
    ds, om, _ = random_instance(15, n=50)
    got = estimate(ds, EstimatorKind.REGRESSION, effect_on_treated(), om=om)
    assert got.value == pytest.approx(
        estimate_att_regression(ds, om).value, rel=1e-14
    )


def test_dispatch_missing_models():
    ds, om, pi = random_instance(16, n=50)
    with pytest.raises(MissingModelError):
        estimate(ds, EstimatorKind.AIPW, overlap_effect(), om=om)
    with pytest.raises(MissingModelError):
        estimate(ds, EstimatorKind.AIPW, overlap_effect(), pi_hat=pi)
    with pytest.raises(MissingModelError):
        estimate(ds, EstimatorKind.REGRESSION, overlap_effect(), om=om)
    with pytest.raises(MissingModelError):
        estimate(ds, EstimatorKind.IPW_NORMALIZED, average_effect())


def test_dispatch_rejects_closed_form_for_overlap():
    ds, om, pi = random_instance(17, n=50)
    with pytest.raises(EstimationError):
        estimate(ds, EstimatorKind.DR_LINEAR_IN_PI, overlap_effect(), om=om, pi_hat=pi)


def test_zero_mass_h_rejected():
    ds, om, pi = random_instance(18, n=50)
    with pytest.raises(EstimationError):
        estimate_regression(ds, om, np.zeros(ds.n))


def test_negative_h_rejected():
    ds, om, pi = random_instance(19, n=50)
    h = np.ones(ds.n)
    h[0] = -0.5
    with pytest.raises(EstimationError):
        estimate_regression(ds, om, h)


def test_bad_pi_hat_rejected():
    ds, om, _ = random_instance(20, n=50)
    with pytest.raises(EstimationError):
        estimate(
            ds,
            EstimatorKind.AIPW,
            average_effect(),
            om=om,
            pi_hat=np.ones(ds.n),
        )


def test_diagnostics_are_sensible():
    ds, om, pi = random_instance(21, n=50)
    w = compute_weights(average_effect(), ds.X, pi)
    got = estimate_ipw_normalized(ds, w)
    d = got.diagnostics
    assert got.n_used == ds.n
    assert d.h_total == pytest.approx(float(ds.n))
    assert 0 < d.ess_treated <= ds.n_treated + 1e-9
    assert 0 < d.ess_control <= ds.n_control + 1e-9
