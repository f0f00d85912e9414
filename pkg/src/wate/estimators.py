"""Point estimators for weighted average treatment effects.

Three families:

* outcome regression: plug fitted arm means into the weighted contrast;
* inverse probability weighting, in the arm-normalized form (default) and
  the unnormalized form kept for algebraic comparisons;
* augmented IPW, which combines both models and stays consistent when
  either one is correct.

For targets whose weight is linear in the propensity (treated, control, or
a general a + b*pi) the augmented estimator admits a form whose augmentation
uses only model residuals; those closed forms are implemented separately
(:func:`estimate_att_dr`, :func:`estimate_atc_dr`,
:func:`estimate_dr_linear_in_pi`) and the dispatcher routes to them by
default. The treated/control targets also admit regression-only forms that
need no propensity model at all.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .data import ObservationalDataset
from .errors import EstimationError, MissingModelError
from .models import OutcomeModel, PropensityModel, predict_outcome, predict_propensity
from .targets import (
    TargetFunction,
    TargetKind,
    WeightVector,
    compute_weights,
    evaluate_h,
)


class EstimatorKind(enum.Enum):
    REGRESSION = "regression"
    IPW_NORMALIZED = "ipw"
    IPW_UNNORMALIZED = "ipw-unnormalized"
    AIPW = "aipw"
    DR_LINEAR_IN_PI = "dr"


@dataclass(frozen=True)
class Diagnostics:
    """Weight mass and effective sample sizes behind an estimate."""

    h_total: float
    ess_treated: float
    ess_control: float


@dataclass(frozen=True, eq=False)
class PointEstimate:
    value: float
    estimator: EstimatorKind
    estimand: TargetFunction
    n_used: int
    diagnostics: Diagnostics


def _finite(value: float, what: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise EstimationError(f"{what} evaluated to a non-finite value")
    return value


def _h_checked(h: NDArray[np.float64], n: int) -> NDArray[np.float64]:
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape[0] != n:
        raise EstimationError(f"h vector has length {h.shape[0]}, expected {n}")
    if not np.all(np.isfinite(h)):
        raise EstimationError("h vector contains non-finite values")
    if np.any(h < 0.0):
        raise EstimationError("h vector contains negative values")
    total = float(np.sum(h))
    if total <= 0.0:
        raise EstimationError("target function puts zero mass on the sample")
    return h


def _ess(weights: NDArray[np.float64]) -> float:
    total = float(np.sum(weights))
    if total <= 0.0:
        return 0.0
    return total * total / float(np.sum(weights * weights))


def _arm_ess_from_h(
    ds: ObservationalDataset, h: NDArray[np.float64]
) -> tuple[float, float]:
    return _ess(h[ds.A == 1.0]), _ess(h[ds.A == 0.0])


def _resolve_pi(
    ds: ObservationalDataset,
    pm: PropensityModel | None,
    pi_hat: NDArray[np.float64] | None,
) -> NDArray[np.float64] | None:
    """Explicit ``pi_hat`` (e.g. a truncated vector) wins over the model."""
    if pi_hat is not None:
        pi = np.asarray(pi_hat, dtype=np.float64).ravel()
        if pi.shape[0] != ds.n:
            raise EstimationError(
                f"pi_hat has length {pi.shape[0]}, expected {ds.n}"
            )
        if not np.all((pi > 0.0) & (pi < 1.0)):
            raise EstimationError("pi_hat values must lie strictly inside (0, 1)")
        return pi
    if pm is not None:
        return predict_propensity(pm, ds.X)
    return None


def _arm_means(
    om: OutcomeModel, X: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    return predict_outcome(om, X, 1), predict_outcome(om, X, 0)


def estimate_regression(
    ds: ObservationalDataset,
    om: OutcomeModel,
    h_values: NDArray[np.float64],
    estimand: TargetFunction | None = None,
) -> PointEstimate:
    """h-weighted average of the fitted arm contrast:
    sum h*(m1 - m0) / sum h."""
    h = _h_checked(h_values, ds.n)
    m1, m0 = _arm_means(om, ds.X)
    value = _finite(np.sum(h * (m1 - m0)) / np.sum(h), "regression estimate")
    et, ec = _arm_ess_from_h(ds, h)
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.REGRESSION,
        estimand=estimand if estimand is not None else TargetFunction(TargetKind.COVARIATE, label="custom-h"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=float(np.sum(h)), ess_treated=et, ess_control=ec),
    )


def estimate_att_regression(
    ds: ObservationalDataset, om: OutcomeModel
) -> PointEstimate:
    """Effect on the treated using only the outcome model:
    sum A*(Y - m0) / sum A. No propensity needed."""
    n1 = float(np.sum(ds.A))
    if n1 < 1.0:
        raise EstimationError("no treated observations")
    _, m0 = _arm_means(om, ds.X)
    value = _finite(np.sum(ds.A * (ds.Y - m0)) / n1, "treated regression estimate")
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.REGRESSION,
        estimand=TargetFunction(TargetKind.ATT, label="att"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=n1, ess_treated=n1, ess_control=0.0),
    )


def estimate_atc_regression(
    ds: ObservationalDataset, om: OutcomeModel
) -> PointEstimate:
    """Effect on the controls using only the outcome model:
    sum (1-A)*(m1 - Y) / sum (1-A)."""
    n0 = float(np.sum(1.0 - ds.A))
    if n0 < 1.0:
        raise EstimationError("no control observations")
    m1, _ = _arm_means(om, ds.X)
    value = _finite(
        np.sum((1.0 - ds.A) * (m1 - ds.Y)) / n0, "control regression estimate"
    )
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.REGRESSION,
        estimand=TargetFunction(TargetKind.ATC, label="atc"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=n0, ess_treated=0.0, ess_control=n0),
    )


def estimate_ipw_normalized(
    ds: ObservationalDataset,
    weights: WeightVector,
    estimand: TargetFunction | None = None,
) -> PointEstimate:
    """Difference of weighted arm means, each arm's weights normalized to
    sum to one: sum A*Y*w1 / sum A*w1 - sum (1-A)*Y*w0 / sum (1-A)*w0."""
    tw = ds.A * weights.w1
    cw = (1.0 - ds.A) * weights.w0
    st = float(np.sum(tw))
    sc = float(np.sum(cw))
    if st <= 0.0 or sc <= 0.0:
        raise EstimationError("zero weight mass in one arm")
    value = _finite(np.sum(tw * ds.Y) / st - np.sum(cw * ds.Y) / sc, "ipw estimate")
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.IPW_NORMALIZED,
        estimand=estimand if estimand is not None else TargetFunction(TargetKind.COVARIATE, label="custom-h"),
        n_used=ds.n,
        diagnostics=Diagnostics(
            h_total=float(np.sum(weights.h_values)),
            ess_treated=_ess(tw),
            ess_control=_ess(cw),
        ),
    )


def estimate_ipw_unnormalized(
    ds: ObservationalDataset,
    weights: WeightVector,
    estimand: TargetFunction | None = None,
) -> PointEstimate:
    """Single-ratio weighting form: sum (A*Y*w1 - (1-A)*Y*w0) / sum h.

    Kept mainly because the augmented estimator collapses to it when the
    outcome model is identically zero; the normalized form above is what the
    simulations and the command line use.
    """
    h = _h_checked(weights.h_values, ds.n)
    tw = ds.A * weights.w1
    cw = (1.0 - ds.A) * weights.w0
    value = _finite(
        np.sum(tw * ds.Y - cw * ds.Y) / np.sum(h), "unnormalized ipw estimate"
    )
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.IPW_UNNORMALIZED,
        estimand=estimand if estimand is not None else TargetFunction(TargetKind.COVARIATE, label="custom-h"),
        n_used=ds.n,
        diagnostics=Diagnostics(
            h_total=float(np.sum(h)), ess_treated=_ess(tw), ess_control=_ess(cw)
        ),
    )


def estimate_aipw(
    ds: ObservationalDataset,
    pm: PropensityModel | None,
    om: OutcomeModel,
    h_values: NDArray[np.float64],
    estimand: TargetFunction | None = None,
    pi_hat: NDArray[np.float64] | None = None,
) -> PointEstimate:
    """Augmented weighting estimator:

    sum h * [ (A*Y/pi - (A - pi)/pi * m1) - ((1-A)*Y/(1-pi) + (A - pi)/(1-pi) * m0) ] / sum h
    """
    pi = _resolve_pi(ds, pm, pi_hat)
    if pi is None:
        raise MissingModelError("augmented estimator needs a propensity model or pi_hat")
    h = _h_checked(h_values, ds.n)
    m1, m0 = _arm_means(om, ds.X)
    A, Y = ds.A, ds.Y
    arm1 = A * Y / pi - (A - pi) / pi * m1
    arm0 = (1.0 - A) * Y / (1.0 - pi) + (A - pi) / (1.0 - pi) * m0
    value = _finite(np.sum(h * (arm1 - arm0)) / np.sum(h), "augmented estimate")
    et, ec = _ess(A * h / pi), _ess((1.0 - A) * h / (1.0 - pi))
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.AIPW,
        estimand=estimand if estimand is not None else TargetFunction(TargetKind.COVARIATE, label="custom-h"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=float(np.sum(h)), ess_treated=et, ess_control=ec),
    )


def estimate_dr_linear_in_pi(
    ds: ObservationalDataset,
    pm: PropensityModel | None,
    om: OutcomeModel,
    a: float,
    b: float,
    pi_hat: NDArray[np.float64] | None = None,
) -> PointEstimate:
    """Doubly robust form for targets h = a + b*pi:

    sum [ (a + b*A)*(m1 - m0) + (a + b*pi) * (A/pi*(Y - m1) - (1-A)/(1-pi)*(Y - m0)) ]
    / sum (a + b*A)

    The denominator replaces pi with the observed treatment indicator, which
    is what makes the estimator consistent when only one model is right.
    """
    a = float(a)
    b = float(b)
    if a == 0.0 and b == 0.0:
        raise EstimationError("coefficients (a, b) must not both be zero")
    pi = _resolve_pi(ds, pm, pi_hat)
    if pi is None:
        raise MissingModelError("doubly robust estimator needs a propensity model or pi_hat")
    A, Y = ds.A, ds.Y
    c_obs = a + b * A
    denom = float(np.sum(c_obs))
    if denom <= 0.0:
        raise EstimationError("denominator sum(a + b*A) is not positive")
    h = a + b * pi
    if np.any(h < 0.0):
        raise EstimationError("a + b*pi is negative for some observations")
    m1, m0 = _arm_means(om, ds.X)
    resid = A / pi * (Y - m1) - (1.0 - A) / (1.0 - pi) * (Y - m0)
    value = _finite(np.sum(c_obs * (m1 - m0) + h * resid) / denom, "doubly robust estimate")
    et, ec = _ess(A * h / pi), _ess((1.0 - A) * h / (1.0 - pi))
    label = f"linear:{a:g},{b:g}"
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.DR_LINEAR_IN_PI,
        estimand=TargetFunction(TargetKind.LINEAR, a=a, b=b, label=label),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=float(np.sum(h)), ess_treated=et, ess_control=ec),
    )


def estimate_att_dr(
    ds: ObservationalDataset,
    pm: PropensityModel | None,
    om: OutcomeModel,
    pi_hat: NDArray[np.float64] | None = None,
) -> PointEstimate:
    """Doubly robust effect on the treated:

    sum [ A*Y - ( pi*(1-A)*Y/(1-pi) + (A - pi)*m0/(1-pi) ) ] / sum A

    Only the control-arm mean m0 enters; the treated arm is used as is.
    """
    pi = _resolve_pi(ds, pm, pi_hat)
    if pi is None:
        raise MissingModelError("doubly robust estimator needs a propensity model or pi_hat")
    A, Y = ds.A, ds.Y
    n1 = float(np.sum(A))
    if n1 < 1.0:
        raise EstimationError("no treated observations")
    _, m0 = _arm_means(om, ds.X)
    adjusted_control = pi * (1.0 - A) * Y / (1.0 - pi) + (A - pi) * m0 / (1.0 - pi)
    value = _finite(np.sum(A * Y - adjusted_control) / n1, "treated doubly robust estimate")
    et, ec = _ess(A), _ess((1.0 - A) * pi / (1.0 - pi))
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.DR_LINEAR_IN_PI,
        estimand=TargetFunction(TargetKind.ATT, label="att"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=float(np.sum(pi)), ess_treated=et, ess_control=ec),
    )


def estimate_atc_dr(
    ds: ObservationalDataset,
    pm: PropensityModel | None,
    om: OutcomeModel,
    pi_hat: NDArray[np.float64] | None = None,
) -> PointEstimate:
    """Doubly robust effect on the controls:

    sum [ ( (1-pi)*A*Y/pi - (A - pi)*m1/pi ) - (1-A)*Y ] / sum (1-A)
    """
    pi = _resolve_pi(ds, pm, pi_hat)
    if pi is None:
        raise MissingModelError("doubly robust estimator needs a propensity model or pi_hat")
    A, Y = ds.A, ds.Y
    n0 = float(np.sum(1.0 - A))
    if n0 < 1.0:
        raise EstimationError("no control observations")
    m1, _ = _arm_means(om, ds.X)
    adjusted_treated = (1.0 - pi) * A * Y / pi - (A - pi) * m1 / pi
    value = _finite(
        np.sum(adjusted_treated - (1.0 - A) * Y) / n0, "control doubly robust estimate"
    )
    et, ec = _ess(A * (1.0 - pi) / pi), _ess(1.0 - A)
    return PointEstimate(
        value=value,
        estimator=EstimatorKind.DR_LINEAR_IN_PI,
        estimand=TargetFunction(TargetKind.ATC, label="atc"),
        n_used=ds.n,
        diagnostics=Diagnostics(h_total=float(np.sum(1.0 - pi)), ess_treated=et, ess_control=ec),
    )


# Routing table for estimate(): which estimator kinds accept which targets,
# and which fitted models they require.
#   R   regression        needs om; pi only for pi-dependent h (ato, linear)
#   I   weighting         needs pi; h may additionally depend on it
#   A   augmented         needs pi and om
#   D   closed-form DR    needs pi and om; only att/atc/linear targets


def estimate(
    ds: ObservationalDataset,
    kind: EstimatorKind,
    target: TargetFunction,
    pm: PropensityModel | None = None,
    om: OutcomeModel | None = None,
    pi_hat: NDArray[np.float64] | None = None,
    force_plain_aipw: bool = False,
) -> PointEstimate:
    """Dispatch to the right estimator for an (estimator, target) pair.

    ``pi_hat`` overrides model predictions when given (used to inject
    percentile-truncated propensities). For the treated/control/linear
    targets the AIPW request is routed to the closed-form doubly robust
    estimators unless ``force_plain_aipw`` is set; the plain form would need
    h evaluated at the fitted propensity and loses the exact
    denominator-in-A structure.
    """
    pi = _resolve_pi(ds, pm, pi_hat)

    if kind is EstimatorKind.REGRESSION:
        if om is None:
            raise MissingModelError("regression estimator needs an outcome model")
        if target.kind is TargetKind.ATT:
            return estimate_att_regression(ds, om)
        if target.kind is TargetKind.ATC:
            return estimate_atc_regression(ds, om)
        if target.depends_on_propensity and pi is None:
            raise MissingModelError(
                f"regression with target {target.label!r} needs fitted propensities"
            )
        h = evaluate_h(target, ds.X, pi)
        return estimate_regression(ds, om, h, estimand=target)

    if kind in (EstimatorKind.IPW_NORMALIZED, EstimatorKind.IPW_UNNORMALIZED):
        if pi is None:
            raise MissingModelError("weighting estimator needs a propensity model or pi_hat")
        weights = compute_weights(target, ds.X, pi)
        if kind is EstimatorKind.IPW_NORMALIZED:
            return estimate_ipw_normalized(ds, weights, estimand=target)
        return estimate_ipw_unnormalized(ds, weights, estimand=target)

    if kind is EstimatorKind.AIPW:
        if om is None:
            raise MissingModelError("augmented estimator needs an outcome model")
        if pi is None:
            raise MissingModelError("augmented estimator needs a propensity model or pi_hat")
        if not force_plain_aipw:
            if target.kind is TargetKind.ATT:
                return estimate_att_dr(ds, pm, om, pi_hat=pi)
            if target.kind is TargetKind.ATC:
                return estimate_atc_dr(ds, pm, om, pi_hat=pi)
            if target.kind is TargetKind.LINEAR:
                return estimate_dr_linear_in_pi(ds, pm, om, target.a, target.b, pi_hat=pi)
        h = evaluate_h(target, ds.X, pi)
        return estimate_aipw(ds, pm, om, h, estimand=target, pi_hat=pi)

    if kind is EstimatorKind.DR_LINEAR_IN_PI:
        if om is None:
            raise MissingModelError("doubly robust estimator needs an outcome model")
        if pi is None:
            raise MissingModelError("doubly robust estimator needs a propensity model or pi_hat")
        if target.kind is TargetKind.ATT:
            return estimate_att_dr(ds, pm, om, pi_hat=pi)
        if target.kind is TargetKind.ATC:
            return estimate_atc_dr(ds, pm, om, pi_hat=pi)
        if target.kind is TargetKind.LINEAR:
            return estimate_dr_linear_in_pi(ds, pm, om, target.a, target.b, pi_hat=pi)
        raise EstimationError(
            f"closed-form doubly robust estimator only supports targets linear in "
            f"the propensity, not {target.label!r}"
        )

    raise EstimationError(f"unknown estimator kind {kind!r}")
