"""Working models: logistic regression for the propensity score and ordinary
least squares for the outcome.

Both fitters prepend an intercept to the supplied design, check the design
matrix for numerical rank deficiency via QR, and return frozen model objects
that can be pickled into worker processes. The logistic fit is Newton's
method with step halving; convergence is declared when the largest score
component falls below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .data import ObservationalDataset
from .design import DesignSpec
from .errors import ConvergenceError, ModelFitError, RankDeficiencyError


@dataclass(frozen=True)
class FitOptions:
    """Numerical knobs shared by the fitters.

    ``prob_clamp`` bounds every predicted probability into
    ``[clamp, 1 - clamp]`` so inverse weights stay finite.
    """

    tol: float = 1e-8
    max_iter: int = 100
    prob_clamp: float = 1e-12
    rank_tol: float = 1e-10


@dataclass(frozen=True, eq=False)
class PropensityModel:
    alpha: NDArray[np.float64]
    design: DesignSpec
    converged: bool
    iterations: int
    log_likelihood: float
    prob_clamp: float = 1e-12

    @property
    def coef_names(self) -> tuple[str, ...]:
        return ("(intercept)",) + self.design.names


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Linear model E[Y | X, A] = b0 + f(X)'b + A*c0 + A*g(X)'c.

    ``main_design`` supplies f, ``interaction_design`` supplies g. They may
    differ; the coefficient vector is laid out in that order.
    """

    beta: NDArray[np.float64]
    main_design: DesignSpec
    interaction_design: DesignSpec
    residual_variance: float

    @property
    def coef_names(self) -> tuple[str, ...]:
        inter = tuple("a*" + n for n in self.interaction_design.names)
        return ("(intercept)",) + self.main_design.names + ("a",) + inter


def _sigmoid(eta: NDArray[np.float64]) -> NDArray[np.float64]:
    # Piecewise form avoids overflow warnings for large |eta|.
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _clamped_sigmoid(eta: NDArray[np.float64], clamp: float) -> NDArray[np.float64]:
    return np.clip(_sigmoid(eta), clamp, 1.0 - clamp)


def _check_full_rank(M: NDArray[np.float64], rank_tol: float, what: str) -> None:
    if M.shape[1] == 0:
        return
    if M.shape[0] < M.shape[1]:
        raise RankDeficiencyError(
            f"{what}: {M.shape[1]} columns but only {M.shape[0]} rows"
        )
    r_diag = np.abs(np.diag(np.linalg.qr(M, mode="r")))
    top = r_diag.max()
    if top == 0.0 or r_diag.min() <= rank_tol * top:
        raise RankDeficiencyError(
            f"{what} matrix is numerically rank deficient "
            f"(min/max |R_jj| = {r_diag.min():.3e}/{top:.3e})"
        )


def _with_intercept(cols: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.column_stack([np.ones(cols.shape[0]), cols])


def _bernoulli_loglik(
    A: NDArray[np.float64], p: NDArray[np.float64]
) -> float:
    return float(np.sum(A * np.log(p) + (1.0 - A) * np.log1p(-p)))


def fit_propensity(
    ds: ObservationalDataset,
    design: DesignSpec,
    options: FitOptions = FitOptions(),
) -> PropensityModel:
    """Fit logistic regression of treatment on ``[1, design(X)]``.

    Raises :class:`RankDeficiencyError` when the design matrix is singular
    and :class:`ConvergenceError` (with the last iterate attached) when the
    score has not dropped below ``options.tol`` after ``options.max_iter``
    Newton updates.
    """
    M = _with_intercept(design.matrix(ds.X))
    _check_full_rank(M, options.rank_tol, "propensity design")
    A = ds.A
    alpha = np.zeros(M.shape[1])
    p = _clamped_sigmoid(M @ alpha, options.prob_clamp)
    ll = _bernoulli_loglik(A, p)
    converged = False
    updates = 0
    while True:
        score = M.T @ (A - p)
        if float(np.max(np.abs(score))) < options.tol:
            converged = True
            break
        if updates >= options.max_iter:
            break
        w = p * (1.0 - p)
        hessian = (M * w[:, None]).T @ M
        try:
            delta = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            model = PropensityModel(
                alpha=alpha, design=design, converged=False, iterations=updates,
                log_likelihood=ll, prob_clamp=options.prob_clamp,
            )
            raise ConvergenceError(
                "singular information matrix during propensity fit "
                f"(after {updates} updates)", model=model,
            ) from None
        # Halve the step until the log likelihood stops decreasing; Newton's
        # direction is an ascent direction, so this terminates.
        step = 1.0
        for _ in range(50):
            cand = alpha + step * delta
            p_cand = _clamped_sigmoid(M @ cand, options.prob_clamp)
            ll_cand = _bernoulli_loglik(A, p_cand)
            if ll_cand >= ll - 1e-12:
                break
            step *= 0.5
        alpha, p, ll = cand, p_cand, ll_cand
        updates += 1
    pinned = bool(
        np.any(p <= options.prob_clamp) or np.any(p >= 1.0 - options.prob_clamp)
    )
    model = PropensityModel(
        alpha=alpha,
        design=design,
        converged=converged and not pinned,
        iterations=updates,
        log_likelihood=ll,
        prob_clamp=options.prob_clamp,
    )
    if not converged:
        raise ConvergenceError(
            f"propensity fit did not converge in {options.max_iter} updates "
            f"(max |score| = {float(np.max(np.abs(M.T @ (A - p)))):.3e})",
            model=model,
        )
    if pinned:
        # The score can vanish with fitted probabilities stuck at the clamp
        # bounds, which is how separated data present themselves here. Such a
        # fit would feed effectively infinite weights downstream, so report
        # it as a failure rather than a model.
        raise ConvergenceError(
            "fitted probabilities pinned at the clamp bounds; "
            "treatment may be separable from these covariates",
            model=model,
        )
    return model


def predict_propensity(
    model: PropensityModel, X: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Predicted treatment probabilities, clamped into (0, 1)."""
    M = _with_intercept(model.design.matrix(X))
    if M.shape[1] != model.alpha.shape[0]:
        raise ModelFitError(
            f"design evaluates to {M.shape[1]} columns but the model has "
            f"{model.alpha.shape[0]} coefficients"
        )
    return _clamped_sigmoid(M @ model.alpha, model.prob_clamp)


def truncate_propensity(
    pi: NDArray[np.float64], lower_pct: float, upper_pct: float
) -> NDArray[np.float64]:
    """Clip fitted propensities at their own empirical percentiles.

    Percentiles use linear interpolation between order statistics. The pair
    (0, 100) is a no-op apart from clipping at the observed min/max.
    """
    if not (0.0 <= lower_pct < upper_pct <= 100.0):
        raise ValueError(
            f"need 0 <= lower < upper <= 100, got ({lower_pct}, {upper_pct})"
        )
    pi = np.asarray(pi, dtype=np.float64)
    lo, hi = np.percentile(pi, [lower_pct, upper_pct])
    return np.clip(pi, lo, hi)


def fit_outcome(
    ds: ObservationalDataset,
    design: DesignSpec,
    interaction: DesignSpec | None = None,
    options: FitOptions = FitOptions(),
) -> OutcomeModel:
    """Least squares fit of Y on ``[1, design(X), A, A * interaction(X)]``.

    ``interaction`` defaults to ``design``, giving every covariate term a
    treatment interaction. The residual variance uses the usual n - k
    denominator and requires at least one residual degree of freedom.
    """
    inter = design if interaction is None else interaction
    base = design.matrix(ds.X)
    inter_cols = inter.matrix(ds.X)
    M = np.column_stack(
        [np.ones(ds.n), base, ds.A, ds.A[:, None] * inter_cols]
    )
    _check_full_rank(M, options.rank_tol, "outcome design")
    k = M.shape[1]
    if ds.n - k < 1:
        raise ModelFitError(
            f"outcome model has {k} coefficients for {ds.n} rows; "
            "no residual degrees of freedom"
        )
    q, r = np.linalg.qr(M)
    beta = np.linalg.solve(r, q.T @ ds.Y)
    resid = ds.Y - M @ beta
    residual_variance = float(resid @ resid / (ds.n - k))
    return OutcomeModel(
        beta=beta,
        main_design=design,
        interaction_design=inter,
        residual_variance=residual_variance,
    )


def predict_outcome(
    model: OutcomeModel, X: NDArray[np.float64], a: int
) -> NDArray[np.float64]:
    """Model mean outcome had everyone received arm ``a`` (0 or 1)."""
    if a not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {a!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    base = model.main_design.matrix(X)
    inter = model.interaction_design.matrix(X)
    n = X.shape[0]
    arm = np.full(n, float(a))
    M = np.column_stack([np.ones(n), base, arm, arm[:, None] * inter])
    if M.shape[1] != model.beta.shape[0]:
        raise ModelFitError(
            f"design evaluates to {M.shape[1]} columns but the model has "
            f"{model.beta.shape[0]} coefficients"
        )
    return M @ model.beta
