"""Pairs bootstrap with full pipeline refitting.

Every replicate resamples rows with replacement, refits every model in the
pipeline from scratch and recomputes the statistic. Replicates where any fit
fails (a resample can easily lose one arm or go rank deficient) are dropped
and counted; if more than ``max_failed_fraction`` fail the run aborts,
because a standard error from the survivors would be misleading.

Replicate i draws its indices from a dedicated random stream keyed by
``(seed, i)``, so results are identical for any worker count or scheduling
order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .data import ObservationalDataset
from .errors import BootstrapError, WateError
from .estimators import EstimatorKind, PointEstimate, estimate
from .models import (
    FitOptions,
    fit_outcome,
    fit_propensity,
    predict_propensity,
    truncate_propensity,
)
from .design import DesignSpec
from .targets import TargetFunction


@dataclass(frozen=True)
class EstimationPipeline:
    """Everything needed to go from raw data to one point estimate.

    ``pi_design`` / ``m_design`` of ``None`` mean the corresponding model is
    not fitted (the dispatcher then rejects estimators that need it).
    ``truncate`` is a percentile pair applied to the fitted propensities
    before any weight is formed; the target function is evaluated on the
    truncated values too.
    """

    estimand: TargetFunction
    kind: EstimatorKind
    pi_design: DesignSpec | None = None
    m_design: DesignSpec | None = None
    m_interaction: DesignSpec | None = None
    truncate: tuple[float, float] | None = None
    options: FitOptions = field(default_factory=FitOptions)
    force_plain_aipw: bool = False


def run_pipeline(ds: ObservationalDataset, pipeline: EstimationPipeline) -> PointEstimate:
    """Fit the models the pipeline declares, then estimate."""
    pm = None
    pi_hat = None
    if pipeline.pi_design is not None:
        pm = fit_propensity(ds, pipeline.pi_design, pipeline.options)
        pi_hat = predict_propensity(pm, ds.X)
        if pipeline.truncate is not None:
            pi_hat = truncate_propensity(pi_hat, *pipeline.truncate)
    om = None
    if pipeline.m_design is not None:
        om = fit_outcome(ds, pipeline.m_design, pipeline.m_interaction, pipeline.options)
    return estimate(
        ds,
        pipeline.kind,
        pipeline.estimand,
        pm=pm,
        om=om,
        pi_hat=pi_hat,
        force_plain_aipw=pipeline.force_plain_aipw,
    )


@dataclass(frozen=True)
class _PipelineStatistic:
    """Picklable adapter turning a pipeline into a length-1 vector statistic."""

    pipeline: EstimationPipeline

    def __call__(self, ds: ObservationalDataset) -> NDArray[np.float64]:
        return np.array([run_pipeline(ds, self.pipeline).value])


@dataclass(frozen=True, eq=False)
class BootstrapSamples:
    """Raw replicate values: shape (b, n_out); a failed replicate is a row of
    NaN, a per-entry failure inside an otherwise fine replicate is a single
    NaN."""

    values: NDArray[np.float64]
    n_failed: int

    @property
    def b(self) -> int:
        return self.values.shape[0]


def _replicate_indices(seed: int, i: int, n: int) -> NDArray[np.intp]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
    return rng.integers(0, n, size=n)


def _run_replicates(
    ds: ObservationalDataset,
    statistic: Callable[[ObservationalDataset], NDArray[np.float64]],
    n_out: int,
    seed: int,
    indices: Sequence[int],
) -> list[tuple[int, NDArray[np.float64]]]:
    out = []
    for i in indices:
        idx = _replicate_indices(seed, int(i), ds.n)
        try:
            row = np.asarray(statistic(ds.replace_rows(idx)), dtype=np.float64).ravel()
            if row.shape[0] != n_out:
                raise BootstrapError(
                    f"statistic returned length {row.shape[0]}, expected {n_out}"
                )
        except WateError:
            row = np.full(n_out, np.nan)
        out.append((int(i), row))
    return out


def _chunks(count: int, pieces: int) -> list[range]:
    pieces = max(1, min(pieces, count))
    bounds = np.linspace(0, count, pieces + 1).astype(int)
    return [range(bounds[k], bounds[k + 1]) for k in range(pieces) if bounds[k] < bounds[k + 1]]


def bootstrap_vector(
    ds: ObservationalDataset,
    statistic: Callable[[ObservationalDataset], NDArray[np.float64]],
    n_out: int,
    b: int = 1000,
    seed: int = 0,
    workers: int = 1,
    max_failed_fraction: float = 0.2,
) -> BootstrapSamples:
    """Evaluate a vector statistic on ``b`` bootstrap resamples.

    ``statistic`` must be picklable when ``workers > 1`` (a module-level
    function, or a frozen dataclass with ``__call__``). Output is invariant
    to ``workers``.
    """
    if b < 2:
        raise ValueError(f"need at least 2 replicates, got {b}")
    values = np.empty((b, n_out))
    if workers <= 1:
        results = _run_replicates(ds, statistic, n_out, seed, range(b))
    else:
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_replicates, ds, statistic, n_out, seed, list(chunk))
                for chunk in _chunks(b, workers * 4)
            ]
            for fut in futures:
                results.extend(fut.result())
    for i, row in results:
        values[i] = row
    n_failed = int(np.sum(np.all(np.isnan(values), axis=1))) if n_out else 0
    if n_failed > max_failed_fraction * b:
        raise BootstrapError(
            f"{n_failed} of {b} bootstrap replicates failed "
            f"(limit {max_failed_fraction:.0%}); refusing to report standard errors"
        )
    return BootstrapSamples(values=values, n_failed=n_failed)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Point estimate plus bootstrap spread.

    ``se`` is the sample standard deviation (ddof=1) of the surviving
    replicate values. ``ci_lower``/``ci_upper`` are plain percentile bounds
    at the requested level; they are a convenience on top of the standard
    error, not a separately calibrated interval.
    """

    point: PointEstimate
    se: float
    b: int
    b_ok: int
    replicate_values: NDArray[np.float64]
    seed: int
    ci_level: float
    ci_lower: float
    ci_upper: float


def bootstrap_se(
    ds: ObservationalDataset,
    pipeline: EstimationPipeline,
    b: int = 1000,
    seed: int = 0,
    workers: int = 1,
    ci_level: float = 0.95,
    max_failed_fraction: float = 0.2,
) -> BootstrapResult:
    """Standard error for one pipeline by the pairs bootstrap.

    The full-data point estimate is computed first and any failure there is
    raised as is: if the pipeline cannot run on the original data, a
    bootstrap around it has no meaning.
    """
    point = run_pipeline(ds, pipeline)
    samples = bootstrap_vector(
        ds,
        _PipelineStatistic(pipeline),
        n_out=1,
        b=b,
        seed=seed,
        workers=workers,
        max_failed_fraction=max_failed_fraction,
    )
    vals = samples.values[:, 0]
    ok = vals[np.isfinite(vals)]
    if ok.shape[0] < 2:
        raise BootstrapError("fewer than 2 successful replicates")
    se = float(np.std(ok, ddof=1))
    alpha = 100.0 * (1.0 - ci_level) / 2.0
    lo, hi = np.percentile(ok, [alpha, 100.0 - alpha])
    return BootstrapResult(
        point=point,
        se=se,
        b=b,
        b_ok=int(ok.shape[0]),
        replicate_values=vals,
        seed=seed,
        ci_level=ci_level,
        ci_lower=float(lo),
        ci_upper=float(hi),
    )
