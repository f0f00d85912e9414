"""Command line interface.

Three subcommands:

* ``estimate``: point estimates and bootstrap standard errors for chosen
  estimand/estimator combinations on a CSV dataset;
* ``simulate``: the Monte Carlo study grid (bias/RMSE per cell);
* ``true-values``: population contrasts of the built-in generator.

Every option can also be supplied through ``--config FILE`` holding
``key = value`` lines (keys are the long option names); explicit flags win
over the file, the file wins over built-in defaults. Reports embed the
resolved configuration as comment lines, except for ``workers`` and ``out``
which cannot change any number in the report.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import __version__
from .bootstrap import bootstrap_vector
from .data import ObservationalDataset, load_csv
from .design import DesignSpec, main_effects, parse_design
from .errors import WateError
from .estimators import EstimatorKind, estimate
from .models import (
    FitOptions,
    fit_outcome,
    fit_propensity,
    predict_propensity,
    truncate_propensity,
)
from .simulation import SimulationDesign, run_study, true_estimands
from .targets import (
    TargetFunction,
    average_effect,
    covariate_target,
    effect_on_controls,
    effect_on_treated,
    linear_in_propensity,
    overlap_effect,
)

_ESTIMATE_DEFAULTS = {
    "treatment": "a",
    "outcome": "y",
    "covariates": "",
    "estimand": "ate,att,atc,ato",
    "estimator": "regression,ipw,aipw",
    "pi-design": "",
    "m-design": "",
    "m-interaction": "",
    "truncate": "",
    "bootstrap": "1000",
    "seed": "0",
    "workers": "1",
    "out": "",
    "format": "both",
}

_SIMULATE_DEFAULTS = {
    "outcome-model": "1",
    "n": "1000",
    "reps": "1000",
    "estimand": "ate,att,atc,ato",
    "estimator": "regression,ipw,dr",
    "truncate": "",
    "truth-draws": "1000000",
    "seed": "0",
    "workers": "1",
    "out": "",
    "format": "both",
}

_TRUE_VALUES_DEFAULTS = {
    "outcome-model": "1,2",
    "draws": "1000000",
    "seed": "0",
    "out": "",
}


class CliError(Exception):
    """Bad usage detected after argument parsing."""


@dataclass(frozen=True)
class _DesignSum:
    """Picklable h(x) built from a design expression: the row sum of the
    evaluated terms."""

    spec: DesignSpec

    def __call__(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        cols = self.spec.matrix(X)
        return cols.sum(axis=1)


def parse_estimand_token(token: str, covariate_names: tuple[str, ...]) -> TargetFunction:
    """ate | att | atc | ato | linear:a,b | expr:<column expression>."""
    t = token.strip()
    plain = {
        "ate": average_effect,
        "att": effect_on_treated,
        "atc": effect_on_controls,
        "ato": overlap_effect,
    }
    if t.lower() in plain:
        return plain[t.lower()]()
    if t.lower().startswith("linear:"):
        body = t[len("linear:"):]
        parts = body.split(",")
        if len(parts) != 2:
            raise CliError(f"estimand {token!r}: expected linear:a,b")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            raise CliError(f"estimand {token!r}: coefficients must be numbers") from None
        try:
            return linear_in_propensity(a, b)
        except ValueError as exc:
            raise CliError(f"estimand {token!r}: {exc}") from None
    if t.lower().startswith("expr:"):
        body = t[len("expr:"):].strip()
        try:
            spec = parse_design(body, covariate_names)
        except WateError as exc:
            raise CliError(f"estimand {token!r}: {exc}") from None
        if not spec.terms:
            raise CliError(f"estimand {token!r}: empty expression")
        return covariate_target(_DesignSum(spec), label=f"expr:{body}")
    raise CliError(
        f"unknown estimand token {token!r} "
        "(expected ate, att, atc, ato, linear:a,b or expr:...)"
    )


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _split_estimands(text: str) -> list[str]:
    """Split a comma-separated estimand list, keeping ``linear:a,b`` whole:
    a numeric fragment right after ``linear:<number>`` is its b coefficient,
    not a new token."""
    parts = [t.strip() for t in text.split(",")]
    out: list[str] = []
    i = 0
    while i < len(parts):
        t = parts[i]
        if (
            t.lower().startswith("linear:")
            and _is_number(t[len("linear:"):])
            and i + 1 < len(parts)
            and _is_number(parts[i + 1])
        ):
            out.append(t + "," + parts[i + 1])
            i += 2
            continue
        if t:
            out.append(t)
        i += 1
    return out


def _parse_truncate(text: str) -> tuple[float, float] | None:
    if not text.strip():
        return None
    parts = _split_list(text)
    if len(parts) != 2:
        raise CliError(f"--truncate expects two percentiles, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise CliError(f"--truncate values must be numbers, got {text!r}") from None
    if not (0.0 <= lo < hi <= 100.0):
        raise CliError(f"--truncate needs 0 <= low < high <= 100, got {text!r}")
    return (lo, hi)


def _parse_int(resolved: dict[str, str], key: str, minimum: int) -> int:
    try:
        value = int(resolved[key])
    except ValueError:
        raise CliError(f"--{key} must be an integer, got {resolved[key]!r}") from None
    if value < minimum:
        raise CliError(f"--{key} must be >= {minimum}, got {value}")
    return value


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                out[key.strip().replace("_", "-")] = value.strip()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    return out


def _resolve_options(
    args: argparse.Namespace, defaults: dict[str, str]
) -> dict[str, str]:
    """Built-in defaults, overridden by the config file, overridden by
    explicit flags (argparse stores None when a flag was not given)."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        config = _load_config(args.config)
        unknown = set(config) - set(defaults)
        if unknown:
            raise CliError(
                f"config file has unknown keys for this command: {sorted(unknown)}"
            )
        resolved.update(config)
    for key in defaults:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            resolved[key] = flag_value
    return resolved


def _echo_lines(command: str, resolved: dict[str, str]) -> list[str]:
    lines = [f"# command = {command}"]
    for key in sorted(resolved):
        if key in ("workers", "out"):
            continue
        lines.append(f"# {key} = {resolved[key]}")
    return lines


# ---------------------------------------------------------------------------
# estimate


@dataclass(frozen=True)
class ReportTask:
    """Everything a bootstrap replicate needs to recompute every cell."""

    methods: tuple[str, ...]
    tokens: tuple[str, ...]
    targets: tuple[TargetFunction, ...]
    cells: tuple[tuple[int, int], ...]  # (method index, estimand index)
    pi_design: DesignSpec | None
    m_design: DesignSpec | None
    m_interaction: DesignSpec | None
    truncate: tuple[float, float] | None
    options: FitOptions


_METHOD_KINDS = {
    "regression": EstimatorKind.REGRESSION,
    "ipw": EstimatorKind.IPW_NORMALIZED,
    "aipw": EstimatorKind.AIPW,
}


def _cell_applicable(method: str, target: TargetFunction) -> bool:
    if method == "unweighted":
        return target.label == "ate"
    if method == "regression":
        # No propensity model is fitted for this row, so only targets that
        # either ignore the propensity or have indicator forms are available.
        return target.label in ("att", "atc") or not target.depends_on_propensity
    return True


def build_report_task(
    methods: list[str],
    tokens: list[str],
    covariate_names: tuple[str, ...],
    pi_design: DesignSpec | None,
    m_design: DesignSpec | None,
    m_interaction: DesignSpec | None,
    truncate: tuple[float, float] | None,
) -> ReportTask:
    targets = tuple(parse_estimand_token(t, covariate_names) for t in tokens)
    cells = []
    needs_om = False
    needs_pm = False
    for mi, method in enumerate(methods):
        for ei, target in enumerate(targets):
            if not _cell_applicable(method, target):
                continue
            cells.append((mi, ei))
            if method in ("regression", "aipw"):
                needs_om = True
            if method in ("ipw", "aipw"):
                needs_pm = True
    return ReportTask(
        methods=tuple(methods),
        tokens=tuple(tokens),
        targets=targets,
        cells=tuple(cells),
        pi_design=pi_design if needs_pm else None,
        m_design=m_design if needs_om else None,
        m_interaction=m_interaction,
        truncate=truncate,
        options=FitOptions(),
    )


def _unweighted_difference(ds: ObservationalDataset) -> float:
    treated = ds.Y[ds.A == 1.0]
    control = ds.Y[ds.A == 0.0]
    if treated.size == 0 or control.size == 0:
        raise WateError("an arm is empty")
    return float(np.mean(treated) - np.mean(control))


def _report_cells(
    task: ReportTask, ds: ObservationalDataset, collect_notes: bool = False
) -> tuple[NDArray[np.float64], list[str]]:
    values = np.full(len(task.cells), np.nan)
    notes = [""] * len(task.cells)
    pi_hat = None
    pi_note = ""
    if task.pi_design is not None:
        try:
            pm = fit_propensity(ds, task.pi_design, task.options)
            pi_hat = predict_propensity(pm, ds.X)
            if task.truncate is not None:
                pi_hat = truncate_propensity(pi_hat, *task.truncate)
        except WateError as exc:
            pi_note = f"propensity fit failed: {exc}"
    om = None
    om_note = ""
    if task.m_design is not None:
        try:
            om = fit_outcome(ds, task.m_design, task.m_interaction, task.options)
        except WateError as exc:
            om_note = f"outcome fit failed: {exc}"
    for j, (mi, ei) in enumerate(task.cells):
        method = task.methods[mi]
        target = task.targets[ei]
        try:
            if method == "unweighted":
                values[j] = _unweighted_difference(ds)
            else:
                if method in ("ipw", "aipw") and pi_hat is None:
                    raise WateError(pi_note or "no fitted propensities")
                if method in ("regression", "aipw") and om is None:
                    raise WateError(om_note or "no fitted outcome model")
                values[j] = estimate(
                    ds, _METHOD_KINDS[method], target, om=om, pi_hat=pi_hat
                ).value
        except WateError as exc:
            if collect_notes:
                notes[j] = str(exc)
    return values, notes


@dataclass(frozen=True)
class _ReportStatistic:
    task: ReportTask

    def __call__(self, ds: ObservationalDataset) -> NDArray[np.float64]:
        return _report_cells(self.task, ds)[0]


def _fmt_value(v: float) -> str:
    return "%.6g" % v


def _estimate_report_texts(
    ds: ObservationalDataset,
    task: ReportTask,
    echo: list[str],
    b: int,
    seed: int,
    workers: int,
) -> tuple[str, str, bool]:
    """Returns (csv text, markdown text, all cells ok)."""
    points, notes = _report_cells(task, ds, collect_notes=True)
    ses = np.full(len(task.cells), np.nan)
    b_ok = np.zeros(len(task.cells), dtype=int)
    if b > 0:
        samples = bootstrap_vector(
            ds, _ReportStatistic(task), n_out=len(task.cells), b=b,
            seed=seed, workers=workers,
        )
        for j in range(len(task.cells)):
            col = samples.values[:, j]
            finite = col[np.isfinite(col)]
            b_ok[j] = finite.shape[0]
            if finite.shape[0] >= 2:
                ses[j] = float(np.std(finite, ddof=1))
    all_ok = bool(np.all(np.isfinite(points)))

    csv_lines = list(echo)
    csv_lines.append(
        f"# n = {ds.n}, treated = {ds.n_treated}, control = {ds.n_control}"
    )
    csv_lines.append("method,estimand,estimate,se,bootstrap_ok,note")
    by_cell = {}
    for j, (mi, ei) in enumerate(task.cells):
        method = task.methods[mi]
        token = task.tokens[ei]
        token_csv = f'"{token}"' if "," in token else token
        est_txt = _fmt_value(points[j]) if np.isfinite(points[j]) else ""
        se_txt = _fmt_value(ses[j]) if np.isfinite(ses[j]) else ""
        note = notes[j].replace(",", ";").replace("\n", " ")
        csv_lines.append(
            f"{method},{token_csv},{est_txt},{se_txt},{b_ok[j] if b > 0 else ''},{note}"
        )
        by_cell[(method, token)] = (points[j], ses[j], notes[j])
    csv_text = "\n".join(csv_lines) + "\n"

    md_lines = list(echo)
    md_lines.append("")
    md_lines.append(
        f"n = {ds.n} ({ds.n_treated} treated, {ds.n_control} control); "
        + (f"bootstrap B = {b}" if b > 0 else "no bootstrap")
    )
    md_lines.append("")
    header = "| method |"
    rule = "|---|"
    for token in task.tokens:
        header += f" {token} |"
        rule += "---|"
    md_lines.append(header)
    md_lines.append(rule)
    for mi, method in enumerate(task.methods):
        row = f"| {method} |"
        for token in task.tokens:
            entry = by_cell.get((method, token))
            if entry is None:
                row += " - |"
                continue
            point, se, note = entry
            if not np.isfinite(point):
                row += " failed |"
            elif np.isfinite(se):
                row += f" {_fmt_value(point)} ({_fmt_value(se)}) |"
            else:
                row += f" {_fmt_value(point)} |"
        md_lines.append(row)
    failures = [
        (task.methods[mi], task.tokens[ei], notes[j])
        for j, (mi, ei) in enumerate(task.cells)
        if notes[j]
    ]
    if failures:
        md_lines.append("")
        md_lines.append("Failures:")
        for method, token, note in failures:
            md_lines.append(f"- {method} / {token}: {note}")
    md_text = "\n".join(md_lines) + "\n"
    return csv_text, md_text, all_ok


def _write_outputs(out: str, fmt: str, csv_text: str, md_text: str) -> None:
    if not out:
        sys.stdout.write(md_text if fmt in ("both", "md") else csv_text)
        return
    if fmt in ("both", "csv"):
        with open(out + ".csv", "w") as fh:
            fh.write(csv_text)
    if fmt in ("both", "md"):
        with open(out + ".md", "w") as fh:
            fh.write(md_text)


def _check_format(resolved: dict[str, str]) -> str:
    fmt = resolved["format"].strip().lower()
    if fmt not in ("both", "csv", "md"):
        raise CliError(f"--format must be csv, md or both, got {resolved['format']!r}")
    return fmt


def _cmd_estimate(args: argparse.Namespace) -> int:
    resolved = _resolve_options(args, _ESTIMATE_DEFAULTS)
    if not getattr(args, "data", None):
        raise CliError("estimate: a dataset CSV path is required")
    fmt = _check_format(resolved)
    covariates = _split_list(resolved["covariates"]) or None
    try:
        ds = load_csv(
            args.data,
            treatment=resolved["treatment"],
            outcome=resolved["outcome"],
            covariates=covariates,
        )
    except OSError as exc:
        raise CliError(f"cannot read {args.data}: {exc}") from None
    names = ds.covariate_names
    methods = ["unweighted"] + _split_list(resolved["estimator"])
    for m in methods[1:]:
        if m not in _METHOD_KINDS:
            raise CliError(f"unknown estimator token {m!r} (regression, ipw, aipw)")
    tokens = _split_estimands(resolved["estimand"])
    if not tokens:
        raise CliError("no estimands requested")
    pi_design = (
        parse_design(resolved["pi-design"], names)
        if resolved["pi-design"].strip()
        else main_effects(names)
    )
    m_design = (
        parse_design(resolved["m-design"], names)
        if resolved["m-design"].strip()
        else main_effects(names)
    )
    m_interaction = (
        parse_design(resolved["m-interaction"], names)
        if resolved["m-interaction"].strip()
        else None
    )
    task = build_report_task(
        methods,
        tokens,
        names,
        pi_design,
        m_design,
        m_interaction,
        _parse_truncate(resolved["truncate"]),
    )
    b = _parse_int(resolved, "bootstrap", 0)
    if b == 1:
        raise CliError("--bootstrap must be 0 (off) or at least 2")
    seed = _parse_int(resolved, "seed", 0)
    workers = _parse_int(resolved, "workers", 1)
    echo = _echo_lines("estimate", {**resolved, "data": args.data})
    csv_text, md_text, all_ok = _estimate_report_texts(
        ds, task, echo, b, seed, workers
    )
    _write_outputs(resolved["out"], fmt, csv_text, md_text)
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args: argparse.Namespace) -> int:
    resolved = _resolve_options(args, _SIMULATE_DEFAULTS)
    fmt = _check_format(resolved)
    models = [int(t) for t in _split_list(resolved["outcome-model"])]
    sizes = [int(t) for t in _split_list(resolved["n"])]
    reps = _parse_int(resolved, "reps", 2)
    seed = _parse_int(resolved, "seed", 0)
    workers = _parse_int(resolved, "workers", 1)
    truth_draws = _parse_int(resolved, "truth-draws", 1000)
    estimators = tuple(_split_list(resolved["estimator"]))
    estimands = tuple(_split_list(resolved["estimand"]))
    truncate = _parse_truncate(resolved["truncate"])
    echo = _echo_lines("simulate", resolved)

    csv_parts: list[str] = []
    md_parts: list[str] = []
    for model in models:
        for n in sizes:
            design = SimulationDesign(
                outcome_model=model,
                n=n,
                replications=reps,
                seed=seed,
                estimators=estimators,
                estimands=estimands,
                truncate=truncate,
                workers=workers,
                truth_draws=truth_draws,
            )
            report = run_study(design)
            text = report.to_csv_text()
            if csv_parts:
                text = text.split("\n", 1)[1]
            csv_parts.append(text)
            md_parts.append(report.to_markdown_text())
    echo_text = "\n".join(echo) + "\n"
    csv_text = echo_text + "".join(csv_parts)
    md_text = echo_text + "\n" + "\n".join(md_parts)
    _write_outputs(resolved["out"], fmt, csv_text, md_text)
    return 0


# ---------------------------------------------------------------------------
# true-values


def _cmd_true_values(args: argparse.Namespace) -> int:
    resolved = _resolve_options(args, _TRUE_VALUES_DEFAULTS)
    models = [int(t) for t in _split_list(resolved["outcome-model"])]
    draws = _parse_int(resolved, "draws", 1000)
    seed = _parse_int(resolved, "seed", 0)
    echo = _echo_lines("true-values", resolved)
    lines = list(echo)
    lines.append("outcome_model,estimand,value,mc_se,draws")
    for model in models:
        rng = np.random.default_rng(seed)
        truth = true_estimands(model, draws, rng)
        for estimand in ("ate", "att", "atc", "ato"):
            lines.append(
                f"{model},{estimand},{truth.value(estimand):.6f},"
                f"{truth.mc_se(estimand):.6f},{draws}"
            )
    text = "\n".join(lines) + "\n"
    if resolved["out"]:
        with open(resolved["out"] + ".csv", "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wate",
        description="Weighted average treatment effect estimation and simulation.",
    )
    parser.add_argument("--version", action="version", version=f"wate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate effects on a CSV dataset")
    est.add_argument("data", help="path to a CSV file with a header row")
    est.add_argument("--config", help="key = value option file")
    for key in _ESTIMATE_DEFAULTS:
        est.add_argument(f"--{key}", dest=key.replace("-", "_"), default=None)
    est.set_defaults(func=_cmd_estimate)

    sim = sub.add_parser("simulate", help="run the Monte Carlo study grid")
    sim.add_argument("--config", help="key = value option file")
    for key in _SIMULATE_DEFAULTS:
        sim.add_argument(f"--{key}", dest=key.replace("-", "_"), default=None)
    sim.set_defaults(func=_cmd_simulate)

    tv = sub.add_parser("true-values", help="population contrasts of the generator")
    tv.add_argument("--config", help="key = value option file")
    for key in _TRUE_VALUES_DEFAULTS:
        tv.add_argument(f"--{key}", dest=key.replace("-", "_"), default=None)
    tv.set_defaults(func=_cmd_true_values)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
