"""Command-line front end.

Subcommands ``test``, ``ci``, ``wbeta-ci`` and ``simulate``.  Results go
to stdout as JSON (and to ``--out DIR`` when given); failures print a
one-line JSON error on stderr.  Exit codes: 0 success, 2 invalid input,
3 numerical or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import stats

from .ci_inversion import confidence_interval, debiased_interval, wbeta_region
from .def_high_dim import WeightSpec, t_db, t_def, t_glm_def, t_w_def
from .glm import t_glm
from .model_core import (
    FAMILIES,
    Dataset,
    NumericalError,
    ValidationError,
    get_family,
    load_dataset,
    read_table,
)
from .ols import t_ols, t_ols_exact
from .sim_harness import METHODS, SCENARIO_DEFAULTS, Scenario, dumps, run_monte_carlo
from .sqrt_lasso import select_lambda

SCHEMA_FILE = "output-v1.json"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
TEST_METHODS = ("t-ols", "t-ols-exact", "t-glm", "t-def", "t-db", "t-w-def", "t-glm-def")
HIGH_DIM = ("t-def", "t-db", "t-w-def", "t-glm-def")


class CliError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # route usage errors through the JSON error channel
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError(message)


def load_schema() -> dict[str, Any]:
    text = resources.files("def_inference").joinpath("schemas", SCHEMA_FILE).read_text(encoding="utf-8")
    return json.loads(text)


# ------------------------------------------------------------------ #
# Argument parsing
# ------------------------------------------------------------------ #


def _add_lambda(p: argparse.ArgumentParser, default_mode: str) -> None:
    g = p.add_argument_group("penalty level")
    g.add_argument("--lambda-mode", choices=("fixed-a", "quantile"), default=default_mode)
    g.add_argument("--a", type=float, default=1.05, help="multiplier A for --lambda-mode fixed-a")
    g.add_argument("--lambda", dest="lam", type=float, help="explicit penalty level (overrides the mode)")


def _add_data(p: argparse.ArgumentParser, exposure: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column name")
    if exposure:
        p.add_argument("--exposure", default="x", help="exposure column name")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="directory for file outputs")
    common.add_argument("--seed", type=int, default=0, help="random seed (simulate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="def-inference", description="Double-estimation-friendly inference")
    parser.add_argument("--schema", action="store_true", help="print the JSON schema of all outputs and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common])

    t = add("test", "conditional independence test of x and y given z")
    t.add_argument("--method", required=True, choices=TEST_METHODS)
    _add_data(t)
    t.add_argument("--family-y", choices=sorted(FAMILIES), default="gaussian")
    t.add_argument("--family-x", choices=sorted(FAMILIES), default="gaussian")
    t.add_argument("--correction-mode", choices=("full", "z-only"), default="full")
    t.add_argument("--weights-y", help="CSV with one column of positive weights for the y-model (t-w-def)")
    t.add_argument("--weights-x", help="CSV with one column of positive weights for the x-model (t-w-def)")
    t.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    t.add_argument("--penalize-exposure", action="store_true", help="t-db: penalise the exposure coefficient")
    t.add_argument("--split", action="store_true", help="t-glm-def: fit the GLMs and the statistic on separate halves")
    _add_lambda(t, "fixed-a")

    c = add("ci", "confidence interval for theta in y = theta x + f(z, eps)")
    _add_data(c)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--interval-method", choices=("def", "db"), default="def")
    _add_lambda(c, "fixed-a")

    w = add("wbeta-ci", "confidence interval for w' beta in y = z beta + eps")
    _add_data(w, exposure=False)
    w.add_argument("--w-file", required=True, help="CSV with one column holding w (one row per control)")
    w.add_argument("--alpha", type=float, default=0.05)
    _add_lambda(w, "fixed-a")

    s = add("simulate", "Monte Carlo study of one method on one scenario")
    s.add_argument("--scenario", required=True, choices=sorted(SCENARIO_DEFAULTS))
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--sigma", type=float, default=0.0, help="misspecification level (poisson-misspec)")
    s.add_argument("--theta", type=float, help="fixed theta for partial-linear scenarios")
    s.add_argument("--sparsity", type=int, default=3)
    s.add_argument("--design", choices=("toeplitz", "csv"), default="toeplitz")
    s.add_argument("--design-csv", help="design matrix CSV for --design csv")
    _add_lambda(s, "quantile")
    return parser


# ------------------------------------------------------------------ #
# Commands
# ------------------------------------------------------------------ #


def _lambda(args, n: int, p: int) -> float:
    if args.lam is not None:
        if not args.lam > 0:
            raise ValidationError("--lambda must be positive")
        return float(args.lam)
    return select_lambda(n, p, args.lambda_mode, args.a)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValidationError("--alpha must lie in (0, 1)")


def _read_vector(path: str, length: int, what: str) -> np.ndarray:
    header, m = read_table(path)
    if m.shape[1] != 1:
        raise ValidationError(f"{path}: {what} file must have exactly one column, found {m.shape[1]}")
    if m.shape[0] != length:
        raise ValidationError(f"{path}: {what} has {m.shape[0]} entries, expected {length}")
    return m[:, 0]


def _scalar_diagnostics(diag: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in diag.items():
        if isinstance(v, (bool, np.bool_, str)) or v is None:
            out[k] = v if not isinstance(v, np.bool_) else bool(v)
        elif isinstance(v, (int, float, np.integer, np.floating)):
            out[k] = v
    return out


def _validate_test_args(args) -> None:
    if args.family_x != "gaussian" and args.method != "t-glm-def":
        raise ValidationError(f"--family-x only applies to t-glm-def, not {args.method}")
    if args.family_y != "gaussian" and args.method not in ("t-glm", "t-glm-def"):
        raise ValidationError(f"--family-y only applies to t-glm and t-glm-def, not {args.method}")
    if (args.weights_y or args.weights_x) and args.method != "t-w-def":
        raise ValidationError("--weights-y/--weights-x only apply to t-w-def")
    if args.method not in HIGH_DIM and (args.lam is not None or args.lambda_mode != "fixed-a"):
        raise ValidationError(f"{args.method} takes no penalty level")
    if args.penalize_exposure and args.method != "t-db":
        raise ValidationError("--penalize-exposure only applies to t-db")
    if args.split and args.method != "t-glm-def":
        raise ValidationError("--split only applies to t-glm-def")


def cmd_test(args) -> dict[str, Any]:
    _validate_test_args(args)
    ds = load_dataset(args.data, args.response, args.exposure)
    m = args.method
    if m == "t-ols":
        res = t_ols(ds)
    elif m == "t-ols-exact":
        res = t_ols_exact(ds)
    elif m == "t-glm":
        res = t_glm(ds, get_family(args.family_y), args.correction_mode)
    else:
        lam = _lambda(args, ds.n, ds.p)
        if m == "t-def":
            res = t_def(ds, lam, lam)
        elif m == "t-db":
            res = t_db(ds, lam, lam, penalize_exposure=args.penalize_exposure)
        elif m == "t-w-def":
            d_y = np.ones(ds.n) if args.weights_y is None else _read_vector(args.weights_y, ds.n, "weights-y")
            d_x = np.ones(ds.n) if args.weights_x is None else _read_vector(args.weights_x, ds.n, "weights-x")
            res = t_w_def(ds.y, ds.x, ds.z, WeightSpec(d_y, d_x), lam)
        else:
            res = t_glm_def(ds, get_family(args.family_y), get_family(args.family_x), lam, split=args.split)
    if args.alternative == "two-sided":
        pval = res.p_value
    elif m == "t-ols-exact":
        df = res.diagnostics["df"]
        pval = float(stats.t.sf(res.statistic, df) if args.alternative == "greater" else stats.t.cdf(res.statistic, df))
    else:
        pval = res.one_sided(args.alternative)
    return {
        "schema_version": 1,
        "kind": "test",
        "method": m,
        "statistic": res.statistic,
        "p_value": pval,
        "alternative": args.alternative,
        "n": ds.n,
        "p": ds.p,
        "diagnostics": _scalar_diagnostics(res.diagnostics),
    }


def _interval_json(iv, method: str, lam: float | None, n: int, p: int) -> dict[str, Any]:
    out = {"schema_version": 1, "kind": "interval", "method": method, **iv.to_dict()}
    out.update({"lambda": lam, "n": n, "p": p})
    return out


def cmd_ci(args) -> dict[str, Any]:
    _check_alpha(args.alpha)
    ds = load_dataset(args.data, args.response, args.exposure)
    lam = _lambda(args, ds.n, ds.p)
    if args.interval_method == "def":
        iv = confidence_interval(ds, args.alpha, lam, lam)
    else:
        iv = debiased_interval(ds, args.alpha, lam, lam)
    return _interval_json(iv, args.interval_method, lam, ds.n, ds.p)


def cmd_wbeta(args) -> dict[str, Any]:
    _check_alpha(args.alpha)
    header, m = read_table(args.data, (args.response,))
    iy = header.index(args.response)
    y = m[:, iy]
    z = np.delete(m, iy, axis=1)
    if z.shape[1] == 0:
        raise ValidationError(f"{args.data}: no control columns besides '{args.response}'")
    ds = Dataset(y, np.zeros_like(y), z)  # validates shapes and finiteness
    w = _read_vector(args.w_file, ds.p, "w")
    lam = _lambda(args, ds.n, ds.p)
    iv = wbeta_region(y, z, w, args.alpha, lam)
    return _interval_json(iv, "wbeta", lam, ds.n, ds.p)


def cmd_simulate(args) -> dict[str, Any]:
    _check_alpha(args.alpha)
    if args.threads < 1:
        raise ValidationError("--threads must be at least 1")
    if args.reps < 1:
        raise ValidationError("--reps must be at least 1")
    if args.design == "csv" and not args.design_csv:
        raise ValidationError("--design csv needs --design-csv PATH")
    sc = Scenario(
        args.scenario,
        n=args.n,
        p=args.p,
        seed=args.seed,
        design=args.design,
        rho=args.rho,
        csv_path=args.design_csv,
        sigma=args.sigma,
        theta=args.theta,
        sparsity=args.sparsity,
    )
    summary = run_monte_carlo(
        sc,
        args.method,
        args.reps,
        alpha=args.alpha,
        lam=args.lam,
        lambda_mode=args.lambda_mode,
        a=args.a,
        threads=args.threads,
    )
    out = Path(args.out) if args.out else None
    if out is not None:
        summary.write(out)
    return summary.summary_dict()


COMMANDS = {"test": cmd_test, "ci": cmd_ci, "wbeta-ci": cmd_wbeta, "simulate": cmd_simulate}


def _emit_error(exc: Exception, code: int) -> int:
    payload = {
        "schema_version": 1,
        "kind": "error",
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
        if args.schema:
            sys.stdout.write(json.dumps(load_schema(), indent=2) + "\n")
            return EXIT_OK
        if args.command is None:
            raise CliError("a subcommand is required (test, ci, wbeta-ci, simulate)")
        result = COMMANDS[args.command](args)
        text = dumps(result)
        if args.out and args.command != "simulate":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "result.json").write_text(text + "\n", encoding="utf-8")
        sys.stdout.write(text + "\n")
        return EXIT_OK
    except ValidationError as exc:
        return _emit_error(exc, EXIT_VALIDATION)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _emit_error(exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _emit_error(ValidationError(str(exc)), EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
