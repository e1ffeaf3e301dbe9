"""Command-line interface.

Three subcommands:

``simulate``
    Run a Monte Carlo study and write records/metrics/summary/variance-table
    CSVs to the output directory.

``estimate``
    Apply the estimator to a dataset CSV (columns ``w1..wK, a, y``) at a fixed
    truncation level or with an adaptive selector, and print a report.

``tables``
    Re-aggregate a ``records.csv`` into metrics/summary/variance-table CSVs
    (byte-identical to the originals) plus tidy plot-data files.

Options may also come from a flat ``key=value`` config file via ``--config``;
command-line flags override file values. Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .adaptive import Selector, TruncationPath, build_envelope, select_truncation
from .datagen import Misspec, load_dataset, stream
from .harness import (
    DEFAULT_C_GRID,
    StudyConfig,
    aggregate,
    read_records_csv,
    run_study,
    summarize_across_scenarios,
    variance_table,
    write_metrics_csv,
    write_summary_csv,
    write_variance_table_csv,
)
from .nuisance import fit_nuisances
from .targeting import Link, Strategy, tmle_fit
from .truncation import TruncationSpec
from .variance import (
    VarianceMethod,
    percentile_ci,
    var_eif,
    var_plugin,
    var_targeted_bootstrap,
    wald_ci,
)

__all__ = ["main"]


class UsageError(Exception):
    """Bad flags or config values; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok)


def _misspecs(text: str) -> tuple[Misspec, ...]:
    return tuple(Misspec(tok) for tok in text.split(",") if tok)


def _strategies(text: str) -> tuple[Strategy, ...]:
    return tuple(Strategy(tok) for tok in text.split(",") if tok)


def _links(text: str) -> tuple[Link, ...]:
    return tuple(Link(tok) for tok in text.split(",") if tok)


def _selectors(text: str) -> tuple[Selector, ...]:
    return tuple(Selector(tok) for tok in text.split(",") if tok)


def _variances(text: str) -> tuple[VarianceMethod, ...]:
    return tuple(VarianceMethod(tok) for tok in text.split(",") if tok)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes"}:
        return True
    if lowered in {"0", "false", "no"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Converters for config-file values, keyed by argparse dest and subcommand.
# Flags parsed on the command line already arrive converted; these apply to
# file values only, and double as the whitelist of accepted config keys.
_SIMULATE_KEYS: dict[str, Callable[[str], object]] = {
    "n": _ints,
    "kappa": _floats,
    "misspec": _misspecs,
    "reps": int,
    "c_grid": _floats,
    "strategy": _strategies,
    "link": _links,
    "selectors": _selectors,
    "variance": _variances,
    "boot_reps": int,
    "seed": int,
    "out": str,
    "threads": int,
    "rct": _bool,
    "include_init": _bool,
    "brake_multiplier": float,
}
_ESTIMATE_KEYS: dict[str, Callable[[str], object]] = {
    "data": str,
    "c": float,
    "selector": str,
    "c_grid": _floats,
    "strategy": Strategy,
    "link": Link,
    "variance": _variances,
    "boot_reps": int,
    "seed": int,
    "brake_multiplier": float,
}
_TABLES_KEYS: dict[str, Callable[[str], object]] = {
    "records": str,
    "out": str,
}
_CONFIG_KEYS = {
    "simulate": _SIMULATE_KEYS,
    "estimate": _ESTIMATE_KEYS,
    "tables": _TABLES_KEYS,
}


def _read_config_file(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"--config: no such file: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise UsageError(f"--config {path}:{lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _apply_config(args: argparse.Namespace) -> None:
    """Fill in None-valued args from the config file; reject unknown keys."""
    if not getattr(args, "config", None):
        return
    converters = _CONFIG_KEYS[args.command]
    file_values = _read_config_file(args.config)
    for key, raw in file_values.items():
        if key not in converters:
            raise UsageError(f"--config: unknown key {key!r}")
        if getattr(args, key, None) is None:
            try:
                setattr(args, key, converters[key](raw))
            except ValueError as exc:
                raise UsageError(f"--config: bad value for {key!r}: {exc}") from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="tmletrunc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate",
        help="run a Monte Carlo study and write CSV outputs",
        description="Run the simulation study. Unset flags fall back to the "
        "config file (--config), then to the full default design.",
    )
    sim.add_argument("--config", help="flat key=value config file")
    sim.add_argument("--n", type=_ints, default=None,
                     help="comma list of sample sizes (default 500,1000,2000)")
    sim.add_argument("--kappa", type=_floats, default=None,
                     help="comma list of overlap-severity multipliers (default 1,2,3)")
    sim.add_argument("--misspec", type=_misspecs, default=None,
                     help="comma list from {high,moderate,nearly_correct} (default all)")
    sim.add_argument("--reps", type=int, default=None,
                     help="Monte Carlo replications per scenario (default 500)")
    sim.add_argument("--c-grid", type=_floats, default=None,
                     help="comma list of truncation constants (default 1..10)")
    sim.add_argument("--strategy", type=_strategies, default=None,
                     help="comma list from {gh,gwt} (default both)")
    sim.add_argument("--link", type=_links, default=None,
                     help="comma list from {logit,linear} (default logit)")
    sim.add_argument("--selectors", type=_selectors, default=None,
                     help="comma list from {eifb,mcb,tbb} (default none)")
    sim.add_argument("--variance", type=_variances, default=None,
                     help="comma list from {eif,plugin,tb} (default eif)")
    sim.add_argument("--boot-reps", type=int, default=None,
                     help="bootstrap replicates for tb variance (default 500)")
    sim.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    sim.add_argument("--out", default=None, help="output directory (default study_out)")
    sim.add_argument("--threads", type=int, default=None,
                     help="worker processes for replications (default 1)")
    sim.add_argument("--rct", action="store_const", const=True, default=None,
                     help="randomize treatment with probability 1/2")
    sim.add_argument("--include-init", action="store_const", const=True, default=None,
                     help="also record the untargeted initial estimate")
    sim.add_argument("--brake-multiplier", type=float, default=None,
                     help="envelope half-width multiplier (default 1.0)")

    est = sub.add_parser(
        "estimate",
        help="estimate the ATE from a dataset CSV",
        description="Estimate the average treatment effect from a CSV with "
        "columns w1..wK, a, y. Exactly one of --c / --selector is required.",
    )
    est.add_argument("--config", help="flat key=value config file")
    est.add_argument("--data", default=None, help="path to the dataset CSV (required)")
    est.add_argument("--c", type=float, default=None, help="fixed truncation constant")
    est.add_argument("--selector", default=None,
                     help="adaptive selector: eifb or tbb (mcb needs a simulation study)")
    est.add_argument("--c-grid", type=_floats, default=None,
                     help="selector walk grid (default 1..10)")
    est.add_argument("--strategy", type=Strategy, default=None,
                     help="gh or gwt (default gh)")
    est.add_argument("--link", type=Link, default=None,
                     help="logit or linear (default logit)")
    est.add_argument("--variance", type=_variances, default=None,
                     help="comma list from {eif,plugin,tb} (default eif)")
    est.add_argument("--boot-reps", type=int, default=None,
                     help="bootstrap replicates for tb variance (default 500)")
    est.add_argument("--seed", type=int, default=None,
                     help="seed for the bootstrap stream (default 0)")
    est.add_argument("--brake-multiplier", type=float, default=None,
                     help="envelope half-width multiplier (default 1.0)")

    tab = sub.add_parser(
        "tables",
        help="re-aggregate records.csv into tables and plot data",
        description="Recompute metrics/summary/variance tables from a "
        "records.csv and emit tidy plot-data files.",
    )
    tab.add_argument("--config", help="flat key=value config file")
    tab.add_argument("--records", default=None, help="path to records.csv (required)")
    tab.add_argument("--out", default=None, help="output directory (default alongside records)")

    return parser


def _cmd_simulate(args: argparse.Namespace) -> int:
    kwargs = dict(
        ns=args.n,
        kappas=args.kappa,
        misspecs=args.misspec,
        rct=args.rct,
        reps=args.reps,
        c_grid=args.c_grid,
        strategies=args.strategy,
        links=args.link,
        variance_methods=args.variance,
        selectors=args.selectors,
        boot_reps=args.boot_reps,
        brake_multiplier=args.brake_multiplier,
        include_init=args.include_init,
        seed=args.seed,
        threads=args.threads,
    )
    cfg = StudyConfig(**{k: v for k, v in kwargs.items() if v is not None})
    out_dir = Path(args.out if args.out is not None else "study_out")
    result = run_study(cfg, out_dir=out_dir)
    n_failed = sum(1 for r in result.records if r.error is not None)
    print(f"scenarios: {len(cfg.scenarios())}  replications each: {cfg.reps}")
    print(f"records written: {len(result.records)}  failed records: {n_failed}")
    for name in ("records.csv", "metrics.csv", "summary.csv", "variance_table.csv"):
        print(f"wrote {out_dir / name}")
    return 0


def _format_ci(ci) -> str:
    return f"[{ci.lower:.6g}, {ci.upper:.6g}]"


def _print_fit_report(ds, fit, variances, label: str) -> None:
    print(f"--- {label} ---")
    print(f"psi_hat: {fit.psi_hat:.10g}")
    print(
        f"truncation: c={fit.spec.c:g} bound={fit.trunc.bound:.6g} "
        f"activated treated={fit.trunc.activated_1}/{ds.n} "
        f"control={fit.trunc.activated_0}/{ds.n}"
    )
    print(
        f"fluctuation: eps1={fit.fluct.eps1:.6g} eps0={fit.fluct.eps0:.6g} "
        f"converged={fit.fluct.converged}"
    )
    for name, est, ci in variances:
        print(f"variance[{name}]: {est.value:.6g}  wald 95% CI {_format_ci(ci)}")
        if est.quantiles is not None:
            print(
                f"  bootstrap: B={est.b_reps} dropped={est.dropped}"
                f"{' (FLAGGED >10% dropped)' if est.flagged else ''}"
            )
            pci = percentile_ci(est.psis)
            print(f"  percentile 95% CI [{pci.lower:.6g}, {pci.upper:.6g}]")


def _estimate_variances(ds, nuis, fit, methods, args) -> list:
    out = []
    for method in methods:
        if method is VarianceMethod.EIF:
            est = var_eif(fit.eif)
        elif method is VarianceMethod.PLUGIN:
            est = var_plugin(nuis.resid_var, fit.trunc, fit.q1_star, fit.q0_star, fit.psi_hat)
        elif method is VarianceMethod.TB:
            seed = args.seed if args.seed is not None else 0
            boot_reps = args.boot_reps if args.boot_reps is not None else 500
            rng = stream(seed, "tb-estimate", ds.n, f"{fit.spec.c:g}",
                         fit.fluct.strategy.value, fit.fluct.link.value)
            est = var_targeted_bootstrap(
                ds, nuis, fit.spec, fit.fluct.strategy, fit.fluct.link, boot_reps, rng
            )
        else:
            raise UsageError(
                "estimate: --variance mc is only available in simulate "
                "(it needs replications)"
            )
        out.append((method.value, est, wald_ci(fit.psi_hat, est)))
    return out


def _cmd_estimate(args: argparse.Namespace) -> int:
    if args.data is None:
        raise UsageError("estimate: --data is required")
    if (args.c is None) == (args.selector is None):
        raise UsageError("estimate: exactly one of --c or --selector is required")
    strategy = args.strategy if args.strategy is not None else Strategy.GH
    link = args.link if args.link is not None else Link.LOGIT
    methods = args.variance if args.variance is not None else (VarianceMethod.EIF,)
    if VarianceMethod.MC in methods:
        raise UsageError(
            "estimate: --variance mc is only available in simulate "
            "(it needs replications)"
        )
    selector: Selector | None = None
    if args.selector is not None:
        try:
            selector = Selector(args.selector)
        except ValueError as exc:
            raise UsageError(f"estimate: unknown selector {args.selector!r}") from exc
        if selector is Selector.MCB:
            raise UsageError(
                "estimate: the Monte-Carlo-braked selector needs replicated "
                "simulations; use eifb or tbb on a single dataset"
            )

    ds = load_dataset(args.data)
    print(f"dataset: n={ds.n} covariates={ds.w.shape[1]} "
          f"treated={int(ds.a.sum())} control={int(ds.n - ds.a.sum())}")
    needs_plugin = VarianceMethod.PLUGIN in methods
    nuis = fit_nuisances(ds, Misspec.NEARLY_CORRECT, with_residual_variance=needs_plugin)
    if not nuis.propensity.converged:
        print("note: propensity fit did not meet the convergence tolerance")

    if args.c is not None:
        fit = tmle_fit(ds, nuis, TruncationSpec(c=args.c, n=ds.n), strategy, link)
        variances = _estimate_variances(ds, nuis, fit, methods, args)
        _print_fit_report(ds, fit, variances, f"{strategy.value}/{link.value} at c={args.c:g}")
        return 0

    c_grid = args.c_grid if args.c_grid is not None else DEFAULT_C_GRID
    fits, variances = [], []
    for c in c_grid:
        fit = tmle_fit(ds, nuis, TruncationSpec(c=c, n=ds.n), strategy, link)
        fits.append(fit)
        if selector is Selector.EIFB:
            variances.append(var_eif(fit.eif).value)
        else:
            seed = args.seed if args.seed is not None else 0
            boot_reps = args.boot_reps if args.boot_reps is not None else 500
            rng = stream(seed, "tb-estimate", ds.n, f"{c:g}", strategy.value, link.value)
            variances.append(
                var_targeted_bootstrap(ds, nuis, fit.spec, strategy, link, boot_reps, rng).value
            )
    psis = [f.psi_hat for f in fits]
    cis = tuple(wald_ci(p, v) for p, v in zip(psis, variances))
    path = TruncationPath(tuple(c_grid), tuple(psis), tuple(variances), cis)
    multiplier = args.brake_multiplier if args.brake_multiplier is not None else 1.0
    envelope = build_envelope(path, ds.n, multiplier)
    result = select_truncation(path, envelope, selector)

    print(f"--- adaptive {selector.value} over c in {{{','.join(f'{c:g}' for c in c_grid)}}} ---")
    print(f"envelope: center={envelope.center:.6g} half-width={envelope.radius:.6g}")
    print(f"{'c':>6} {'psi_hat':>12} {'variance':>12} {'95% CI':>28}")
    for c, p, v, ci in zip(c_grid, psis, variances, cis):
        print(f"{c:>6g} {p:>12.6g} {v:>12.6g} {_format_ci(ci):>28}")
    print(f"chosen c: {result.chosen_c:g} ({result.stop_reason.value})")
    chosen_fit = fits[result.chosen_index]
    var_report = _estimate_variances(ds, nuis, chosen_fit, methods, args)
    _print_fit_report(
        ds, chosen_fit, var_report,
        f"{strategy.value}/{link.value} at chosen c={result.chosen_c:g}",
    )
    return 0


_FIXED_C_METHOD = re.compile(r"^(?P<strategy>[a-z]+)_(?P<link>[a-z]+)_c(?P<c>[0-9.]+)$")


def emit_plot_data(metrics, variance_rows, out_dir: Path, provenance: str) -> list[Path]:
    """Write tidy long-format plot data: metric-vs-c and relative variances.

    Relative variances normalize each cell by its Monte Carlo variance, so
    the mc series is identically 1.
    """
    out_paths = []
    import csv as _csv

    path = out_dir / "plot_metrics_vs_c.csv"
    with path.open("w", newline="") as fh:
        fh.write(provenance + "\n")
        writer = _csv.writer(fh)
        writer.writerow(["n", "kappa", "misspec", "rct", "strategy", "link", "c",
                         "metric", "value"])
        for m in metrics:
            match = _FIXED_C_METHOD.match(m.method)
            if match is None:
                continue
            for metric in ("bias", "se", "mse", "coverage"):
                value = getattr(m, metric)
                if value is None:
                    continue
                writer.writerow([
                    m.n, f"{m.kappa:g}", m.misspec, int(m.rct),
                    match["strategy"], match["link"], match["c"],
                    metric, f"{value:.17g}",
                ])
    out_paths.append(path)

    path = out_dir / "plot_relative_variance.csv"
    with path.open("w", newline="") as fh:
        fh.write(provenance + "\n")
        writer = _csv.writer(fh)
        writer.writerow(["n", "kappa", "misspec", "rct", "strategy", "link", "c",
                         "method", "relative_variance"])
        for row in variance_rows:
            if row.var_mc <= 0:
                continue
            series = [
                ("mc", row.var_mc),
                ("eif", row.var_eif_mean),
                ("plugin", row.var_plugin_mean),
                ("tb", row.var_tb_mean),
            ]
            for method, value in series:
                if value is None:
                    continue
                writer.writerow([
                    row.n, f"{row.kappa:g}", row.misspec, int(row.rct),
                    row.strategy, row.link, f"{row.c:g}",
                    method, f"{value / row.var_mc:.17g}",
                ])
    out_paths.append(path)
    return out_paths


def _cmd_tables(args: argparse.Namespace) -> int:
    if args.records is None:
        raise UsageError("tables: --records is required")
    records_path = Path(args.records)
    records, provenance = read_records_csv(records_path)
    if not records:
        raise RuntimeError(f"{records_path}: no records to aggregate")
    out_dir = Path(args.out) if args.out is not None else records_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = aggregate(records)
    summary = summarize_across_scenarios(metrics)
    variance_rows = variance_table(records)
    write_metrics_csv(metrics, out_dir / "metrics.csv", provenance)
    write_summary_csv(summary, out_dir / "summary.csv", provenance)
    write_variance_table_csv(variance_rows, out_dir / "variance_table.csv", provenance)
    emitted = emit_plot_data(metrics, variance_rows, out_dir, provenance)
    for name in ("metrics.csv", "summary.csv", "variance_table.csv"):
        print(f"wrote {out_dir / name}")
    for path in emitted:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "tables": _cmd_tables,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
