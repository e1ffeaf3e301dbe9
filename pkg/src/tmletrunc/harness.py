"""Monte Carlo study harness: scenarios x methods x c-grid x replications.

Each replication draws one dataset from its own keyed stream, fits the
nuisances once, and evaluates every requested method on those shared fits:
fixed-c TMLE cells for each strategy/link, the untargeted initial estimate,
and the adaptive truncation selectors. Fixed-c confidence intervals use the
EIF variance; adaptive records carry the interval of the chosen level under
the selector's own variance source.

The Monte-Carlo-braked selector (MCb) needs the across-replication variance
of psi_hat(c), so scenarios run in two passes: fixed-c cells first (possibly
in parallel over replications), then the MCb walks against the pooled
variances.

Outputs are plain CSVs (records, metrics, summary, variance table) written
with 17-significant-digit floats and deterministic row order, so a study with
a fixed seed is byte-identical across runs and thread counts.
"""

from __future__ import annotations

import concurrent.futures
import csv
import statistics
from dataclasses import dataclass, fields, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .adaptive import (
    Selector,
    TruncationPath,
    build_envelope,
    select_truncation,
)
from .datagen import (
    Dataset,
    DegenerateArmsError,
    Misspec,
    Scenario,
    derive_key,
    fmt_g17,
    gen_dataset,
    stream,
    true_ate,
)
from .nuisance import fit_nuisances
from .targeting import Link, Strategy, initial_psi, tmle_fit
from .truncation import TruncationSpec
from .variance import (
    VarianceEstimate,
    VarianceMethod,
    var_eif,
    var_plugin,
    var_targeted_bootstrap,
    wald_ci,
)

__all__ = [
    "StudyConfig",
    "ReplicationRecord",
    "MetricsRow",
    "SummaryRow",
    "VarianceTableRow",
    "StudyResult",
    "run_replication",
    "run_study",
    "aggregate",
    "summarize_across_scenarios",
    "variance_table",
    "write_records_csv",
    "read_records_csv",
    "write_metrics_csv",
    "write_summary_csv",
    "write_variance_table_csv",
    "INIT_METHOD",
]

INIT_METHOD = "init"

DEFAULT_C_GRID = tuple(float(c) for c in range(1, 11))


@dataclass(frozen=True)
class StudyConfig:
    """Full description of a simulation study.

    The defaults reproduce the main factorial design: 500 replications over
    n in {500, 1000, 2000} x kappa in {1, 2, 3} x three misspecification
    levels, c-grid 1..10, both targeting strategies under the logistic link,
    EIF variance only. Linear link, the RCT baseline, the untargeted initial
    estimate, extra variance estimators, and the adaptive selectors are
    opt-in.
    """

    ns: tuple[int, ...] = (500, 1000, 2000)
    kappas: tuple[float, ...] = (1.0, 2.0, 3.0)
    misspecs: tuple[Misspec, ...] = (
        Misspec.HIGH,
        Misspec.MODERATE,
        Misspec.NEARLY_CORRECT,
    )
    rct: bool = False
    reps: int = 500
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    strategies: tuple[Strategy, ...] = (Strategy.GH, Strategy.GWT)
    links: tuple[Link, ...] = (Link.LOGIT,)
    variance_methods: tuple[VarianceMethod, ...] = (VarianceMethod.EIF,)
    selectors: tuple[Selector, ...] = ()
    boot_reps: int = 500
    brake_multiplier: float = 1.0
    include_init: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "misspecs", tuple(Misspec(m) for m in self.misspecs)
        )
        object.__setattr__(
            self, "strategies", tuple(Strategy(s) for s in self.strategies)
        )
        object.__setattr__(self, "links", tuple(Link(v) for v in self.links))
        object.__setattr__(
            self,
            "variance_methods",
            tuple(VarianceMethod(v) for v in self.variance_methods),
        )
        object.__setattr__(
            self, "selectors", tuple(Selector(s) for s in self.selectors)
        )
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if not self.c_grid or not all(
            a < b for a, b in zip(self.c_grid, self.c_grid[1:])
        ):
            raise ValueError("c_grid must be a strictly ascending nonempty sequence")

    def scenarios(self) -> tuple[Scenario, ...]:
        return tuple(
            Scenario(n=n, kappa_pos=kappa, misspec=m, rct=self.rct, seed=self.seed)
            for n in self.ns
            for kappa in self.kappas
            for m in self.misspecs
        )

    def provenance(self) -> str:
        grid = ",".join(f"{c:g}" for c in self.c_grid)
        return (
            f"# tmletrunc {__version__}"
            f" seed={self.seed}"
            f" reps={self.reps}"
            f" n={','.join(str(n) for n in self.ns)}"
            f" kappa={','.join(f'{k:g}' for k in self.kappas)}"
            f" misspec={','.join(m.value for m in self.misspecs)}"
            f" rct={int(self.rct)}"
            f" c_grid={grid}"
            f" strategies={','.join(s.value for s in self.strategies)}"
            f" links={','.join(v.value for v in self.links)}"
            f" variance={','.join(v.value for v in self.variance_methods)}"
            f" selectors={','.join(s.value for s in self.selectors) or '-'}"
            f" boot_reps={self.boot_reps}"
            f" brake_multiplier={self.brake_multiplier:g}"
            f" include_init={int(self.include_init)}"
        )


@dataclass
class ReplicationRecord:
    """One (scenario, replication, method) result row."""

    n: int
    kappa: float
    misspec: str
    rct: bool
    rep: int
    method: str
    strategy: str | None = None
    link: str | None = None
    c: float | None = None
    selector: str | None = None
    psi_hat: float | None = None
    var_eif: float | None = None
    var_plugin: float | None = None
    var_tb: float | None = None
    var_mc: float | None = None
    tb_q025: float | None = None
    tb_q975: float | None = None
    tb_dropped: int | None = None
    tb_flagged: bool | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    chosen_c: float | None = None
    stop_reason: str | None = None
    activated_1: int | None = None
    activated_0: int | None = None
    eps1: float | None = None
    eps0: float | None = None
    converged: bool | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.psi_hat is not None


@dataclass
class MetricsRow:
    """Aggregated metrics for one (scenario, method) cell."""

    n: int
    kappa: float
    misspec: str
    rct: bool
    method: str
    n_reps: int
    n_failed: int
    bias: float
    se: float
    abs_bias_over_se: float | None
    mse: float
    coverage: float | None
    coverage_error: float | None
    coverage_eif: float | None = None
    coverage_plugin: float | None = None
    coverage_tb: float | None = None


@dataclass
class SummaryRow:
    """Across-scenario summaries for one (method, n)."""

    method: str
    n: int
    n_scenarios: int
    mse_mean: float
    mse_median: float
    mse_worst: float
    cov_err_mean: float | None
    cov_err_median: float | None
    cov_err_worst: float | None


@dataclass
class VarianceTableRow:
    """Mean variance estimates vs the Monte Carlo variance for one cell."""

    n: int
    kappa: float
    misspec: str
    rct: bool
    strategy: str
    link: str
    c: float
    var_mc: float
    var_eif_mean: float | None
    var_plugin_mean: float | None
    var_tb_mean: float | None


@dataclass
class StudyResult:
    config: StudyConfig
    records: list[ReplicationRecord]
    metrics: list[MetricsRow]
    summary: list[SummaryRow]
    variance_rows: list[VarianceTableRow]


def _method_id(
    strategy: Strategy, link: Link, c: float | None, selector: Selector | None
) -> str:
    base = f"{strategy.value}_{link.value}"
    if selector is not None:
        return f"{base}_{selector.value}"
    return f"{base}_c{c:g}"


def _selector_applies(strategy: Strategy, link: Link) -> bool:
    # The adaptive procedures are studied for clever-covariate-scaled
    # targeting under the logistic link.
    return strategy is Strategy.GH and link is Link.LOGIT


def _error_records(
    scenario: Scenario, rep: int, cfg: StudyConfig, message: str
) -> list[ReplicationRecord]:
    base = dict(
        n=scenario.n,
        kappa=scenario.kappa_pos,
        misspec=scenario.misspec.value,
        rct=scenario.rct,
        rep=rep,
        error=message,
    )
    records = []
    if cfg.include_init:
        records.append(ReplicationRecord(method=INIT_METHOD, **base))
    for strategy, link in product(cfg.strategies, cfg.links):
        for c in cfg.c_grid:
            records.append(
                ReplicationRecord(
                    method=_method_id(strategy, link, c, None),
                    strategy=strategy.value,
                    link=link.value,
                    c=c,
                    **base,
                )
            )
        if _selector_applies(strategy, link):
            for sel in cfg.selectors:
                records.append(
                    ReplicationRecord(
                        method=_method_id(strategy, link, None, sel),
                        strategy=strategy.value,
                        link=link.value,
                        selector=sel.value,
                        **base,
                    )
                )
    return records


def run_replication(
    scenario: Scenario, rep: int, cfg: StudyConfig
) -> list[ReplicationRecord]:
    """All records for one replication (MCb selectors excluded; see run_study).

    The dataset stream is keyed by (study seed, scenario label, rep), so any
    replication is reproducible in isolation and execution order is free.
    """
    base = dict(
        n=scenario.n,
        kappa=scenario.kappa_pos,
        misspec=scenario.misspec.value,
        rct=scenario.rct,
        rep=rep,
    )
    rep_seed = derive_key(cfg.seed, "rep", scenario.label(), rep)[0]
    try:
        ds = gen_dataset(replace(scenario, seed=rep_seed))
        nuis = fit_nuisances(
            ds,
            scenario.misspec,
            with_residual_variance=VarianceMethod.PLUGIN in cfg.variance_methods,
        )
    except (DegenerateArmsError, ValueError) as exc:
        return _error_records(scenario, rep, cfg, f"generation/nuisance: {exc}")

    records: list[ReplicationRecord] = []
    if cfg.include_init:
        records.append(
            ReplicationRecord(
                method=INIT_METHOD,
                psi_hat=initial_psi(nuis),
                converged=nuis.propensity.converged,
                **base,
            )
        )
    want_tb = VarianceMethod.TB in cfg.variance_methods
    for strategy, link in product(cfg.strategies, cfg.links):
        selectors_here = (
            [s for s in cfg.selectors if s is not Selector.MCB]
            if _selector_applies(strategy, link)
            else []
        )
        tb_here = want_tb or (
            Selector.TBB in cfg.selectors and _selector_applies(strategy, link)
        )
        level_records: list[ReplicationRecord] = []
        for c in cfg.c_grid:
            rec = ReplicationRecord(
                method=_method_id(strategy, link, c, None),
                strategy=strategy.value,
                link=link.value,
                c=c,
                **base,
            )
            try:
                spec = TruncationSpec(c=c, n=ds.n)
                fit = tmle_fit(ds, nuis, spec, strategy, link)
                v_eif = var_eif(fit.eif)
                ci = wald_ci(fit.psi_hat, v_eif)
                rec.psi_hat = fit.psi_hat
                rec.var_eif = v_eif.value
                rec.ci_lower, rec.ci_upper = ci.lower, ci.upper
                rec.activated_1 = fit.trunc.activated_1
                rec.activated_0 = fit.trunc.activated_0
                rec.eps1, rec.eps0 = fit.fluct.eps1, fit.fluct.eps0
                rec.converged = fit.fluct.converged and nuis.propensity.converged
                if VarianceMethod.PLUGIN in cfg.variance_methods:
                    rec.var_plugin = var_plugin(
                        nuis.resid_var, fit.trunc, fit.q1_star, fit.q0_star, fit.psi_hat
                    ).value
                if tb_here:
                    tb_rng = stream(
                        cfg.seed, "tb", scenario.label(), rep,
                        strategy.value, link.value, f"{c:g}",
                    )
                    try:
                        tb = var_targeted_bootstrap(
                            ds, nuis, spec, strategy, link, cfg.boot_reps, tb_rng
                        )
                        rec.var_tb = tb.value
                        rec.tb_q025, rec.tb_q975 = tb.quantiles
                        rec.tb_dropped = tb.dropped
                        rec.tb_flagged = tb.flagged
                    except RuntimeError as exc:
                        rec.error = f"targeted bootstrap: {exc}"
            except (ValueError, np.linalg.LinAlgError) as exc:
                rec.error = f"fit: {exc}"
            records.append(rec)
            level_records.append(rec)

        for sel in selectors_here:
            records.append(
                _selector_record(sel, level_records, cfg, strategy, link, base)
            )
    return records


def _selector_record(
    sel: Selector,
    level_records: Sequence[ReplicationRecord],
    cfg: StudyConfig,
    strategy: Strategy,
    link: Link,
    base: dict,
) -> ReplicationRecord:
    """Walk one selector over this replication's fitted path (EIFb/TBb)."""
    rec = ReplicationRecord(
        method=_method_id(strategy, link, None, sel),
        strategy=strategy.value,
        link=link.value,
        selector=sel.value,
        **base,
    )
    variances: list[float] = []
    for lr in level_records:
        if not lr.ok:
            rec.error = f"selector path incomplete at c={lr.c:g}: {lr.error}"
            return rec
        v = lr.var_eif if sel is Selector.EIFB else lr.var_tb
        if v is None:
            rec.error = f"selector variance source missing at c={lr.c:g}"
            return rec
        variances.append(v)
    psis = [lr.psi_hat for lr in level_records]
    cis = tuple(wald_ci(p, v) for p, v in zip(psis, variances))
    path = TruncationPath(
        cs=tuple(lr.c for lr in level_records),
        psis=tuple(psis),
        variances=tuple(variances),
        cis=cis,
    )
    envelope = build_envelope(path, base["n"], cfg.brake_multiplier)
    result = select_truncation(path, envelope, sel)
    chosen = level_records[result.chosen_index]
    rec.psi_hat = result.chosen_psi
    rec.ci_lower, rec.ci_upper = result.chosen_ci.lower, result.chosen_ci.upper
    rec.chosen_c = result.chosen_c
    rec.stop_reason = result.stop_reason.value
    rec.c = result.chosen_c
    rec.var_eif = chosen.var_eif
    rec.var_plugin = chosen.var_plugin
    rec.var_tb = chosen.var_tb
    rec.tb_q025, rec.tb_q975 = chosen.tb_q025, chosen.tb_q975
    rec.tb_dropped, rec.tb_flagged = chosen.tb_dropped, chosen.tb_flagged
    rec.activated_1, rec.activated_0 = chosen.activated_1, chosen.activated_0
    rec.eps1, rec.eps0 = chosen.eps1, chosen.eps0
    rec.converged = chosen.converged
    return rec


def _mcb_records(
    scenario: Scenario,
    cfg: StudyConfig,
    records: Sequence[ReplicationRecord],
) -> list[ReplicationRecord]:
    """Second pass: MCb walks using the across-replication variance of psi(c).

    V_MC(c) is the sample variance of psi_hat(c) over successful replications;
    each replication then walks its own psi path against these shared
    variances and intervals.
    """
    out: list[ReplicationRecord] = []
    for strategy, link in product(cfg.strategies, cfg.links):
        if not _selector_applies(strategy, link):
            continue
        by_rep: dict[int, dict[float, ReplicationRecord]] = {}
        for r in records:
            if (
                r.strategy == strategy.value
                and r.link == link.value
                and r.selector is None
                and r.c is not None
            ):
                by_rep.setdefault(r.rep, {})[r.c] = r
        complete = {
            rep: levels
            for rep, levels in by_rep.items()
            if len(levels) == len(cfg.c_grid) and all(lr.ok for lr in levels.values())
        }
        if len(complete) < 2:
            failed_reason = "mcb needs at least two complete replications"
            for rep in sorted(by_rep):
                out.append(
                    ReplicationRecord(
                        method=_method_id(strategy, link, None, Selector.MCB),
                        strategy=strategy.value,
                        link=link.value,
                        selector=Selector.MCB.value,
                        n=scenario.n,
                        kappa=scenario.kappa_pos,
                        misspec=scenario.misspec.value,
                        rct=scenario.rct,
                        rep=rep,
                        error=failed_reason,
                    )
                )
            continue
        v_mc = {
            c: float(
                np.var([complete[rep][c].psi_hat for rep in complete], ddof=1)
            )
            for c in cfg.c_grid
        }
        for rep in sorted(by_rep):
            rec = ReplicationRecord(
                method=_method_id(strategy, link, None, Selector.MCB),
                strategy=strategy.value,
                link=link.value,
                selector=Selector.MCB.value,
                n=scenario.n,
                kappa=scenario.kappa_pos,
                misspec=scenario.misspec.value,
                rct=scenario.rct,
                rep=rep,
            )
            levels = by_rep[rep]
            if rep not in complete:
                first_bad = next(
                    (lr for lr in levels.values() if not lr.ok), None
                )
                rec.error = (
                    f"selector path incomplete: {first_bad.error}"
                    if first_bad is not None
                    else "selector path incomplete"
                )
                out.append(rec)
                continue
            psis = tuple(levels[c].psi_hat for c in cfg.c_grid)
            variances = tuple(v_mc[c] for c in cfg.c_grid)
            cis = tuple(wald_ci(p, v) for p, v in zip(psis, variances))
            path = TruncationPath(cfg.c_grid, psis, variances, cis)
            envelope = build_envelope(path, scenario.n, cfg.brake_multiplier)
            result = select_truncation(path, envelope, Selector.MCB)
            chosen = levels[result.chosen_c]
            rec.psi_hat = result.chosen_psi
            rec.ci_lower = result.chosen_ci.lower
            rec.ci_upper = result.chosen_ci.upper
            rec.chosen_c = result.chosen_c
            rec.stop_reason = result.stop_reason.value
            rec.c = result.chosen_c
            rec.var_mc = v_mc[result.chosen_c]
            rec.var_eif = chosen.var_eif
            rec.var_plugin = chosen.var_plugin
            rec.var_tb = chosen.var_tb
            rec.tb_q025, rec.tb_q975 = chosen.tb_q025, chosen.tb_q975
            rec.tb_dropped, rec.tb_flagged = chosen.tb_dropped, chosen.tb_flagged
            rec.activated_1, rec.activated_0 = chosen.activated_1, chosen.activated_0
            rec.eps1, rec.eps0 = chosen.eps1, chosen.eps0
            rec.converged = chosen.converged
            out.append(rec)
    return out


def _rep_worker(args: tuple[Scenario, int, StudyConfig]) -> list[ReplicationRecord]:
    scenario, rep, cfg = args
    return run_replication(scenario, rep, cfg)


def _record_sort_key(r: ReplicationRecord):
    return (r.n, r.kappa, r.misspec, r.rct, r.rep, r.method)


def run_study(cfg: StudyConfig, out_dir: str | Path | None = None) -> StudyResult:
    """Run the full study; optionally write the four CSV outputs.

    With ``cfg.threads`` > 1, replications are distributed over a process
    pool. Every replication uses its own keyed stream and results are sorted
    before aggregation/serialization, so outputs are identical for any thread
    count.
    """
    all_records: list[ReplicationRecord] = []
    scenarios = cfg.scenarios()
    jobs = [(scenario, rep, cfg) for scenario in scenarios for rep in range(cfg.reps)]
    if cfg.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            chunk = max(1, len(jobs) // (cfg.threads * 8))
            for recs in pool.map(_rep_worker, jobs, chunksize=chunk):
                all_records.extend(recs)
    else:
        for job in jobs:
            all_records.extend(_rep_worker(job))

    if Selector.MCB in cfg.selectors:
        for scenario in scenarios:
            scenario_records = [
                r
                for r in all_records
                if r.n == scenario.n
                and r.kappa == scenario.kappa_pos
                and r.misspec == scenario.misspec.value
                and r.rct == scenario.rct
            ]
            all_records.extend(_mcb_records(scenario, cfg, scenario_records))

    all_records.sort(key=_record_sort_key)
    metrics = aggregate(all_records)
    summary = summarize_across_scenarios(metrics)
    variance_rows = variance_table(all_records)
    result = StudyResult(cfg, all_records, metrics, summary, variance_rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        provenance = cfg.provenance()
        write_records_csv(all_records, out_dir / "records.csv", provenance)
        write_metrics_csv(metrics, out_dir / "metrics.csv", provenance)
        write_summary_csv(summary, out_dir / "summary.csv", provenance)
        write_variance_table_csv(
            variance_rows, out_dir / "variance_table.csv", provenance
        )
    return result


def aggregate(
    records: Iterable[ReplicationRecord], psi0: float | None = None
) -> list[MetricsRow]:
    """Per-(scenario, method) metrics over successful replications.

    ``psi0`` defaults to the scenario's true ATE. Coverage is the fraction of
    canonical intervals containing psi0; per-variance-method coverages are
    computed from Wald intervals rebuilt from the stored variance columns.
    """
    groups: dict[tuple, list[ReplicationRecord]] = {}
    for r in records:
        groups.setdefault((r.n, r.kappa, r.misspec, r.rct, r.method), []).append(r)
    rows: list[MetricsRow] = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3], k[4])):
        n, kappa, misspec, rct, method = key
        cell = groups[key]
        good = [r for r in cell if r.ok]
        n_failed = len(cell) - len(good)
        if len(good) < 2:
            continue  # reported as missing: no metrics row for this cell
        target = true_ate(misspec) if psi0 is None else psi0
        psis = np.array([r.psi_hat for r in good])
        bias = float(np.mean(psis) - target)
        se = float(np.std(psis, ddof=1))
        mse = float(np.mean((psis - target) ** 2))
        with_ci = [r for r in good if r.ci_lower is not None]
        coverage = (
            float(
                np.mean([r.ci_lower <= target <= r.ci_upper for r in with_ci])
            )
            if with_ci
            else None
        )
        row = MetricsRow(
            n=n,
            kappa=kappa,
            misspec=misspec,
            rct=rct,
            method=method,
            n_reps=len(good),
            n_failed=n_failed,
            bias=bias,
            se=se,
            abs_bias_over_se=abs(bias) / se if se > 0 else None,
            mse=mse,
            coverage=coverage,
            coverage_error=(
                max(0.0, 0.95 - coverage) if coverage is not None else None
            ),
        )
        for attr, column in (
            ("coverage_eif", "var_eif"),
            ("coverage_plugin", "var_plugin"),
            ("coverage_tb", "var_tb"),
        ):
            with_var = [r for r in good if getattr(r, column) is not None]
            if with_var:
                hits = [
                    wald_ci(r.psi_hat, getattr(r, column)).contains(target)
                    for r in with_var
                ]
                setattr(row, attr, float(np.mean(hits)))
        rows.append(row)
    return rows


def summarize_across_scenarios(metrics: Iterable[MetricsRow]) -> list[SummaryRow]:
    """Mean/median/worst MSE and coverage error per (method, n)."""
    groups: dict[tuple[str, int], list[MetricsRow]] = {}
    for m in metrics:
        groups.setdefault((m.method, m.n), []).append(m)
    rows: list[SummaryRow] = []
    for (method, n) in sorted(groups):
        cell = groups[(method, n)]
        mses = [m.mse for m in cell]
        cov_errs = [m.coverage_error for m in cell if m.coverage_error is not None]
        rows.append(
            SummaryRow(
                method=method,
                n=n,
                n_scenarios=len(cell),
                mse_mean=statistics.fmean(mses),
                mse_median=statistics.median(mses),
                mse_worst=max(mses),
                cov_err_mean=statistics.fmean(cov_errs) if cov_errs else None,
                cov_err_median=statistics.median(cov_errs) if cov_errs else None,
                cov_err_worst=max(cov_errs) if cov_errs else None,
            )
        )
    return rows


def variance_table(records: Iterable[ReplicationRecord]) -> list[VarianceTableRow]:
    """Monte Carlo variance vs mean estimated variances per fixed-c cell."""
    groups: dict[tuple, list[ReplicationRecord]] = {}
    for r in records:
        if r.selector is not None or r.c is None or r.method == INIT_METHOD:
            continue
        key = (r.n, r.kappa, r.misspec, r.rct, r.strategy, r.link, r.c)
        groups.setdefault(key, []).append(r)
    rows: list[VarianceTableRow] = []
    for key in sorted(groups):
        n, kappa, misspec, rct, strategy, link, c = key
        good = [r for r in groups[key] if r.ok]
        if len(good) < 2:
            continue
        psis = np.array([r.psi_hat for r in good])

        def column_mean(column: str) -> float | None:
            vals = [getattr(r, column) for r in good if getattr(r, column) is not None]
            return float(np.mean(vals)) if vals else None

        rows.append(
            VarianceTableRow(
                n=n,
                kappa=kappa,
                misspec=misspec,
                rct=rct,
                strategy=strategy,
                link=link,
                c=c,
                var_mc=float(np.var(psis, ddof=1)),
                var_eif_mean=column_mean("var_eif"),
                var_plugin_mean=column_mean("var_plugin"),
                var_tb_mean=column_mean("var_tb"),
            )
        )
    return rows


# --- CSV serialization -----------------------------------------------------

_RECORD_FIELDS = [f.name for f in fields(ReplicationRecord)]
_INT_FIELDS = {"n", "rep", "tb_dropped", "activated_1", "activated_0"}
_BOOL_FIELDS = {"rct", "tb_flagged", "converged"}
_STR_FIELDS = {"misspec", "method", "strategy", "link", "selector", "stop_reason", "error"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return fmt_g17(value)
    return str(value)


def write_records_csv(
    records: Sequence[ReplicationRecord], path: str | Path, provenance: str
) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(provenance + "\n")
        writer = csv.writer(fh)
        writer.writerow(_RECORD_FIELDS)
        for r in records:
            writer.writerow([_cell(getattr(r, name)) for name in _RECORD_FIELDS])


def read_records_csv(path: str | Path) -> tuple[list[ReplicationRecord], str]:
    """Read records.csv back; returns (records, provenance line)."""
    path = Path(path)
    with path.open(newline="") as fh:
        provenance = fh.readline().rstrip("\n")
        if not provenance.startswith("#"):
            raise ValueError(f"{path}: missing provenance comment line")
        reader = csv.reader(fh)
        header = next(reader)
        if header != _RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        records = []
        for row in reader:
            kwargs = {}
            for name, cell in zip(_RECORD_FIELDS, row):
                if cell == "":
                    kwargs[name] = None
                elif name in _BOOL_FIELDS:
                    kwargs[name] = cell == "1"
                elif name in _INT_FIELDS:
                    kwargs[name] = int(cell)
                elif name in _STR_FIELDS:
                    kwargs[name] = cell
                else:
                    kwargs[name] = float(cell)
            records.append(ReplicationRecord(**kwargs))
    return records, provenance


def _write_rows_csv(
    rows: Sequence, path: str | Path, provenance: str, columns: list[str]
) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(provenance + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(getattr(row, name)) for name in columns])


def write_metrics_csv(
    metrics: Sequence[MetricsRow], path: str | Path, provenance: str
) -> None:
    _write_rows_csv(metrics, path, provenance, [f.name for f in fields(MetricsRow)])


def write_summary_csv(
    summary: Sequence[SummaryRow], path: str | Path, provenance: str
) -> None:
    _write_rows_csv(summary, path, provenance, [f.name for f in fields(SummaryRow)])


def write_variance_table_csv(
    rows: Sequence[VarianceTableRow], path: str | Path, provenance: str
) -> None:
    _write_rows_csv(rows, path, provenance, [f.name for f in fields(VarianceTableRow)])
