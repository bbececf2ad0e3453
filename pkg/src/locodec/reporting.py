"""Summary tables derived from a results table.

Everything here is a pure transformation from :class:`EvalResult` rows (or
session files, for spectra) to CSV text: per-variant medians with
bootstrapped confidence intervals, Friedman/Wilcoxon test outcomes with
Bonferroni adjustment, offset-curve summaries with a quadratic fit, and
speed-decile spectra. Bootstrap seeds are derived from the group labels, so
reports are reproducible from the results table alone.
"""

from __future__ import annotations

import numpy as np

from .dsp import aggregate_decile_spectra, speed_decile_spectra
from .protocols import EvalResult, derive_seed
from .stats import (
    PairedScores,
    bootstrap_median_ci,
    compare_variants,
    polyfit2,
)
from .errors import FitError

N_BOOT = 2000


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _group_key(res: EvalResult) -> tuple:
    return (res.strategy, res.region_set, res.band, res.offset_ms, res.model)


def _median_ci(values: list[float], seed_label: str) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 3:
        med = float(np.median(arr))
        return med, med, med
    return bootstrap_median_ci(arr, n_boot=N_BOOT, seed=derive_seed("report", seed_label))


def median_rows(results: list[EvalResult]) -> list[dict]:
    groups: dict[tuple, list[EvalResult]] = {}
    for res in results:
        groups.setdefault(_group_key(res), []).append(res)
    rows = []
    for key in sorted(groups):
        strategy, region_set, band, offset_ms, model = key
        members = groups[key]
        label = "|".join(str(k) for k in key)
        med_r, lo_r, hi_r = _median_ci([m.r for m in members], label + "|r")
        med_r2, lo_r2, hi_r2 = _median_ci([m.r2 for m in members], label + "|r2")
        rows.append(
            {
                "strategy": strategy,
                "region_set": region_set,
                "band": band,
                "offset_ms": offset_ms,
                "model": model,
                "n_sessions": len(members),
                "median_r": med_r,
                "ci_lo_r": lo_r,
                "ci_hi_r": hi_r,
                "median_r2": med_r2,
                "ci_lo_r2": lo_r2,
                "ci_hi_r2": hi_r2,
            }
        )
    return rows


MEDIANS_COLUMNS = (
    "strategy",
    "region_set",
    "band",
    "offset_ms",
    "model",
    "n_sessions",
    "median_r",
    "ci_lo_r",
    "ci_hi_r",
    "median_r2",
    "ci_lo_r2",
    "ci_hi_r2",
)


def medians_csv_text(results, config_hash: str = "", seed: int = 0) -> str:
    lines = [f"# config_hash={config_hash} seed={seed}", ",".join(MEDIANS_COLUMNS)]
    for row in median_rows(results):
        lines.append(",".join(_fmt(row[c]) for c in MEDIANS_COLUMNS))
    return "\n".join(lines) + "\n"


def variant_tests(results: list[EvalResult], metric: str = "r"):
    """Friedman omnibus plus Bonferroni-adjusted pairwise Wilcoxon outcomes
    for every (strategy, region, band, offset) group holding at least two
    decoding variants over at least three shared sessions. Autocorrelation
    rows are reference curves, not decoders, and are excluded."""
    slots: dict[tuple, dict[str, dict[str, float]]] = {}
    for res in results:
        if res.model == "autocorrelation":
            continue
        ctx = (res.strategy, res.region_set, res.band, res.offset_ms)
        table = slots.setdefault(ctx, {})
        table.setdefault(res.model, {})[res.session_id] = getattr(res, metric)
    outcomes = []
    for ctx in sorted(slots):
        table = slots[ctx]
        if len(table) < 2:
            continue
        scores = PairedScores.from_mapping(metric, table)
        if scores.table.shape[0] < 3:
            continue
        outcomes.extend(compare_variants(scores))
    return outcomes


TESTS_COLUMNS = ("comparison", "metric", "statistic", "p_raw", "p_bonferroni", "n", "method")


def tests_csv_text(results, metric: str = "r", config_hash: str = "", seed: int = 0) -> str:
    lines = [f"# config_hash={config_hash} seed={seed}", ",".join(TESTS_COLUMNS)]
    for t in variant_tests(results, metric):
        lines.append(
            ",".join(
                [
                    t.comparison,
                    t.metric,
                    _fmt(float(t.statistic)),
                    _fmt(float(t.p_raw)),
                    _fmt(float(t.p_adjusted)),
                    str(t.n),
                    t.method,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def offset_curve_rows(results: list[EvalResult]) -> tuple[list[dict], list[dict]]:
    """Per-model offset curves (median r with CI per offset) and quadratic
    fits r(offset_ms) for models spanning at least three distinct offsets."""
    by_model: dict[str, dict[int, list[float]]] = {}
    for res in results:
        by_model.setdefault(res.model, {}).setdefault(res.offset_ms, []).append(res.r)
    curve_rows, fit_rows = [], []
    for model in sorted(by_model):
        offsets = sorted(by_model[model])
        medians = []
        for off in offsets:
            med, lo, hi = _median_ci(by_model[model][off], f"curve|{model}|{off}")
            medians.append(med)
            curve_rows.append(
                {
                    "model": model,
                    "offset_ms": off,
                    "n_sessions": len(by_model[model][off]),
                    "median_r": med,
                    "ci_lo_r": lo,
                    "ci_hi_r": hi,
                }
            )
        if len(offsets) >= 3:
            try:
                c0, c1, c2 = polyfit2(np.asarray(offsets, dtype=np.float64), np.asarray(medians))
            except FitError:
                continue
            fit_rows.append({"model": model, "c0": c0, "c1": c1, "c2": c2})
    return curve_rows, fit_rows


CURVES_COLUMNS = ("model", "offset_ms", "n_sessions", "median_r", "ci_lo_r", "ci_hi_r")
FITS_COLUMNS = ("model", "c0", "c1", "c2")


def curves_csv_text(results, config_hash: str = "", seed: int = 0) -> tuple[str, str]:
    curve_rows, fit_rows = offset_curve_rows(results)
    head = f"# config_hash={config_hash} seed={seed}"
    curves = [head, ",".join(CURVES_COLUMNS)]
    for row in curve_rows:
        curves.append(",".join(_fmt(row[c]) for c in CURVES_COLUMNS))
    fits = [head, ",".join(FITS_COLUMNS)]
    for row in fit_rows:
        fits.append(",".join(_fmt(row[c]) for c in FITS_COLUMNS))
    return "\n".join(curves) + "\n", "\n".join(fits) + "\n"


SPECTRA_COLUMNS = ("decile", "freq_hz", "f_times_psd_mean", "f_times_psd_sem", "n_sessions")


def spectra_csv_text(sessions, config_hash: str = "", seed: int = 0) -> str:
    """Speed-decile f·P(f) spectra averaged across sessions."""
    per_session = [speed_decile_spectra(s) for s in sessions]
    agg = aggregate_decile_spectra(per_session)
    lines = [f"# config_hash={config_hash} seed={seed}", ",".join(SPECTRA_COLUMNS)]
    for d in range(agg.mean.shape[0]):
        if np.all(np.isnan(agg.mean[d])):
            continue
        for j, f in enumerate(agg.frequencies):
            lines.append(
                ",".join(
                    [
                        str(d + 1),
                        _fmt(float(f)),
                        _fmt(float(agg.mean[d, j])),
                        _fmt(float(agg.sem[d, j])),
                        str(agg.n_sessions),
                    ]
                )
            )
    return "\n".join(lines) + "\n"
