"""Experiment orchestration: strategies, transfer matrices, attributions.

One :class:`ExperimentPlan` describes a cell of the experiment grid (a
strategy, a decoder family, a region set, a band, a target offset). Running
a plan over a session roster yields :class:`EvalResult` rows plus hygiene
records proving, by explicit index-set intersection, that no test-segment
sample ever reached normalizer fitting, training, validation, or
fine-tuning.

Seeding: every job seed is derived by hashing (master seed, session id,
cell id, role) with SHA-256, so runs are reproducible regardless of
execution order, and configurations that are definitionally identical to
the all-channels/fullband/offset-0 baseline hash to the same seeds and
therefore reproduce it bitwise.

Window bookkeeping at nonzero offsets follows two rules. Fitting windows
(train/validation/fine-tune) may keep shifted targets that fall in earlier
non-test segments but never a target inside the test range. Evaluated test
windows require the target to be a valid decode time of the test segment
itself, so exactly ``|offset|/stride`` windows disappear at the boundary
the shift crosses, and the evaluated target set is always a subset of the
offset-0 one.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .decoders import (
    Decoder,
    DecoderSpec,
    featurize_batch,
    fit_forest_decoder,
    new_decoder,
)
from .dsp import BAND_NAMES, autocorrelation, band, band_isolate
from .errors import DegenerateDataError, FormatError, LeakageError, PlanError, SplitError
from .sessions import (
    REGIONS,
    WINDOW_LEN,
    Normalizer,
    Session,
    fit_normalizer,
    normalized_session,
    speed_window_arrays,
    split_ranges,
    window_arrays,
)
from .stats import pearson_r, r_squared
from .trainer import TrainConfig, TrainReport, fine_tune, train

STRATEGIES = (
    "single_80",
    "single_10",
    "zeroshot_cross_session",
    "zeroshot_cross_subject",
    "finetune_cross_session",
    "finetune_cross_subject",
)

DEFAULT_OFFSETS_MS = (-1000, -500, -200, -100, 0, 100, 200, 500, 1000)
AUTOCORR_MAX_LAG_MS = 1000


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from string-able parts (order matters)."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class ExperimentPlan:
    decoder: DecoderSpec
    train: TrainConfig = TrainConfig()
    strategy: str = "single_80"
    region_set: tuple[str, ...] = ()
    band: str = "fullband"
    offset_ms: int = 0
    refit_normalizer: bool = False  # zero-shot: refit stats on target first-10%
    refresh_normalizer: bool = True  # fine-tune: refresh stats on target first-10%
    clip_nonnegative: bool = False
    master_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(f"unknown strategy {self.strategy!r}; known: {STRATEGIES}")
        if self.band not in BAND_NAMES:
            raise PlanError(f"unknown band {self.band!r}; known: {BAND_NAMES}")
        unknown = set(self.region_set) - set(REGIONS)
        if unknown:
            raise PlanError(f"unknown regions {sorted(unknown)}; known: {REGIONS}")
        if len(self.region_set) != len(set(self.region_set)):
            raise PlanError("region_set contains duplicates")

    @property
    def region_label(self) -> str:
        # "+" keeps multi-region labels one CSV field
        if not self.region_set or set(self.region_set) == set(REGIONS):
            return "all"
        return "+".join(sorted(self.region_set))

    @property
    def cell_id(self) -> str:
        return "|".join(
            [self.strategy, self.decoder.family, self.region_label, self.band, str(self.offset_ms)]
        )


@dataclass(frozen=True)
class EvalResult:
    session_id: str
    rat_id: str
    strategy: str
    region_set: str
    band: str
    offset_ms: int
    model: str
    r: float
    r2: float
    n_test_windows: int
    seed: int
    source_id: str = ""

    def __post_init__(self):
        if not -1.0 <= self.r <= 1.0:
            raise ValueError(f"r out of range: {self.r}")
        if self.r2 > 1.0 + 1e-12:
            raise ValueError(f"r2 above 1: {self.r2}")
        if self.n_test_windows <= 0:
            raise ValueError("n_test_windows must be positive")


@dataclass(frozen=True)
class HygieneRecord:
    """Index sets actually used by one run, for leakage assertions."""

    session_id: str
    strategy: str
    test_start: int
    test_stop: int
    fit_input_indices: np.ndarray
    fit_target_indices: np.ndarray
    test_input_indices: np.ndarray
    test_target_indices: np.ndarray


def check_no_test_leakage(rec: HygieneRecord) -> None:
    """Raise :class:`LeakageError` unless fitting stayed strictly outside the
    test range and evaluation stayed strictly inside it."""
    test_set = np.arange(rec.test_start, rec.test_stop)
    bad_fit = np.intersect1d(rec.fit_input_indices, test_set)
    if bad_fit.size:
        raise LeakageError(
            f"{rec.session_id}/{rec.strategy}: {bad_fit.size} fitting input samples inside test range"
        )
    bad_tgt = np.intersect1d(rec.fit_target_indices, test_set)
    if bad_tgt.size:
        raise LeakageError(
            f"{rec.session_id}/{rec.strategy}: {bad_tgt.size} fitting targets inside test range"
        )
    for name, arr in (("inputs", rec.test_input_indices), ("targets", rec.test_target_indices)):
        if arr.size and (arr.min() < rec.test_start or arr.max() >= rec.test_stop):
            raise LeakageError(
                f"{rec.session_id}/{rec.strategy}: evaluated {name} leave the test range"
            )


def _input_indices(starts: np.ndarray) -> np.ndarray:
    if starts.size == 0:
        return np.empty(0, dtype=np.int64)
    return np.unique(starts[:, None] + np.arange(WINDOW_LEN)[None, :])


# ---------------------------------------------------------------------------
# ranges and window assembly


def strategy_ranges(strategy: str, n_samples: int) -> tuple[range, range, range]:
    """(fit, early-stop, test) index ranges for a strategy on one session.

    ``single_80`` uses the 80/10/10 sequential split. ``single_10`` and both
    fine-tune calibrations fit on the first 10% with the next 10% for early
    stopping; the final 10% is the test segment in every strategy.
    """
    train80, val80, test = split_ranges(n_samples)
    if strategy in ("single_80", "zeroshot_cross_session", "zeroshot_cross_subject"):
        return train80, val80, test
    b1 = int(np.floor(n_samples * 0.1))
    b2 = int(np.floor(n_samples * 0.2))
    head_train, head_val = range(0, b1), range(b1, b2)
    for seg_name, seg in (("first-10% train", head_train), ("second-10% val", head_val)):
        if 0 < len(seg) < WINDOW_LEN:
            raise SplitError(f"{seg_name} segment too short for one window ({len(seg)} samples)")
    return head_train, head_val, test


def _fit_windows(session: Session, rng: range, offset_ms: int, test: range):
    """Windows for fitting: inside ``rng``, shifted target anywhere in the
    session except the test range."""
    starts, x, y = window_arrays(session, rng, offset_ms)
    targets = starts + WINDOW_LEN - 1 + _offset_samples(session, offset_ms)
    keep = (targets < test.start) | (targets >= test.stop)
    return starts[keep], x[keep], y[keep], targets[keep]


def _eval_windows(session: Session, test: range, offset_ms: int):
    """Windows for evaluation: inside the test range, and the shifted target
    must itself be a valid decode time of the test range (so each |10 ms| of
    shift removes exactly one window at the affected boundary)."""
    starts, x, y = window_arrays(session, test, offset_ms)
    targets = starts + WINDOW_LEN - 1 + _offset_samples(session, offset_ms)
    keep = (targets >= test.start + WINDOW_LEN - 1) & (targets < test.stop)
    return starts[keep], x[keep], y[keep], targets[keep]


def _offset_samples(session: Session, offset_ms: int) -> int:
    step_ms = 1000.0 / session.sample_rate_hz
    return int(round(offset_ms / step_ms))


def _prepare(session: Session, plan: ExperimentPlan) -> Session:
    prepared = session
    if plan.region_label != "all":
        wanted = set(plan.region_set)
        idx = [i for i, r in enumerate(session.region_map) if r in wanted]
        if not idx:
            raise PlanError(f"session {session.id} has no channels in {sorted(wanted)}")
        prepared = prepared.select_channels(idx)
    prepared = band_isolate(prepared, band(plan.band))
    return prepared


def _safe_r(pred: np.ndarray, actual: np.ndarray) -> float:
    """Pearson r, with a constant *prediction* scored as 0 (no measurable
    linear association). A constant actual trace is a data defect and
    propagates as DegenerateDataError."""
    if np.ptp(actual) == 0.0:
        raise DegenerateDataError("test speed trace is constant")
    if np.ptp(pred) == 0.0:
        return 0.0
    return pearson_r(pred, actual)


# ---------------------------------------------------------------------------
# single-session runs


@dataclass
class SingleRunOutput:
    result: EvalResult
    decoder: Decoder
    normalizer: Normalizer
    report: TrainReport | None
    hygiene: HygieneRecord
    wall_time_s: float


def run_single_session(session: Session, plan: ExperimentPlan) -> SingleRunOutput:
    if plan.strategy not in ("single_80", "single_10"):
        raise PlanError(f"run_single_session cannot execute strategy {plan.strategy!r}")
    t0 = time.perf_counter()
    prep = _prepare(session, plan)
    fit_rng, val_rng, test_rng = strategy_ranges(plan.strategy, prep.n_samples)
    normalizer = fit_normalizer(prep, fit_rng)
    norm = normalized_session(prep, normalizer)

    s_tr, x_tr, y_tr, t_tr = _fit_windows(norm, fit_rng, plan.offset_ms, test_rng)
    s_va, x_va, y_va, t_va = _fit_windows(norm, val_rng, plan.offset_ms, test_rng)
    s_te, x_te, y_te, t_te = _eval_windows(norm, test_rng, plan.offset_ms)
    if s_tr.size == 0 or s_te.size == 0:
        raise SplitError(f"session {session.id}: empty train or test window set")

    seed_init = derive_seed(plan.master_seed, session.id, plan.cell_id, "init")
    spec = replace(plan.decoder, n_channels=prep.n_channels, seed=seed_init)
    fam = spec.family
    xf_tr = featurize_batch(x_tr, fam)
    xf_va = featurize_batch(x_va, fam)
    xf_te = featurize_batch(x_te, fam)

    report = None
    if fam == "random_forest":
        decoder = fit_forest_decoder(spec, xf_tr, y_tr)
    else:
        shuffle = derive_seed(plan.master_seed, session.id, plan.cell_id, "shuffle")
        cfg = replace(plan.train, shuffle_seed=shuffle)
        decoder, report = train(new_decoder(spec), xf_tr, y_tr, xf_va, y_va, cfg)

    pred = decoder.predict_batch(xf_te)
    if plan.clip_nonnegative:
        pred = np.maximum(pred, 0.0)
    result = EvalResult(
        session_id=session.id,
        rat_id=session.rat_id,
        strategy=plan.strategy,
        region_set=plan.region_label,
        band=plan.band,
        offset_ms=plan.offset_ms,
        model=fam,
        r=_safe_r(pred, y_te),
        r2=r_squared(pred, y_te),
        n_test_windows=int(s_te.size),
        seed=seed_init,
    )
    hygiene = HygieneRecord(
        session_id=session.id,
        strategy=plan.strategy,
        test_start=test_rng.start,
        test_stop=test_rng.stop,
        fit_input_indices=np.union1d(_input_indices(s_tr), _input_indices(s_va)),
        fit_target_indices=np.union1d(t_tr, t_va),
        test_input_indices=_input_indices(s_te),
        test_target_indices=np.unique(t_te),
    )
    check_no_test_leakage(hygiene)
    return SingleRunOutput(result, decoder, normalizer, report, hygiene, time.perf_counter() - t0)


def evaluate_saved(
    decoder: Decoder, normalizer: Normalizer, session: Session, plan: ExperimentPlan
) -> EvalResult:
    """Evaluate an already-trained decoder on a session's test segment. At
    offset 0 this reproduces the training-time result row bitwise: same
    preparation, windowing, metric code, and derived seed label."""
    prep = _prepare(session, plan)
    _, _, test_rng = strategy_ranges("single_80", prep.n_samples)
    norm = normalized_session(prep, normalizer)
    s_te, x_te, y_te, _ = _eval_windows(norm, test_rng, plan.offset_ms)
    if s_te.size == 0:
        raise SplitError(f"session {session.id}: empty test window set")
    pred = decoder.predict_batch(featurize_batch(x_te, decoder.spec.family))
    if plan.clip_nonnegative:
        pred = np.maximum(pred, 0.0)
    return EvalResult(
        session_id=session.id,
        rat_id=session.rat_id,
        strategy=plan.strategy,
        region_set=plan.region_label,
        band=plan.band,
        offset_ms=plan.offset_ms,
        model=decoder.spec.family,
        r=_safe_r(pred, y_te),
        r2=r_squared(pred, y_te),
        n_test_windows=int(s_te.size),
        seed=derive_seed(plan.master_seed, session.id, plan.cell_id, "init"),
    )


# ---------------------------------------------------------------------------
# transfer


def expected_evaluation_count(session_counts, strategy: str) -> int:
    counts = list(session_counts)
    total = sum(counts)
    if strategy in ("zeroshot_cross_session", "finetune_cross_session"):
        return sum(n * (n - 1) for n in counts)
    if strategy in ("zeroshot_cross_subject", "finetune_cross_subject"):
        return sum(n * (total - n) for n in counts)
    raise PlanError(f"strategy {strategy!r} has no transfer count formula")


def transfer_pairs(sessions: list[Session], strategy: str) -> list[tuple[Session, Session]]:
    """(source, target) pairs in canonical order, count-checked against the
    roster formulas."""
    cross_session = strategy in ("zeroshot_cross_session", "finetune_cross_session")
    by_rat: dict[str, list[Session]] = {}
    for s in sessions:
        by_rat.setdefault(s.rat_id, []).append(s)
    for members in by_rat.values():
        members.sort(key=lambda s: s.id)
    rats = sorted(by_rat)
    pairs = []
    for src in sorted(sessions, key=lambda s: s.id):
        for tgt in sorted(sessions, key=lambda s: s.id):
            if src.id == tgt.id:
                continue
            same_rat = src.rat_id == tgt.rat_id
            if cross_session and same_rat:
                pairs.append((src, tgt))
            elif not cross_session and not same_rat:
                pairs.append((src, tgt))
    expected = expected_evaluation_count([len(by_rat[r]) for r in rats], strategy)
    if len(pairs) != expected:
        raise PlanError(f"pair construction bug: {len(pairs)} pairs != formula {expected}")
    if not pairs:
        raise PlanError(f"roster too small for {strategy} (no valid source/target pairs)")
    return pairs


@dataclass
class TransferOutput:
    pair_results: list[EvalResult]
    aggregated: list[EvalResult]
    hygiene: list[HygieneRecord]
    timings: list[tuple[str, float]]
    n_evaluations: int


def _evaluate_on_target(
    decoder: Decoder,
    source: Session,
    source_norm: Normalizer,
    target: Session,
    plan: ExperimentPlan,
) -> tuple[EvalResult, HygieneRecord]:
    prep = _prepare(target, plan)
    _, _, test_rng = strategy_ranges("single_80", prep.n_samples)
    head = range(0, int(np.floor(prep.n_samples * 0.1)))
    if plan.refit_normalizer:
        normalizer = fit_normalizer(prep, head)
        fit_inputs = np.arange(head.start, head.stop)
    else:
        normalizer = source_norm
        fit_inputs = np.empty(0, dtype=np.int64)
    norm = normalized_session(prep, normalizer)
    s_te, x_te, y_te, t_te = _eval_windows(norm, test_rng, plan.offset_ms)
    if s_te.size == 0:
        raise SplitError(f"target {target.id}: empty test window set")
    pred = decoder.predict_batch(featurize_batch(x_te, plan.decoder.family))
    if plan.clip_nonnegative:
        pred = np.maximum(pred, 0.0)
    result = EvalResult(
        session_id=target.id,
        rat_id=target.rat_id,
        strategy=plan.strategy,
        region_set=plan.region_label,
        band=plan.band,
        offset_ms=plan.offset_ms,
        model=plan.decoder.family,
        r=_safe_r(pred, y_te),
        r2=r_squared(pred, y_te),
        n_test_windows=int(s_te.size),
        seed=derive_seed(plan.master_seed, target.id, plan.cell_id, "eval"),
        source_id=source.id,
    )
    hygiene = HygieneRecord(
        session_id=target.id,
        strategy=plan.strategy,
        test_start=test_rng.start,
        test_stop=test_rng.stop,
        fit_input_indices=fit_inputs,
        fit_target_indices=np.empty(0, dtype=np.int64),
        test_input_indices=_input_indices(s_te),
        test_target_indices=np.unique(t_te),
    )
    check_no_test_leakage(hygiene)
    return result, hygiene


def _finetune_on_target(
    source_decoder: Decoder,
    source: Session,
    source_norm: Normalizer,
    target: Session,
    plan: ExperimentPlan,
) -> tuple[EvalResult, HygieneRecord]:
    prep = _prepare(target, plan)
    ft_rng, val_rng, test_rng = strategy_ranges(plan.strategy, prep.n_samples)
    normalizer = fit_normalizer(prep, ft_rng) if plan.refresh_normalizer else source_norm
    norm = normalized_session(prep, normalizer)
    s_ft, x_ft, y_ft, t_ft = _fit_windows(norm, ft_rng, plan.offset_ms, test_rng)
    s_va, x_va, y_va, t_va = _fit_windows(norm, val_rng, plan.offset_ms, test_rng)
    s_te, x_te, y_te, t_te = _eval_windows(norm, test_rng, plan.offset_ms)
    if s_ft.size == 0 or s_te.size == 0:
        raise SplitError(f"target {target.id}: empty fine-tune or test window set")

    fam = plan.decoder.family
    shuffle = derive_seed(plan.master_seed, f"{source.id}->{target.id}", plan.cell_id, "finetune")
    cfg = replace(plan.train, freeze_body=True, shuffle_seed=shuffle)
    tuned, _ = fine_tune(
        source_decoder,
        featurize_batch(x_ft, fam),
        y_ft,
        featurize_batch(x_va, fam),
        y_va,
        cfg,
    )
    pred = tuned.predict_batch(featurize_batch(x_te, fam))
    if plan.clip_nonnegative:
        pred = np.maximum(pred, 0.0)
    result = EvalResult(
        session_id=target.id,
        rat_id=target.rat_id,
        strategy=plan.strategy,
        region_set=plan.region_label,
        band=plan.band,
        offset_ms=plan.offset_ms,
        model=fam,
        r=_safe_r(pred, y_te),
        r2=r_squared(pred, y_te),
        n_test_windows=int(s_te.size),
        seed=shuffle,
        source_id=source.id,
    )
    norm_inputs = np.arange(ft_rng.start, ft_rng.stop) if plan.refresh_normalizer else np.empty(0, dtype=np.int64)
    hygiene = HygieneRecord(
        session_id=target.id,
        strategy=plan.strategy,
        test_start=test_rng.start,
        test_stop=test_rng.stop,
        fit_input_indices=np.union1d(
            np.union1d(_input_indices(s_ft), _input_indices(s_va)), norm_inputs
        ),
        fit_target_indices=np.union1d(t_ft, t_va),
        test_input_indices=_input_indices(s_te),
        test_target_indices=np.unique(t_te),
    )
    check_no_test_leakage(hygiene)
    return result, hygiene


def _aggregate_per_target(pair_results: list[EvalResult], plan: ExperimentPlan) -> list[EvalResult]:
    """Per target session, the reported r/R² is the median over all source
    models evaluated on it (the identity when there is a single source)."""
    by_target: dict[str, list[EvalResult]] = {}
    for res in pair_results:
        by_target.setdefault(res.session_id, []).append(res)
    out = []
    for sid in sorted(by_target):
        group = by_target[sid]
        out.append(
            replace(
                group[0],
                r=float(np.median([g.r for g in group])),
                r2=float(np.median([g.r2 for g in group])),
                seed=derive_seed(plan.master_seed, sid, plan.cell_id, "aggregate"),
                source_id="",
            )
        )
    return out


def run_transfer(sessions: list[Session], plan: ExperimentPlan, jobs: int = 1) -> TransferOutput:
    if plan.strategy not in STRATEGIES[2:]:
        raise PlanError(f"run_transfer cannot execute strategy {plan.strategy!r}")
    pairs = transfer_pairs(sessions, plan.strategy)
    sources = sorted({src.id for src, _ in pairs})
    by_id = {s.id: s for s in sessions}

    source_plan = replace(plan, strategy="single_80")
    fine_tuning = plan.strategy.startswith("finetune")
    timings: list[tuple[str, float]] = []
    hygiene: list[HygieneRecord] = []
    models: dict[str, tuple[Decoder, Normalizer]] = {}
    outs = _map_jobs(_train_source_job, [(by_id[sid], source_plan) for sid in sources], jobs)
    for sid, out in zip(sources, outs):
        models[sid] = (out.decoder, out.normalizer)
        hygiene.append(out.hygiene)
        timings.append((f"train:{sid}:{plan.cell_id}", out.wall_time_s))

    pair_results: list[EvalResult] = []
    for src, tgt in pairs:
        t0 = time.perf_counter()
        decoder, source_norm = models[src.id]
        if fine_tuning:
            res, rec = _finetune_on_target(decoder, src, source_norm, tgt, plan)
        else:
            res, rec = _evaluate_on_target(decoder, src, source_norm, tgt, plan)
        pair_results.append(res)
        hygiene.append(rec)
        timings.append((f"pair:{src.id}->{tgt.id}:{plan.cell_id}", time.perf_counter() - t0))

    expected = expected_evaluation_count(
        [len([s for s in sessions if s.rat_id == rid]) for rid in sorted({s.rat_id for s in sessions})],
        plan.strategy,
    )
    if len(pair_results) != expected:
        raise PlanError(f"evaluation count {len(pair_results)} != formula {expected}")
    aggregated = _aggregate_per_target(pair_results, plan)
    return TransferOutput(pair_results, aggregated, hygiene, timings, len(pair_results))


# ---------------------------------------------------------------------------
# attribution and offset drivers


@dataclass
class ExperimentOutput:
    results: list[EvalResult]
    hygiene: list[HygieneRecord]
    timings: list[tuple[str, float]]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    band_energies: list[tuple[str, str, float]] = field(default_factory=list)


def _train_source_job(session: Session, plan: ExperimentPlan) -> SingleRunOutput:
    return run_single_session(session, plan)


def _map_jobs(worker, arg_tuples, jobs: int):
    if jobs <= 1 or len(arg_tuples) <= 1:
        return [worker(*args) for args in arg_tuples]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(worker, *args) for args in arg_tuples]
        return [f.result() for f in futures]


def run_baseline(sessions: list[Session], plan: ExperimentPlan, jobs: int = 1) -> ExperimentOutput:
    out = ExperimentOutput([], [], [])
    runs = _map_jobs(_train_source_job, [(s, plan) for s in sessions], jobs)
    for session, run in zip(sessions, runs):
        out.results.append(run.result)
        out.hygiene.append(run.hygiene)
        out.timings.append((f"single:{session.id}:{plan.cell_id}", run.wall_time_s))
    return out


def region_cells(include_pairs: bool = True) -> list[tuple[str, ...]]:
    cells = [(r,) for r in REGIONS]
    if include_pairs:
        cells += [tuple(sorted(p)) for p in itertools.combinations(REGIONS, 2)]
    return cells


def run_region_analysis(
    sessions: list[Session],
    plan: ExperimentPlan,
    include_pairs: bool = True,
    jobs: int = 1,
) -> ExperimentOutput:
    """Single-region (diagonal) and region-pair cells under the baseline
    protocol; sessions lacking a cell's channels are skipped and recorded."""
    out = ExperimentOutput([], [], [])
    for cell in region_cells(include_pairs):
        cell_plan = replace(plan, region_set=cell)
        runnable = []
        for s in sessions:
            if any(r in cell for r in s.region_map):
                runnable.append(s)
            else:
                out.skipped.append((s.id, cell_plan.region_label))
        runs = _map_jobs(_train_source_job, [(s, cell_plan) for s in runnable], jobs)
        for session, run in zip(runnable, runs):
            out.results.append(run.result)
            out.hygiene.append(run.hygiene)
            out.timings.append((f"region:{session.id}:{cell_plan.cell_id}", run.wall_time_s))
    return out


def run_band_analysis(
    sessions: list[Session],
    plan: ExperimentPlan,
    bands: tuple[str, ...] = BAND_NAMES,
    jobs: int = 1,
) -> ExperimentOutput:
    out = ExperimentOutput([], [], [])
    for band_name in bands:
        band_plan = replace(plan, band=band_name)
        runs = _map_jobs(_train_source_job, [(s, band_plan) for s in sessions], jobs)
        for session, run in zip(sessions, runs):
            out.results.append(run.result)
            out.hygiene.append(run.hygiene)
            out.timings.append((f"band:{session.id}:{band_plan.cell_id}", run.wall_time_s))
            isolated = band_isolate(session, band(band_name))
            out.band_energies.append(
                (session.id, band_name, float(np.mean(np.var(isolated.eeg, axis=1))))
            )
    return out


def _speed_rnn_job(session: Session, plan: ExperimentPlan) -> SingleRunOutput:
    """Speed-history reference model: same windowing and splits, but the
    input is the (train-normalized) past speed trace itself."""
    t0 = time.perf_counter()
    fit_rng, val_rng, test_rng = strategy_ranges("single_80", session.n_samples)
    mu = float(np.mean(session.speed[fit_rng.start : fit_rng.stop]))
    sd = float(np.std(session.speed[fit_rng.start : fit_rng.stop]))
    sd = max(sd, 1e-8)
    z = (session.speed - mu) / sd

    def _take(rng_: range, eval_mode: bool):
        starts, x, y = speed_window_arrays(z, rng_, plan.offset_ms, session.sample_rate_hz)
        targets = starts + WINDOW_LEN - 1 + _offset_samples(session, plan.offset_ms)
        if eval_mode:
            keep = (targets >= rng_.start + WINDOW_LEN - 1) & (targets < rng_.stop)
        else:
            keep = (targets < test_rng.start) | (targets >= test_rng.stop)
        # targets were taken from the z-scored trace; undo for raw-speed fit
        return starts[keep], x[keep], y[keep] * sd + mu, targets[keep]

    s_tr, x_tr, y_tr, t_tr = _take(fit_rng, False)
    s_va, x_va, y_va, t_va = _take(val_rng, False)
    s_te, x_te, y_te, t_te = _take(test_rng, True)
    if s_tr.size == 0 or s_te.size == 0:
        raise SplitError(f"session {session.id}: empty speed_rnn window set")

    seed_init = derive_seed(plan.master_seed, session.id, plan.cell_id, "init")
    spec = DecoderSpec(
        family="speed_rnn",
        n_channels=1,
        window_len=WINDOW_LEN,
        lstm_hidden=plan.decoder.lstm_hidden,
        head_hidden=plan.decoder.head_hidden,
        dropout=plan.decoder.dropout,
        seed=seed_init,
    )
    shuffle = derive_seed(plan.master_seed, session.id, plan.cell_id, "shuffle")
    cfg = replace(plan.train, shuffle_seed=shuffle)
    decoder, report = train(new_decoder(spec), x_tr, y_tr, x_va, y_va, cfg)
    pred = decoder.predict_batch(x_te)
    if plan.clip_nonnegative:
        pred = np.maximum(pred, 0.0)
    result = EvalResult(
        session_id=session.id,
        rat_id=session.rat_id,
        strategy="single_80",
        region_set="all",
        band=plan.band,
        offset_ms=plan.offset_ms,
        model="speed_rnn",
        r=_safe_r(pred, y_te),
        r2=r_squared(pred, y_te),
        n_test_windows=int(s_te.size),
        seed=seed_init,
    )
    hygiene = HygieneRecord(
        session_id=session.id,
        strategy="single_80",
        test_start=test_rng.start,
        test_stop=test_rng.stop,
        fit_input_indices=np.union1d(_input_indices(s_tr), _input_indices(s_va)),
        fit_target_indices=np.union1d(t_tr, t_va),
        test_input_indices=_input_indices(s_te),
        test_target_indices=np.unique(t_te),
    )
    check_no_test_leakage(hygiene)
    return SingleRunOutput(result, decoder, None, report, hygiene, time.perf_counter() - t0)


def autocorrelation_results(session: Session, max_lag_ms: int = AUTOCORR_MAX_LAG_MS) -> list[EvalResult]:
    """Speed autocorrelation at every stride lag out to ±max_lag_ms, shaped
    like decoder rows (model "autocorrelation", r2 = r²). The negative side
    mirrors the positive one; lagged Pearson on a single trace is symmetric."""
    step_ms = 1000.0 / session.sample_rate_hz
    max_lag = int(round(max_lag_ms / step_ms))
    curve = autocorrelation(session.speed, max_lag)
    n = session.n_samples
    rows = []
    for k in range(-max_lag, max_lag + 1):
        r = float(curve[abs(k)])
        rows.append(
            EvalResult(
                session_id=session.id,
                rat_id=session.rat_id,
                strategy="single_80",
                region_set="all",
                band="fullband",
                offset_ms=int(round(k * step_ms)),
                model="autocorrelation",
                r=r,
                r2=r * r,
                n_test_windows=n - abs(k),
                seed=0,
            )
        )
    return rows


def run_offset_analysis(
    sessions: list[Session],
    plan: ExperimentPlan,
    offsets_ms: tuple[int, ...] = DEFAULT_OFFSETS_MS,
    include_speed_rnn: bool = True,
    include_autocorrelation: bool = True,
    jobs: int = 1,
) -> ExperimentOutput:
    """Shifted-target decoding per offset for the EEG decoder and the
    speed-history reference, plus the speed autocorrelation curve."""
    out = ExperimentOutput([], [], [])
    for offset in offsets_ms:
        off_plan = replace(plan, strategy="single_80", offset_ms=offset)
        runs = _map_jobs(_train_source_job, [(s, off_plan) for s in sessions], jobs)
        for session, run in zip(sessions, runs):
            out.results.append(run.result)
            out.hygiene.append(run.hygiene)
            out.timings.append((f"offset:{session.id}:{off_plan.cell_id}", run.wall_time_s))
        if include_speed_rnn:
            runs = _map_jobs(_speed_rnn_job, [(s, off_plan) for s in sessions], jobs)
            for session, run in zip(sessions, runs):
                out.results.append(run.result)
                out.hygiene.append(run.hygiene)
                out.timings.append(
                    (f"offset_speed:{session.id}:{off_plan.cell_id}", run.wall_time_s)
                )
    if include_autocorrelation:
        for session in sessions:
            out.results.extend(autocorrelation_results(session))
    return out


# ---------------------------------------------------------------------------
# results tables


RESULTS_COLUMNS = (
    "session_id",
    "rat_id",
    "strategy",
    "region_set",
    "band",
    "offset_ms",
    "model",
    "r",
    "r2",
    "n_test_windows",
    "seed",
    "wall_time_s",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_sort_key(res: EvalResult):
    return (
        res.strategy,
        res.model,
        res.region_set,
        res.band,
        res.offset_ms,
        res.session_id,
        res.source_id,
    )


def results_to_csv_text(results, config_hash: str = "", master_seed: int = 0) -> str:
    """Canonical results table. Rows are sorted deterministically and the
    wall_time_s column is pinned to 0.0 so identical configurations serialize
    bitwise identically; real durations live in the timings table."""
    lines = [f"# config_hash={config_hash} seed={master_seed}", ",".join(RESULTS_COLUMNS)]
    for res in sorted(results, key=results_sort_key):
        lines.append(
            ",".join(
                [
                    res.session_id,
                    res.rat_id,
                    res.strategy,
                    res.region_set,
                    res.band,
                    str(res.offset_ms),
                    res.model,
                    _fmt(res.r),
                    _fmt(res.r2),
                    str(res.n_test_windows),
                    str(res.seed),
                    _fmt(0.0),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def timings_to_csv_text(timings) -> str:
    lines = ["label,wall_time_s"]
    for label, secs in timings:
        lines.append(f"{label},{_fmt(float(secs))}")
    return "\n".join(lines) + "\n"


def parse_results_csv(text: str) -> list[EvalResult]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise FormatError("results table is empty")
    header = lines[0].split(",")
    if list(header) != list(RESULTS_COLUMNS):
        raise FormatError(f"unexpected results header: {header}")
    out = []
    for i, ln in enumerate(lines[1:], start=2):
        f = ln.split(",")
        if len(f) != len(RESULTS_COLUMNS):
            raise FormatError(f"results line {i}: {len(f)} fields, expected {len(RESULTS_COLUMNS)}")
        try:
            out.append(
                EvalResult(
                    session_id=f[0],
                    rat_id=f[1],
                    strategy=f[2],
                    region_set=f[3],
                    band=f[4],
                    offset_ms=int(f[5]),
                    model=f[6],
                    r=float(f[7]),
                    r2=float(f[8]),
                    n_test_windows=int(f[9]),
                    seed=int(f[10]),
                )
            )
        except ValueError as exc:
            raise FormatError(f"results line {i}: {exc}") from exc
    return out
