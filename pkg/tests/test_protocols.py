"""Orchestration-layer tests.

The expensive end-to-end constructions (transfer collapse, attribution
recovery, offset crossover) live in the acceptance suite; here we pin the
bookkeeping that makes those runs trustworthy: strategy-specific splits,
evaluation-count formulas, window trimming at nonzero offsets, leakage
assertions, seed derivation, identity configurations, and the results
table format.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locodec.decoders import DecoderSpec
from locodec.errors import DegenerateDataError, FormatError, LeakageError, PlanError, SplitError
from locodec.protocols import (
    DEFAULT_OFFSETS_MS,
    EvalResult,
    ExperimentPlan,
    HygieneRecord,
    _eval_windows,
    _fit_windows,
    autocorrelation_results,
    check_no_test_leakage,
    derive_seed,
    evaluate_saved,
    expected_evaluation_count,
    parse_results_csv,
    results_to_csv_text,
    run_band_analysis,
    run_baseline,
    run_region_analysis,
    run_single_session,
    run_transfer,
    strategy_ranges,
    timings_to_csv_text,
    transfer_pairs,
)
from locodec.sessions import REGIONS, WINDOW_LEN, split_ranges
from locodec.stats import r_squared
from locodec.synthetic import FleetSpec, generate_synthetic_fleet
from locodec.trainer import TrainConfig

LIN = DecoderSpec(family="linear", n_channels=8)
FAST = TrainConfig(max_epochs=8, patience=3, learning_rate=3e-3)


def tiny_fleet(**kw):
    base = dict(n_rats=1, sessions_per_rat=1, n_channels=8, duration_s=20.0,
                encoding="linear", noise_scale=0.2, seed=0)
    base.update(kw)
    return generate_synthetic_fleet(FleetSpec(**base))


def result_fields(res: EvalResult) -> tuple:
    return (res.session_id, res.r, res.r2, res.n_test_windows, res.seed)


# ---------------------------------------------------------------------------
# plans, seeds, ranges


def test_plan_rejects_unknown_names():
    with pytest.raises(PlanError):
        ExperimentPlan(decoder=LIN, strategy="single_50")
    with pytest.raises(PlanError):
        ExperimentPlan(decoder=LIN, band="mu")
    with pytest.raises(PlanError):
        ExperimentPlan(decoder=LIN, region_set=("thalamus",))
    with pytest.raises(PlanError):
        ExperimentPlan(decoder=LIN, region_set=("motor", "motor"))


def test_region_label_and_cell_id():
    assert ExperimentPlan(decoder=LIN).region_label == "all"
    assert ExperimentPlan(decoder=LIN, region_set=tuple(REGIONS)).region_label == "all"
    assert ExperimentPlan(decoder=LIN, region_set=("visual", "motor")).region_label == "motor+visual"
    plan = ExperimentPlan(decoder=LIN, strategy="single_10", band="theta", offset_ms=-200)
    assert plan.cell_id == "single_10|linear|all|theta|-200"


def test_derive_seed_is_stable_and_order_sensitive():
    assert derive_seed("a", 1, "x") == derive_seed("a", 1, "x")
    assert derive_seed("a", 1, "x") != derive_seed("x", 1, "a")
    assert 0 <= derive_seed("anything") < 2**64


def test_identity_configurations_share_seeds():
    # all-regions explicit vs empty region set is the same cell, so every
    # derived job seed coincides and results reproduce bitwise.
    a = ExperimentPlan(decoder=LIN, region_set=tuple(REGIONS))
    b = ExperimentPlan(decoder=LIN, region_set=())
    assert a.cell_id == b.cell_id
    assert derive_seed(0, "s", a.cell_id, "init") == derive_seed(0, "s", b.cell_id, "init")


def test_strategy_ranges_single_80_matches_split():
    assert strategy_ranges("single_80", 4000) == split_ranges(4000)


def test_strategy_ranges_head_calibration():
    fit, val, test = strategy_ranges("single_10", 4000)
    assert fit == range(0, 400)
    assert val == range(400, 800)
    assert test == split_ranges(4000)[2]
    ft_fit, ft_val, ft_test = strategy_ranges("finetune_cross_subject", 4000)
    assert (ft_fit, ft_val, ft_test) == (fit, val, test)


def test_strategy_ranges_too_short_for_head_calibration():
    with pytest.raises(SplitError):
        strategy_ranges("single_10", 150)  # first 10% = 15 samples < one window


# ---------------------------------------------------------------------------
# window assembly at offsets


def _norm_session():
    (s,) = tiny_fleet(duration_s=40.0)
    return s


@pytest.mark.parametrize("offset_ms", [-500, -100, 0, 100, 500])
def test_eval_window_trimming_is_exact(offset_ms):
    session = _norm_session()
    _, _, test = split_ranges(session.n_samples)
    starts0, _, _, targets0 = _eval_windows(session, test, 0)
    starts, _, _, targets = _eval_windows(session, test, offset_ms)
    lost = abs(offset_ms) // 10
    assert starts.size == starts0.size - lost
    assert np.all(targets >= test.start + WINDOW_LEN - 1)
    assert np.all(targets < test.stop)
    # evaluated targets are a subset of the offset-0 targets
    assert np.all(np.isin(targets, targets0))


@pytest.mark.parametrize("offset_ms", [-300, 0, 300])
def test_fit_windows_never_target_the_test_range(offset_ms):
    session = _norm_session()
    fit, val, test = split_ranges(session.n_samples)
    for rng in (fit, val):
        starts, x, y, targets = _fit_windows(session, rng, offset_ms, test)
        assert starts.size > 0
        assert not np.any((targets >= test.start) & (targets < test.stop))
        assert x.shape[1:] == (WINDOW_LEN, session.n_channels)
        np.testing.assert_array_equal(y, session.speed[targets])


# ---------------------------------------------------------------------------
# hygiene records


def _record(**kw):
    base = dict(
        session_id="s",
        strategy="single_80",
        test_start=100,
        test_stop=200,
        fit_input_indices=np.arange(0, 80),
        fit_target_indices=np.arange(19, 80),
        test_input_indices=np.arange(100, 200),
        test_target_indices=np.arange(119, 200),
    )
    base.update(kw)
    return HygieneRecord(**base)


def test_leakage_clean_record_passes():
    check_no_test_leakage(_record())


def test_leakage_detects_fit_input_in_test_range():
    with pytest.raises(LeakageError, match="fitting input"):
        check_no_test_leakage(_record(fit_input_indices=np.array([50, 150])))


def test_leakage_detects_fit_target_in_test_range():
    with pytest.raises(LeakageError, match="fitting target"):
        check_no_test_leakage(_record(fit_target_indices=np.array([199])))


def test_leakage_detects_eval_escaping_test_range():
    with pytest.raises(LeakageError, match="leave the test range"):
        check_no_test_leakage(_record(test_target_indices=np.array([150, 205])))


# ---------------------------------------------------------------------------
# single-session runs


def test_single_session_result_row_and_hygiene():
    (session,) = tiny_fleet(duration_s=40.0)
    plan = ExperimentPlan(decoder=LIN, train=FAST, master_seed=3)
    out = run_single_session(session, plan)
    assert out.result.session_id == session.id
    assert out.result.model == "linear"
    assert -1.0 <= out.result.r <= 1.0
    assert out.result.n_test_windows == 381
    assert out.report is not None
    rec = out.hygiene
    test_set = np.arange(rec.test_start, rec.test_stop)
    assert np.intersect1d(rec.fit_input_indices, test_set).size == 0
    assert np.intersect1d(rec.fit_target_indices, test_set).size == 0


def test_single_session_rejects_transfer_strategies():
    (session,) = tiny_fleet()
    plan = ExperimentPlan(decoder=LIN, train=FAST, strategy="zeroshot_cross_session")
    with pytest.raises(PlanError):
        run_single_session(session, plan)


def test_mean_predictor_has_zero_r_squared():
    y = np.array([0.4, 1.2, 0.9, 2.2, 0.1])
    pred = np.full_like(y, y.mean())
    assert r_squared(pred, y) == 0.0


def test_constant_test_speed_is_a_data_defect():
    import dataclasses

    (session,) = tiny_fleet(duration_s=40.0)
    flat = dataclasses.replace(session, speed=np.full(session.n_samples, 1.5))
    plan = ExperimentPlan(decoder=LIN, train=FAST)
    with pytest.raises(DegenerateDataError):
        run_single_session(flat, plan)


def test_single_10_trains_on_less_data_than_single_80():
    # Data-scaling direction, in expectation over seeds: the first-10%
    # calibration model cannot beat the 80% model on average.
    diffs = []
    for seed in range(10):
        (session,) = tiny_fleet(duration_s=30.0, noise_scale=1.2, speed_bias=1.0, seed=seed)
        cfg = TrainConfig(max_epochs=25, patience=8, learning_rate=3e-3)
        r80 = run_single_session(session, ExperimentPlan(decoder=LIN, train=cfg)).result.r
        r10 = run_single_session(
            session, ExperimentPlan(decoder=LIN, train=cfg, strategy="single_10")
        ).result.r
        diffs.append(r80 - r10)
    assert np.mean(diffs) > 0.0


def test_evaluate_saved_reproduces_training_row_at_offset_zero():
    (session,) = tiny_fleet(duration_s=40.0)
    plan = ExperimentPlan(decoder=LIN, train=FAST, master_seed=9)
    out = run_single_session(session, plan)
    again = evaluate_saved(out.decoder, out.normalizer, session, plan)
    assert result_fields(again) == result_fields(out.result)


# ---------------------------------------------------------------------------
# transfer bookkeeping


def test_evaluation_count_formulas_from_roster():
    assert expected_evaluation_count([3, 2], "zeroshot_cross_session") == 8
    assert expected_evaluation_count([3, 2], "finetune_cross_session") == 8
    assert expected_evaluation_count([3, 2], "zeroshot_cross_subject") == 12
    assert expected_evaluation_count([3, 2], "finetune_cross_subject") == 12
    with pytest.raises(PlanError):
        expected_evaluation_count([3, 2], "single_80")


@given(
    counts=st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=5),
)
@settings(max_examples=50, deadline=None)
def test_evaluation_counts_match_brute_force(counts):
    total = sum(counts)
    cross_session = sum(n * (n - 1) for n in counts)
    cross_subject = sum(n * (total - n) for n in counts)
    assert expected_evaluation_count(counts, "zeroshot_cross_session") == cross_session
    assert expected_evaluation_count(counts, "zeroshot_cross_subject") == cross_subject
    assert cross_session + cross_subject == total * (total - 1)


def test_transfer_pairs_partition_all_ordered_pairs():
    sessions = tiny_fleet(n_rats=3, sessions_per_rat=2, duration_s=20.0)
    cs = transfer_pairs(sessions, "zeroshot_cross_session")
    xs = transfer_pairs(sessions, "zeroshot_cross_subject")
    assert len(cs) == expected_evaluation_count([2, 2, 2], "zeroshot_cross_session")
    assert len(xs) == expected_evaluation_count([2, 2, 2], "zeroshot_cross_subject")
    all_pairs = {(a.id, b.id) for a, b in cs} | {(a.id, b.id) for a, b in xs}
    assert len(all_pairs) == 6 * 5
    for a, b in cs:
        assert a.rat_id == b.rat_id and a.id != b.id
    for a, b in xs:
        assert a.rat_id != b.rat_id


def test_transfer_pairs_too_small_roster():
    sessions = tiny_fleet(n_rats=1, sessions_per_rat=1)
    with pytest.raises(PlanError):
        transfer_pairs(sessions, "zeroshot_cross_subject")


def test_single_source_aggregation_is_identity():
    sessions = tiny_fleet(n_rats=1, sessions_per_rat=2, duration_s=30.0)
    plan = ExperimentPlan(
        decoder=LIN, train=FAST, strategy="zeroshot_cross_session", master_seed=2
    )
    out = run_transfer(sessions, plan)
    assert out.n_evaluations == 2
    pair_by_target = {r.session_id: r for r in out.pair_results}
    for agg in out.aggregated:
        assert agg.r == pair_by_target[agg.session_id].r
        assert agg.r2 == pair_by_target[agg.session_id].r2
        assert agg.source_id == ""
    assert {r.source_id for r in out.pair_results} == {s.id for s in sessions}


def test_run_transfer_rejects_single_strategies():
    sessions = tiny_fleet(n_rats=1, sessions_per_rat=2)
    with pytest.raises(PlanError):
        run_transfer(sessions, ExperimentPlan(decoder=LIN, train=FAST))


# ---------------------------------------------------------------------------
# attribution and offsets: identity configurations


def test_all_regions_cell_reproduces_baseline_bitwise():
    (session,) = tiny_fleet(duration_s=40.0)
    base = run_single_session(session, ExperimentPlan(decoder=LIN, train=FAST, master_seed=7))
    allr = run_single_session(
        session,
        ExperimentPlan(decoder=LIN, train=FAST, master_seed=7, region_set=tuple(REGIONS)),
    )
    assert result_fields(base.result) == result_fields(allr.result)
    assert base.decoder.checksum() == allr.decoder.checksum()


def test_fullband_cell_reproduces_baseline_bitwise():
    sessions = tiny_fleet(duration_s=40.0)
    plan = ExperimentPlan(decoder=LIN, train=FAST, master_seed=7)
    base = run_baseline(sessions, plan)
    bands = run_band_analysis(sessions, plan, bands=("fullband",))
    assert [result_fields(r) for r in bands.results] == [result_fields(r) for r in base.results]
    assert bands.band_energies[0][1] == "fullband"


def test_region_analysis_skips_sessions_without_the_region():
    sessions = tiny_fleet(n_channels=2, duration_s=40.0)  # only medial_prefrontal present
    plan = ExperimentPlan(decoder=DecoderSpec(family="linear", n_channels=2), train=FAST)
    out = run_region_analysis(sessions, plan, include_pairs=False)
    ran_cells = {r.region_set for r in out.results}
    assert ran_cells == {"medial_prefrontal"}
    skipped_cells = {cell for _, cell in out.skipped}
    assert skipped_cells == {"motor", "somatomotor", "visual"}


def test_region_channel_subset_shrinks_input_width():
    (session,) = tiny_fleet(n_channels=8, duration_s=40.0)
    plan = ExperimentPlan(decoder=LIN, train=FAST, region_set=("motor",))
    out = run_single_session(session, plan)
    # 8 channels cycle mpfc,mpfc,smc,smc,motor,motor,visual,visual
    assert out.decoder.spec.n_channels == 2


def test_autocorrelation_rows_shape_and_symmetry():
    (session,) = tiny_fleet(duration_s=30.0)
    rows = autocorrelation_results(session)
    offsets = [r.offset_ms for r in rows]
    assert offsets == list(range(-1000, 1010, 10))
    by_off = {r.offset_ms: r for r in rows}
    assert by_off[0].r == 1.0
    for k in (10, 250, 990):
        assert by_off[k].r == by_off[-k].r
        assert by_off[k].r2 == pytest.approx(by_off[k].r ** 2)
        assert by_off[k].n_test_windows == session.n_samples - k // 10
        assert by_off[k].model == "autocorrelation"


# ---------------------------------------------------------------------------
# results table round-trips


def _some_rows():
    return [
        EvalResult("r1_s1", "r1", "single_80", "all", "fullband", 0, "linear",
                   0.5, 0.25, 100, 7),
        EvalResult("r1_s2", "r1", "single_80", "all", "fullband", 0, "linear",
                   -0.125, -0.39, 100, 8),
        EvalResult("r1_s1", "r1", "single_80", "all", "theta", -500, "lstm_rnn",
                   0.875, 0.75, 50, 9),
    ]


def test_results_csv_roundtrip_and_header():
    text = results_to_csv_text(_some_rows(), config_hash="abc123", master_seed=4)
    lines = text.splitlines()
    assert lines[0] == "# config_hash=abc123 seed=4"
    assert lines[1].startswith("session_id,rat_id,strategy,")
    assert lines[1].endswith(",seed,wall_time_s")
    parsed = parse_results_csv(text)
    assert sorted(parsed, key=lambda r: (r.model, r.session_id)) == sorted(
        _some_rows(), key=lambda r: (r.model, r.session_id)
    )


def test_results_csv_row_order_is_canonical():
    rows = _some_rows()
    assert results_to_csv_text(rows) == results_to_csv_text(rows[::-1])


def test_results_csv_floats_roundtrip_exactly():
    rows = [
        EvalResult("a_s1", "a", "single_80", "all", "fullband", 0, "linear",
                   0.12345678901234567, -0.9876543210987654, 3, 1)
    ]
    (parsed,) = parse_results_csv(results_to_csv_text(rows))
    assert parsed.r == rows[0].r
    assert parsed.r2 == rows[0].r2


def test_parse_rejects_foreign_header():
    with pytest.raises(FormatError):
        parse_results_csv("a,b,c\n1,2,3\n")


def test_parse_rejects_field_count_mismatch():
    good = results_to_csv_text([], config_hash="x", master_seed=0)
    with pytest.raises(FormatError, match="fields"):
        parse_results_csv(good + "a,b,c\n")


def test_timings_csv_shape():
    text = timings_to_csv_text([("single:s1:cell", 1.25), ("pair:s1->s2:cell", 0.5)])
    lines = text.splitlines()
    assert lines[0] == "label,wall_time_s"
    assert lines[1] == "single:s1:cell,1.25"


def test_eval_result_validation():
    with pytest.raises(ValueError):
        EvalResult("s", "r", "single_80", "all", "fullband", 0, "linear", 1.5, 0.2, 10, 0)
    with pytest.raises(ValueError):
        EvalResult("s", "r", "single_80", "all", "fullband", 0, "linear", 0.5, 1.2, 10, 0)
    with pytest.raises(ValueError):
        EvalResult("s", "r", "single_80", "all", "fullband", 0, "linear", 0.5, 0.2, 0, 0)


def test_default_offsets_cover_the_grid():
    assert DEFAULT_OFFSETS_MS == (-1000, -500, -200, -100, 0, 100, 200, 500, 1000)
