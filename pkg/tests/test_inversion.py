"""Source inversion and moving-window monitoring unit tests."""

import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakmon.cones import extract_cones
from leakmon.geometry import BoxRegion, SiteSpec
from leakmon.inversion import (
    InversionProblem,
    MonitoringConfig,
    MonitoringState,
    STATUS_INSUFFICIENT,
    STATUS_NO_RECORDS,
    STATUS_OK,
    _direct_objective,
    _direct_objective_batch,
    _polish,
    invert,
    monitor_step,
    objective_wmse,
    penalized_objective,
    round_half_away,
    transform_variables,
    untransform_variables,
)
from leakmon.records import RecordSet, SensorStream, WeatherSeries, weight_records
from leakmon.solvers import GAConfig, MCMCConfig

from conftest import closed_loop_fixture, square_site


def _subspace_site():
    master = BoxRegion.from_polygon(
        [(0, 0), (200, 0), (200, 200), (0, 200)], name="master"
    )
    near = BoxRegion.from_polygon(
        [(105, 65), (135, 65), (135, 95), (105, 95)], name="near"
    )
    far = BoxRegion.from_polygon([(20, 150), (60, 150), (60, 190), (20, 190)], name="far")
    return SiteSpec(master=master, subspaces=[near, far])


def test_round_half_away():
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.5) == -3
    assert round_half_away(2.49) == 2
    assert round_half_away(-2.49) == -2
    assert round_half_away(3.5) == 4
    assert round_half_away(0.0) == 0


def test_subspace_index_rounding_and_clamping():
    site = _subspace_site()
    v = np.array([100.0, 100.0, 2.0, 10.0, 2.5])
    assert transform_variables(v, site)[1] == 3
    v[4] = 2.49
    assert transform_variables(v, site)[1] == 2
    v[4] = -7.0
    assert transform_variables(v, site)[1] == 1
    v[4] = 99.0
    assert transform_variables(v, site)[1] == 3


def test_transform_lands_inside_selected_box():
    site = _subspace_site()
    rng = np.random.default_rng(0)
    lo, hi = site.master.lb, site.master.ub
    for _ in range(200):
        v = rng.uniform(lo[:4], hi[:4])
        b = rng.integers(2, site.n_boxes + 1)
        x, got_b, _ = transform_variables(np.append(v, float(b)), site)
        assert got_b == b
        assert site.box(b).contains((x.x, x.y))


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(0, 200, allow_nan=False),
    y=st.floats(0, 200, allow_nan=False),
    z=st.floats(0, 6, allow_nan=False),
    r=st.floats(0.1, 100, allow_nan=False),
    b=st.integers(1, 3),
)
def test_transform_untransform_bijection(x, y, z, r, b):
    site = _subspace_site()
    v = np.array([x, y, z, r, float(b)])
    cand, got_b, _ = transform_variables(v, site)
    back = untransform_variables(cand.as_array(), got_b, site)
    assert np.allclose(back[:4], v[:4], rtol=0, atol=1e-9)
    assert back[4] == got_b


def test_objective_requires_weighted_records(closed_loop):
    *_, recs = closed_loop
    bare = RecordSet(records=recs.records)  # weights stripped
    with pytest.raises(ValueError):
        objective_wmse(np.array([120.0, 80.0, 2.0, 20.0]), bare)
    with pytest.raises(ValueError):
        objective_wmse(np.array([120.0, 80.0, 2.0, 20.0]), RecordSet())


def test_objective_zero_at_truth(closed_loop):
    site, truth, _, _, recs = closed_loop
    f = objective_wmse(np.array([truth.x, truth.y, truth.z, truth.rate_kg_h]), recs)
    assert f < 1e-10


def test_penalties_punish_infeasible_candidates(closed_loop):
    site, truth, _, _, recs = closed_loop
    problem = InversionProblem(records=recs, site=site)
    inside = np.array([truth.x, truth.y, truth.z, truth.rate_kg_h])
    assert _direct_objective(inside, problem) == pytest.approx(objective_wmse(inside, recs))
    outside = np.array([250.0, 80.0, 2.0, 20.0])  # 50 m past the fence
    assert _direct_objective(outside, problem) > objective_wmse(outside, recs) + 1e3


def test_batch_objective_matches_scalar(closed_loop):
    site, truth, _, _, recs = closed_loop
    problem = InversionProblem(records=recs, site=site)
    rng = np.random.default_rng(1)
    X = rng.uniform([0, 0, 0, 0.1], [250, 250, 6, 100], size=(40, 4))
    batch = _direct_objective_batch(problem)(X)
    scalar = np.array([_direct_objective(x, problem) for x in X])
    assert np.array_equal(batch, scalar)


def test_problem_class_ladder(closed_loop):
    site, _, weather, streams, recs = closed_loop
    assert InversionProblem(records=recs, site=site).klass == "A"
    cones = extract_cones(streams, weather, active_threshold=0.5, background=0.0)
    assert len(cones) > 0
    assert InversionProblem(records=recs, site=site, cones=cones).klass == "B"
    subs = _subspace_site()
    assert InversionProblem(records=recs, site=subs).klass == "C"
    assert InversionProblem(records=recs, site=subs, cones=cones).klass == "D"


def test_invert_status_gates(closed_loop):
    site, *_ = closed_loop
    sol = invert(InversionProblem(records=RecordSet(), site=site), GAConfig(population=8))
    assert sol.status == STATUS_NO_RECORDS
    _, _, _, _, recs = closed_loop
    few = RecordSet(records=recs.records[:3], raw=recs.raw[:3])
    weight_records(few)
    sol = invert(InversionProblem(records=few, site=site, min_records=5), GAConfig(population=8))
    assert sol.status == STATUS_INSUFFICIENT
    assert sol.n_records == 3
    assert sol.diagnostics


@pytest.fixture(scope="module")
def solved_class_a():
    site, truth, weather, streams, recs = closed_loop_fixture()
    problem = InversionProblem(records=recs, site=site)
    sol = invert(problem, GAConfig(population=40, generations=60, seed=0))
    return site, truth, recs, sol


def test_invert_recovers_source(solved_class_a):
    _, truth, _, sol = solved_class_a
    assert sol.status == STATUS_OK
    assert sol.klass == "A"
    assert np.hypot(sol.best.x - truth.x, sol.best.y - truth.y) < 1.0
    assert abs(sol.best.r - truth.rate_kg_h) / truth.rate_kg_h < 0.05
    assert sol.b == 1


def test_solution_never_dominated_by_truth(solved_class_a):
    _, truth, recs, sol = solved_class_a
    f_truth = objective_wmse(np.array([truth.x, truth.y, truth.z, truth.rate_kg_h]), recs)
    assert sol.objective <= f_truth


def test_solution_serialization(solved_class_a):
    _, _, recs, sol = solved_class_a
    d = sol.to_dict()
    assert d["status"] == "ok"
    assert d["class"] == "A"
    assert d["n_records"] == len(recs)
    assert d["n_sensors"] == 3
    assert set(d["solution"]) == {"x", "y", "z", "rate_kg_h", "subspace", "objective"}
    json.dumps(d)  # JSON-ready without custom encoders


def test_invert_attributes_subspace(closed_loop):
    _, truth, _, _, recs = closed_loop
    site = _subspace_site()  # truth sits inside the "near" box (index 2)
    problem = InversionProblem(records=recs, site=site)
    sol = invert(problem, GAConfig(population=30, generations=40, seed=0))
    assert sol.status == STATUS_OK
    assert sol.klass == "C"
    assert sol.b == 2
    assert np.hypot(sol.best.x - truth.x, sol.best.y - truth.y) < 3.0


def test_invert_with_cones_and_subspaces(closed_loop):
    _, truth, weather, streams, recs = closed_loop
    site = _subspace_site()
    cones = extract_cones(
        streams, weather, active_threshold=0.5, background=0.0, master=site.master
    )
    problem = InversionProblem(records=recs, site=site, cones=cones)
    sol = invert(problem, GAConfig(population=30, generations=40, seed=0))
    assert sol.status == STATUS_OK
    assert sol.klass == "D"
    assert sol.b == 2


def test_penalized_objective_matches_wmse_when_feasible(closed_loop):
    _, truth, _, _, recs = closed_loop
    site = _subspace_site()
    problem = InversionProblem(records=recs, site=site)
    v = untransform_variables(np.array([truth.x, truth.y, truth.z, truth.rate_kg_h]), 2, site)
    x, b, _ = transform_variables(v, site)
    assert b == 2
    assert np.allclose(x.as_array(), [truth.x, truth.y, truth.z, truth.rate_kg_h], atol=1e-9)
    assert penalized_objective(v, problem) == pytest.approx(
        objective_wmse(x.as_array(), recs), abs=1e-12
    )


def test_mcmc_marginals_attached(solved_class_a):
    site, _, recs, _ = solved_class_a
    problem = InversionProblem(records=recs, site=site)
    cfg = MCMCConfig(chains=2, steps=400, burn_in=0.25, temperature=0.05, seed=0)
    sol = invert(problem, GAConfig(population=20, generations=20, seed=0), cfg)
    assert set(sol.marginals) == {"x", "y", "z", "r"}
    n_kept = 2 * (400 - 100)
    for m in sol.marginals.values():
        assert m.counts.sum() == n_kept
    assert sol.acceptance_rate is not None
    assert "mcmc_acceptance" in sol.to_dict()


def test_polish_refines_and_respects_budget():
    obj = lambda x: float(np.sum((x - 3.0) ** 2))
    x0 = np.array([0.0, 0.0])
    out = _polish(obj, x0, np.full(2, -5.0), np.full(2, 5.0), 2000)
    assert np.allclose(out, 3.0, atol=1e-6)
    assert np.array_equal(_polish(obj, x0, np.full(2, -5.0), np.full(2, 5.0), 0), x0)


# --- Monitoring FSM ------------------------------------------------------


def _monitor_cfg(**kw):
    base = dict(
        window_s=1800.0,
        step_s=600.0,
        record_window_s=300.0,
        conc_threshold=5.0,
        background=0.0,
        confirm_steps=2,
        end_steps=2,
        min_records=1,
        min_sensors=1,
        use_cones=False,
        ga=GAConfig(population=8, generations=5, seed=0),
    )
    base.update(kw)
    return MonitoringConfig(**base)


def _batch(k, level, sensors=(("s1", 60.0, 40.0, 2.0),)):
    """One 600 s batch at 10 s cadence, flat concentration `level`."""
    t = k * 600.0 + np.arange(0, 600, 10.0)
    streams = [
        SensorStream(sid, (x, y, z), t=t.copy(), c=np.full(t.size, float(level)))
        for sid, x, y, z in sensors
    ]
    weather = WeatherSeries(
        t=t.copy(),
        w_dir=np.full(t.size, 180.0),
        w_spd=np.full(t.size, 3.0),
        solar=np.full(t.size, 400.0),
    )
    return streams, weather


def _run(state, site, levels, start=0):
    events = []
    for k, level in enumerate(levels, start=start):
        streams, weather = _batch(k, level)
        events.extend(monitor_step(state, streams, weather, site))
    return events


def test_monitor_lifecycle_events_in_order():
    site = square_site()
    state = MonitoringState(config=_monitor_cfg())
    levels = [0, 0, 20, 20, 20, 20, 0, 0, 0, 0, 0, 0]
    events = _run(state, site, levels)
    kinds = [e["type"] for e in events]
    assert kinds.index("suspected") < kinds.index("validated")
    assert kinds.index("validated") < kinds.index("ended")
    assert kinds.index("ended") < kinds.index("final_inversion")
    assert state.status == "none"
    suspected = events[kinds.index("suspected")]
    assert abs(suspected["leak_start"] - 1200.0) <= state.config.record_window_s
    ended = events[kinds.index("ended")]
    assert ended["leak_end"] is not None
    assert ended["leak_start"] < ended["leak_end"]


def test_monitor_detection_latency_within_one_window():
    site = square_site()
    state = MonitoringState(config=_monitor_cfg())
    events = _run(state, site, [0, 0, 20, 20, 20])
    suspected = next(e for e in events if e["type"] == "suspected")
    # Leak begins at t=1200; the alarm may trail by at most one window.
    assert suspected["t"] - 1200.0 <= state.config.window_s


def test_monitor_dismisses_unconfirmed_episode():
    site = square_site()
    # confirm_steps high enough that a short blip never validates.
    state = MonitoringState(config=_monitor_cfg(confirm_steps=10))
    events = _run(state, site, [0, 20, 0, 0, 0, 0, 0])
    kinds = [e["type"] for e in events]
    assert "suspected" in kinds
    assert "dismissed" in kinds
    assert "validated" not in kinds
    assert "ended" not in kinds
    assert state.status == "none"


def test_monitor_no_events_on_quiet_site():
    site = square_site()
    state = MonitoringState(config=_monitor_cfg())
    events = _run(state, site, [0, 0, 0, 0])
    assert events == []
    assert state.status == "none"


def test_monitor_rejects_out_of_order_batch():
    site = square_site()
    state = MonitoringState(config=_monitor_cfg())
    _run(state, site, [0, 0])
    before = copy.deepcopy(state.to_dict())
    streams, weather = _batch(0, 20)  # replays t=0..590
    events = monitor_step(state, streams, weather, site)
    assert [e["type"] for e in events] == ["rejected_batch"]
    assert state.to_dict() == before


def test_monitor_checkpoint_resume_is_equivalent():
    site = square_site()
    levels_head = [0, 0, 20, 20]
    levels_tail = [20, 20, 0, 0, 0, 0, 0, 0]

    full = MonitoringState(config=_monitor_cfg())
    full_events = _run(full, site, levels_head)
    snap = json.loads(json.dumps(full.to_dict()))

    resumed = MonitoringState.from_dict(_monitor_cfg(), snap)
    tail_full = _run(full, site, levels_tail, start=len(levels_head))
    tail_resumed = _run(resumed, site, levels_tail, start=len(levels_head))
    assert tail_full == tail_resumed
    assert full.to_dict() == resumed.to_dict()
