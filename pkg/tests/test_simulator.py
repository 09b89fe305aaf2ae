import csv

import numpy as np
import pytest
from scipy.integrate import RK45

from quadgcnet import dynamics as dyn
from quadgcnet.gcnet import init_policy
from quadgcnet.simulator import (LOG_COLUMNS, ConstantController, FlightLog, ReplayController, SimConfig, Track,
                                 battery_drift, energy_cost_of_flight, evaluate_tracking,
                                 saturation_time_fraction, simulate_closed_loop, tracking_error,
                                 waypoint_switching)

P = dyn.default_params()


def constant_log(u, duration=2.0, n=201):
    t = np.linspace(0.0, duration, n)
    z = np.zeros((n, 4))
    return FlightLog(t, np.zeros((n, 19)), np.full((n, 4), u), z, np.zeros(n, int), np.zeros(n), np.zeros(n))


# -- tracks and switching --------------------------------------------------------

def test_single_rule_switches_below_threshold():
    track = Track.rectangle(rule="single")
    wp = track.positions[0]
    near = np.zeros(19)
    near[0:3] = wp + np.array([0.0, 0.0, 1.19])
    far = np.zeros(19)
    far[0:3] = wp + np.array([0.0, 0.0, 1.21])
    assert waypoint_switching(near, track, 0) == (1, True)
    assert waypoint_switching(far, track, 0) == (0, False)


def test_consecutive_rule_cycles_round_the_rectangle():
    track = Track.rectangle(4.0, 3.0, rule="consecutive")
    active, visited = 0, [0]
    for _ in range(4):
        x = np.zeros(19)
        x[0:3] = track.positions[active]
        active, switched = waypoint_switching(x, track, active)
        assert switched
        visited.append(active)
    assert visited == [0, 1, 2, 3, 0]


def test_consecutive_rule_switches_on_passing_the_gate_plane():
    track = Track.rectangle(4.0, 3.0, rule="consecutive")
    h = track.headings[0]
    x = np.zeros(19)
    beside = 0.8 * np.array([-np.sin(h), np.cos(h), 0.0])
    ahead = np.array([np.cos(h), np.sin(h), 0.0])
    x[0:3] = track.positions[0] + beside - 0.02 * ahead  # outside the sphere, just short of the plane
    assert waypoint_switching(x, track, 0) == (0, False)
    x[0:3] += 0.04 * ahead
    assert waypoint_switching(x, track, 0) == (1, True)


def test_open_track_ends_after_last_waypoint():
    track = Track(np.array([[0.0, 0, 0], [3.0, 0, 0]]), [0.0, 0.0], rule="single", cyclic=False)
    x = np.zeros(19)
    x[0:3] = (3.0, 0.0, 0.0)
    assert waypoint_switching(x, track, 1) == (None, True)


def test_randomized_track_moves_waypoints_within_unit_square():
    base = Track.rectangle()
    for seed in range(20):
        moved = Track.randomized(seed, base)
        offset = moved.positions - base.positions
        assert np.all(np.abs(offset[:, :2]) <= 0.5) and np.all(offset[:, 2] == 0)


def test_track_validation():
    with pytest.raises(ValueError):
        Track(np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        Track(np.zeros((1, 3)), [0.0], rule="sometimes")


# -- actuator ceiling and energy ---------------------------------------------------

def test_battery_drift_examples():
    cfg = SimConfig(ceiling=12000.0, drift_rate=1.0)
    assert battery_drift(cfg, 0.0, P) - battery_drift(cfg, 360.0, P) == pytest.approx(360.0)
    assert battery_drift(cfg, 1e5, P) == P.omega_min + 500.0
    flat = SimConfig(ceiling=11000.0, drift_rate=0.0)
    assert battery_drift(flat, 0.0, P) == battery_drift(flat, 1000.0, P) == 11000.0


def test_energy_cost_examples():
    assert energy_cost_of_flight(constant_log(1.0)) == pytest.approx(8.0, rel=1e-12)
    assert energy_cost_of_flight(constant_log(0.0)) == 0.0
    assert saturation_time_fraction(constant_log(1.0)) == 1.0
    assert saturation_time_fraction(constant_log(0.5)) == 0.0


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(rtol=0.0)
    with pytest.raises(ValueError):
        SimConfig(drift_rate=-1.0)


# -- integration -----------------------------------------------------------------

def test_hover_stub_holds_position():
    x0 = dyn.hover_state(P, position=(1.0, -2.0, -3.0))
    log = simulate_closed_loop(x0, ConstantController(P.hover_throttle, P), Track.single_target(),
                               SimConfig(max_time=1.0), P)
    assert log.status == "ok"
    assert log.t[-1] == pytest.approx(1.0)
    assert np.max(np.linalg.norm(log.states[:, 0:3] - x0[0:3], axis=1)) < 1e-6
    assert np.all(np.diff(log.t) > 0)


def test_dormand_prince_order_on_rotor_lag():
    # fixed steps (loose tolerances so no step is rejected) on w' = (c - w)/tau
    c, tau, w0, t_end = 12000.0, P.tau, 3000.0, 0.06

    def error(h):
        solver = RK45(lambda t, w: (c - w) / tau, 0.0, [w0], t_end, first_step=h, max_step=h,
                      rtol=1e3, atol=1e6)
        while solver.status == "running":
            solver.step()
        return abs(solver.y[0] - (c + (w0 - c) * np.exp(-t_end / tau)))

    errs = [error(t_end / n) for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 5.0), orders


@pytest.fixture(scope="module")
def smooth_reference(sampled_pair):
    return sampled_pair[0]


def test_open_loop_replay_reproduces_reference(smooth_reference):
    traj = smooth_reference
    log = simulate_closed_loop(traj.spec.x0, ReplayController(traj), Track.single_target(traj.spec.final.p_f),
                               SimConfig(max_time=traj.T), traj.spec.params)
    assert tracking_error(log, traj) < 1e-3


def test_halving_tolerances_barely_moves_final_position(smooth_reference):
    traj = smooth_reference
    final = []
    for rtol, atol in ((1e-6, 1e-8), (5e-7, 5e-9)):
        log = simulate_closed_loop(traj.spec.x0, ReplayController(traj), Track.single_target(),
                                   SimConfig(max_time=traj.T, rtol=rtol, atol=atol), traj.spec.params)
        final.append(log.states[-1, 0:3])
    # the step controller weighs each component by atol + rtol |x_i|; the rotor
    # speeds (~1e4 RPM) dominate that norm and their errors feed the position
    scale = 1e-6 * np.max(np.abs(traj.states)) + 1e-8
    assert np.linalg.norm(final[0] - final[1]) < 10 * scale


def test_divergence_is_reported_not_raised():
    x0 = dyn.hover_state(P)
    log = simulate_closed_loop(x0, ConstantController([1.0, 0.0, 0.0, 1.0], P), Track.single_target(),
                               SimConfig(max_time=5.0), P)
    assert log.status == "diverged" and log.diverged
    assert "rate" in log.message
    assert log.events[-1]["kind"] == "diverged"


def test_untrained_network_flight_completes():
    track = Track.single_target()
    log = simulate_closed_loop(track.start_state(P), init_policy("BASE", seed=0), track,
                               SimConfig(max_time=10.0), P)
    assert log.status in ("ok", "diverged", "singular")
    assert len(log.t) >= 2


def test_tracker_in_loop_corrects_overestimate_quickly():
    ceiling = 11100.0
    cfg = SimConfig(max_time=0.5, ceiling=ceiling, use_tracker=True, tracker_initial=ceiling + 700.0)
    log = simulate_closed_loop(dyn.hover_state(P), ConstantController(1.0, P, adaptive=True),
                               Track.single_target(), cfg, P)
    assert log.estimate[0] == ceiling + 700.0
    # within integrator tolerance of the clamp (rtol 1e-6 of ~1e4 RPM)
    hit = np.flatnonzero(np.abs(log.estimate - ceiling) <= 1.0)
    assert hit.size and log.t[hit[0]] <= 0.25
    assert [e["kind"] for e in log.events] == ["tracker_trigger"]


def test_flight_is_reproducible():
    track = Track.rectangle(rule="single")
    net = init_policy("BASE", seed=3)
    runs = [simulate_closed_loop(track.start_state(P), net, track, SimConfig(max_time=1.0), P)
            for _ in range(2)]
    assert runs[0].events == runs[1].events
    assert np.array_equal(runs[0].states, runs[1].states)


def test_flight_log_csv(tmp_path):
    log = simulate_closed_loop(dyn.hover_state(P), ConstantController(P.hover_throttle, P),
                               Track.single_target(), SimConfig(max_time=0.02), P)
    log.to_csv(tmp_path / "f.csv")
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert rows[0][:20] == ["t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r",
                            "w1", "w2", "w3", "w4", "mx", "my", "mz"]
    assert len(rows) == len(log.t) + 1


def test_evaluate_tracking_summary(smooth_reference):
    net = init_policy("BASE", seed=0)
    res = evaluate_tracking(net, [smooth_reference], config=SimConfig())
    assert len(res["errors"]) == 1
    assert res["n_diverged"] + int(np.isfinite(res["errors"][0])) == 1


@pytest.mark.xfail(strict=False, reason="one demonstration gives no data off its own path; small closed-loop "
                   "deviations grow (final error 0.2-3 m across init seeds at training loss ~2e-8); "
                   "see notes/decisions.md")
def test_net_fit_to_one_trajectory_reaches_its_waypoint(smooth_reference):
    from quadgcnet.dataset import Dataset, SamplingBounds, bounds_normalization, trajectory_features
    from quadgcnet.gcnet import TrainConfig, mse, train

    traj = smooth_reference
    X, Y = trajectory_features(traj, "BASE")
    mean, std = bounds_normalization(SamplingBounds())
    ds = Dataset(X, Y, np.zeros(len(X)), "BASE", mean=mean, std=std)
    cfg = TrainConfig(epochs=3000, batch_size=len(X), seed=0, plateau_threshold=0.0)
    net, _ = train(init_policy("BASE", seed=0), ds, None, cfg)
    assert mse(net, X, Y) < 1e-7
    log = simulate_closed_loop(traj.spec.x0, net, Track.single_target(traj.spec.final.p_f, np.pi / 4),
                               SimConfig(max_time=traj.T), traj.spec.params)
    assert log.status == "ok"
    assert np.linalg.norm(log.states[-1, 0:3] - traj.spec.final.p_f) < 0.3
