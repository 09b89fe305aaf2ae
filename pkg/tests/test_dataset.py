import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadgcnet.dataset import (Dataset, SamplingBounds, Variant, bounds_normalization, feature_arity,
                               generate_dataset, make_features, normalization_stats, sample_ocp,
                               split_train_val, to_waypoint_frame)

B = SamplingBounds()
STATE_BOXES = [B.x, B.y, B.z, B.vx, B.vy, B.vz, tuple(np.deg2rad(B.phi_deg)), tuple(np.deg2rad(B.theta_deg)),
               tuple(np.deg2rad(B.psi_deg)), B.p, B.q, B.r] + [(3000.0, 12000.0)] * 4


def test_sampled_initial_state_respects_every_bound():
    for seed in range(50):
        spec = sample_ocp(B, 1.0, seed)
        for i, (lo, hi) in enumerate(STATE_BOXES):
            assert lo <= spec.x0[i] <= hi, i
        for m, (lo, hi) in zip(spec.M_ext, (B.mx, B.my, B.mz)):
            assert lo <= m <= hi
        assert np.array_equal(spec.final.p_f, np.zeros(3))
        assert spec.final.psi_f == pytest.approx(np.pi / 4)
        assert spec.final.Omega_f_zero and spec.final.Omega_dot_f_zero
        assert spec.final.constrain_velocity_direction


def test_same_seed_gives_identical_problem():
    a, b = sample_ocp(B, 0.5, 42), sample_ocp(B, 0.5, 42)
    assert a.to_dict() == b.to_dict()
    assert sample_ocp(B, 0.5, 43).to_dict() != a.to_dict()


def test_ten_thousand_draws_cover_each_range():
    draws = np.array([np.concatenate([s.x0[:16], s.M_ext])
                      for s in (sample_ocp(B, 1.0, k) for k in range(10_000))])
    boxes = STATE_BOXES + [B.mx, B.my, B.mz]
    for i, (lo, hi) in enumerate(boxes):
        col = draws[:, i]
        assert col.min() >= lo and col.max() <= hi
        assert (col.max() - col.min()) >= 0.95 * (hi - lo), i


def test_bounds_reject_inverted_or_singular_ranges():
    with pytest.raises(ValueError):
        SamplingBounds(vx=(1.0, 0.0))
    with pytest.raises(ValueError):
        SamplingBounds(theta_deg=(-95.0, 40.0))


@pytest.mark.parametrize("variant,arity,expected", [("BASE", 0, 19), ("OMEGA_MAX", 0, 20),
                                                    ("WP_REL", 1, 20), ("WP_REL", 2, 21), ("WP_REL", 3, 22)])
def test_feature_arity_per_variant(variant, arity, expected):
    assert feature_arity(variant, arity) == expected


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-np.pi, np.pi), st.floats(-5, 5), st.floats(-5, 5))
def test_waypoint_frame_is_a_rigid_motion(x, y, yaw, px, py):
    states = np.zeros((2, 19))
    states[0, 0:2] = (x, y)
    states[0, 8] = yaw
    states[1, 0:2] = (px, py)
    local = to_waypoint_frame(states, np.array([x, y, 0.0]), yaw)
    np.testing.assert_allclose(local[0, 0:3], 0.0, atol=1e-12)
    assert abs(local[0, 8]) < 1e-12
    assert np.hypot(*local[1, 0:2]) == pytest.approx(np.hypot(px - x, py - y), abs=1e-12)


@pytest.fixture(scope="module")
def small_base():
    return generate_dataset(B, 1.0, 5, 199, Variant.BASE, seed=11)


def test_generated_dataset_size_labels_and_provenance(small_base):
    ds = small_base
    assert len(ds) <= 5 * 199
    assert len(ds) == 199 * (5 - ds.provenance["n_failed"])
    assert ds.arity == 19
    assert ds.labels.min() >= 0.0 and ds.labels.max() <= 1.0
    assert ds.provenance["seed"] == 11 and ds.provenance["epsilon"] == 1.0
    # records are sorted by trajectory, then node
    assert np.all(np.diff(ds.traj_id) >= 0)


def test_regeneration_is_bit_identical(small_base, tmp_path):
    again = generate_dataset(B, 1.0, 5, 199, Variant.BASE, seed=11)
    small_base.save(tmp_path / "a.bin")
    again.save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    back = Dataset.load(tmp_path / "a.bin")
    assert np.array_equal(back.features, small_base.features)


def test_split_is_eighty_twenty_disjoint_and_seeded():
    ds = Dataset(np.zeros((30, 19)) + np.arange(30)[:, None], np.full((30, 4), 0.5),
                 np.repeat(np.arange(10), 3), Variant.BASE)
    tr, va = split_train_val(ds, 0.8, seed=3)
    assert len(tr.trajectory_ids()) == 8 and len(va.trajectory_ids()) == 2
    assert not set(tr.trajectory_ids()) & set(va.trajectory_ids())
    tr2, va2 = split_train_val(ds, 0.8, seed=3)
    assert np.array_equal(tr.traj_id, tr2.traj_id) and np.array_equal(va.traj_id, va2.traj_id)


def test_normalized_training_features_have_unit_scale(small_base):
    tr, va = split_train_val(small_base, 0.8, seed=0)
    z = (tr.features - tr.mean) / tr.std
    assert np.all(np.abs(z.mean(axis=0)) <= 0.1)
    sd = z.std(axis=0)
    assert np.all((sd >= 0.5) & (sd <= 2.0))


def test_constant_feature_gets_unit_std():
    ds = Dataset(np.ones((4, 19)), np.zeros((4, 4)), np.arange(4), Variant.BASE)
    mean, std = normalization_stats(ds)
    assert np.array_equal(std, np.ones(19))


def test_bounds_normalization_matches_uniform_moments():
    mean, std = bounds_normalization(B)
    assert mean[3] == pytest.approx(0.5 * (B.vx[0] + B.vx[1]))
    assert std[3] == pytest.approx((B.vx[1] - B.vx[0]) / np.sqrt(12))
    assert mean[12] == pytest.approx(7500.0)


def test_omega_max_feature_stays_in_sampled_range():
    bounds = SamplingBounds(omega_max_range=(10000.0, 11000.0))
    ds = generate_dataset(bounds, 1.0, 2, None, Variant.OMEGA_MAX, seed=5)
    assert ds.arity == 20
    assert ds.features[:, 19].min() >= 10000.0 and ds.features[:, 19].max() <= 11000.0
    # the sampled ceiling also bounds the initial rotor speeds
    for k in np.unique(ds.traj_id):
        rows = ds.features[ds.traj_id == k]
        assert np.all(rows[0, 12:16] <= rows[0, 19])


def test_make_features_appends_ceiling_column():
    states = np.zeros((3, 19))
    f = make_features(states, Variant.OMEGA_MAX, omega_max=10800.0)
    assert f.shape == (3, 20) and np.all(f[:, 19] == 10800.0)


def test_relative_waypoint_feature_takes_two_values():
    ds = generate_dataset(B, 1.0, 4, None, Variant.WP_REL, seed=2, wp_arity=1)
    assert ds.arity == 20
    assert set(np.round(np.unique(ds.features[:, 19]), 12)) == {3.0, 4.0}
