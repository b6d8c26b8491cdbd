"""Dictionary-servo tests: sampling, clustering, lasso coding, goal modes."""

import itertools

import numpy as np
import pytest

from domservo.errors import (DimensionMismatch, EmptyGoalSet, InvalidParam,
                             KMeansDegenerate, LayoutMismatch, TooShort)
from domservo.features import FeatureVector
from domservo.servo_dict import (GoalSet, TrajectoryLog,
                                 VisualFeedbackDictionary, build_dictionary,
                                 load_dictionary, predict_action,
                                 sample_velocity_pairs, save_dictionary,
                                 servo_step, sparse_code)


def raw_extractor(obs):
    return FeatureVector(np.asarray(obs, dtype=float), [("s", 0, len(obs))])


# -- sampling --------------------------------------------------------------------

def test_sampling_constant_trajectory_gives_zero_pairs():
    obs = [np.array([1.0, 2.0])] * 6
    traj = TrajectoryLog(observations=obs, configs=np.ones((6, 3)), frame_rate=10)
    ds, dr = sample_velocity_pairs(traj, 12, raw_extractor,
                                   np.random.default_rng(0))
    assert np.all(ds == 0.0) and np.all(dr == 0.0)
    assert ds.shape == (12, 2) and dr.shape == (12, 3)


def test_sampling_linear_motion_recovers_velocity():
    v = np.array([0.3, -0.1, 0.7])
    fr = 25.0
    t = np.arange(9) / fr
    configs = t[:, None] * v
    obs = [np.array([ti]) for ti in t]
    traj = TrajectoryLog(observations=obs, configs=configs, frame_rate=fr)
    ds, dr = sample_velocity_pairs(traj, 20, raw_extractor,
                                   np.random.default_rng(1))
    assert np.max(np.abs(dr - v)) < 1e-12
    assert np.max(np.abs(ds - 1.0)) < 1e-12  # d(time)/dt


def test_sampling_matches_formula_on_drawn_indices():
    rng = np.random.default_rng(7)
    obs = [np.array([0.0, 1.0]), np.array([2.0, -1.0]), np.array([0.5, 0.5])]
    configs = np.array([[0.0], [1.0], [3.5]])
    fr = 30.0
    traj = TrajectoryLog(observations=obs, configs=configs, frame_rate=fr)
    ds, dr, idx = sample_velocity_pairs(traj, 10, raw_extractor, rng,
                                        return_indices=True)
    assert np.all(idx[:, 0] != idx[:, 1])
    for p, (a, b) in enumerate(idx):
        dt = (a - b) / fr
        assert np.allclose(ds[p], (obs[a] - obs[b]) / dt)
        assert np.allclose(dr[p], (configs[a] - configs[b]) / dt)


def test_sampling_too_short_and_bad_count():
    traj = TrajectoryLog(observations=[np.zeros(1)], configs=np.zeros((1, 1)))
    with pytest.raises(TooShort):
        sample_velocity_pairs(traj, 3, raw_extractor, np.random.default_rng(0))
    good = TrajectoryLog(observations=[np.zeros(1)] * 3, configs=np.zeros((3, 1)))
    with pytest.raises(InvalidParam):
        sample_velocity_pairs(good, 0, raw_extractor, np.random.default_rng(0))


# -- dictionary build --------------------------------------------------------------

def test_build_with_k_equal_n_is_a_permutation():
    rng = np.random.default_rng(2)
    ds = rng.normal(size=(6, 4))
    dr = rng.normal(size=(6, 2))
    dic = build_dictionary(ds, dr, 6, np.random.default_rng(3))
    assert len(dic) == 6
    order_got = np.lexsort(dic.atoms_s.T)
    order_want = np.lexsort(ds.T)
    assert np.array_equal(dic.atoms_s[order_got], ds[order_want])
    # each atom keeps its paired action row
    for s_row, r_row in zip(dic.atoms_s, dic.atoms_r):
        j = int(np.flatnonzero((ds == s_row).all(axis=1))[0])
        assert np.array_equal(r_row, dr[j])


def test_build_two_separated_clusters():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(5, 3)) * 0.01 + np.array([10.0, 0.0, 0.0])
    b = rng.normal(size=(5, 3)) * 0.01 - np.array([10.0, 0.0, 0.0])
    ds = np.vstack([a, b])
    dr = np.arange(10, dtype=float)[:, None]
    dic = build_dictionary(ds, dr, 2, np.random.default_rng(5))
    sides = sorted(np.sign(dic.atoms_s[:, 0]).tolist())
    assert sides == [-1.0, 1.0]


def test_build_degenerate_samples():
    ds = np.zeros((8, 3))
    dr = np.zeros((8, 2))
    with pytest.raises(KMeansDegenerate):
        build_dictionary(ds, dr, 2, np.random.default_rng(0))


def test_build_atoms_are_raw_samples():
    rng = np.random.default_rng(6)
    ds = rng.normal(size=(30, 4))
    dr = rng.normal(size=(30, 3))
    dic = build_dictionary(ds, dr, 5, np.random.default_rng(7))
    assert len(dic) == 5
    for s_row in dic.atoms_s:
        assert np.any((ds == s_row).all(axis=1))


def test_build_is_deterministic_for_fixed_seed():
    rng = np.random.default_rng(8)
    ds = rng.normal(size=(40, 4))
    dr = rng.normal(size=(40, 2))
    d1 = build_dictionary(ds, dr, 6, np.random.default_rng(9))
    d2 = build_dictionary(ds, dr, 6, np.random.default_rng(9))
    assert np.array_equal(d1.atoms_s, d2.atoms_s)
    assert np.array_equal(d1.atoms_r, d2.atoms_r)


# -- sparse coding ------------------------------------------------------------------

def lasso_objective(dic, q, beta, alpha):
    r = q - beta @ dic.atoms_s
    return float(r @ r) + alpha * float(np.sum(np.abs(beta)))


def test_lasso_orthonormal_soft_threshold():
    dic = VisualFeedbackDictionary(np.eye(2), np.zeros((2, 1)))
    for alpha in (0.1, 0.5, 1.0, 1.9, 2.0, 3.0):
        beta = sparse_code(dic, np.array([1.0, 0.0]), alpha)
        want = max(0.0, 1.0 - alpha / 2.0)
        assert abs(beta[0] - want) < 1e-9
        assert abs(beta[1]) < 1e-9


def test_lasso_zero_query():
    rng = np.random.default_rng(10)
    dic = VisualFeedbackDictionary(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
    assert np.all(sparse_code(dic, np.zeros(3), 0.3) == 0.0)


def exhaustive_support_optimum(dic, q, alpha, max_support):
    """Best lasso objective over every support of size <= max_support, by
    solving the sign-fixed stationarity system per sign pattern."""
    n = len(dic)
    a_mat = dic.atoms_s
    best = float(q @ q)  # empty support
    for size in range(1, max_support + 1):
        for sup in itertools.combinations(range(n), size):
            asup = a_mat[list(sup)]
            g = asup @ asup.T
            b = asup @ q
            for signs in itertools.product((-1.0, 1.0), repeat=size):
                sv = np.array(signs)
                try:
                    beta_s = np.linalg.solve(2.0 * g, 2.0 * b - alpha * sv)
                except np.linalg.LinAlgError:
                    continue
                if np.any(np.sign(beta_s) * sv < 0):
                    continue  # sign pattern inconsistent
                beta = np.zeros(n)
                beta[list(sup)] = beta_s
                best = min(best, lasso_objective(dic, q, beta, alpha))
    return best


def test_lasso_beats_support_enumeration_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        dic = VisualFeedbackDictionary(rng.normal(size=(5, 6)),
                                       rng.normal(size=(5, 2)))
        q = rng.normal(size=6)
        beta = sparse_code(dic, q, 0.1)
        got = lasso_objective(dic, q, beta, 0.1)
        want = exhaustive_support_optimum(dic, q, 0.1, 3)
        assert got <= want + 1e-6


def test_lasso_subgradient_conditions():
    rng = np.random.default_rng(12)
    for _ in range(50):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        dic = VisualFeedbackDictionary(rng.normal(size=(n, d)),
                                       rng.normal(size=(n, 1)))
        alpha = float(rng.uniform(0.01, 1.0))
        q = rng.normal(size=d)
        beta = sparse_code(dic, q, alpha)
        resid = q - beta @ dic.atoms_s
        corr = 2.0 * (dic.atoms_s @ resid)
        assert np.all(np.abs(corr) <= alpha + 1e-6)
        for i in np.flatnonzero(np.abs(beta) > 1e-12):
            assert abs(corr[i] - alpha * np.sign(beta[i])) < 1e-6


def test_lasso_alpha_zero_least_squares():
    rng = np.random.default_rng(13)
    a_mat = rng.normal(size=(3, 5))
    dic = VisualFeedbackDictionary(a_mat, rng.normal(size=(3, 2)))
    beta_star = rng.normal(size=3)
    q = beta_star @ a_mat
    beta = sparse_code(dic, q, 0.0)
    assert np.max(np.abs(beta - beta_star)) < 1e-5


def test_sparse_code_dimension_mismatch():
    dic = VisualFeedbackDictionary(np.eye(3), np.zeros((3, 1)))
    with pytest.raises(DimensionMismatch):
        sparse_code(dic, np.zeros(4), 0.1)


# -- action prediction ---------------------------------------------------------------

def test_predict_one_hot_returns_atom_action():
    rng = np.random.default_rng(14)
    dic = VisualFeedbackDictionary(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
    beta = np.zeros(4)
    beta[2] = 1.0
    assert np.array_equal(predict_action(dic, beta), dic.atoms_r[2])
    assert np.all(predict_action(dic, np.zeros(4)) == 0.0)


def test_predict_linearity_midpoint():
    dic = VisualFeedbackDictionary(np.eye(2), np.array([[2.0, 0.0], [0.0, 4.0]]))
    assert np.allclose(predict_action(dic, np.array([0.5, 0.5])), [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        predict_action(dic, np.zeros(3))


def test_linear_plant_recovery():
    rng = np.random.default_rng(15)
    j_map = rng.normal(size=(4, 3))            # dr = J ds
    ds = rng.normal(size=(8, 4))
    dr = ds @ j_map
    dic = VisualFeedbackDictionary(ds, dr, alpha=1e-6)
    for _ in range(10):
        q = rng.normal(size=8) @ ds            # in the sample span
        pred = predict_action(dic, sparse_code(dic, q))
        want = q @ j_map
        assert np.linalg.norm(pred - want) <= 1e-3 * max(np.linalg.norm(want), 1e-12)


# -- servo modes ---------------------------------------------------------------------

def feat(vals):
    vals = np.asarray(vals, dtype=float)
    return FeatureVector(vals, [("s", 0, len(vals))])


def small_dict(rng, d=3):
    return VisualFeedbackDictionary(rng.normal(size=(5, d)),
                                    rng.normal(size=(5, 2)), alpha=0.01)


def test_servo_single_at_goal_is_zero_action():
    dic = small_dict(np.random.default_rng(16))
    s = feat([0.2, -0.1, 0.5])
    goals = GoalSet(goals=[feat([0.2, -0.1, 0.5])], mode="single")
    assert np.all(servo_step(dic, s, goals) == 0.0)


def test_servo_hidden_selects_min_norm_goal():
    dic = small_dict(np.random.default_rng(17))
    s = feat([0.3, 0.3, 0.3])
    far = feat([5.0, -4.0, 2.0])
    goals = GoalSet(goals=[feat([0.3, 0.3, 0.3]), far], mode="hidden")
    assert np.all(servo_step(dic, s, goals) == 0.0)


def test_servo_sequential_consumes_in_cost_order():
    dic = small_dict(np.random.default_rng(18))
    g1, g2 = feat([1.0, 0.0, 0.0]), feat([0.0, 1.0, 0.0])
    goals = GoalSet(goals=[g1, g2], mode="sequential", costs=[0.0, 10.0])
    servo_step(dic, feat([1.0, 0.0, 0.0]), goals)   # sits on g1
    assert goals.consumed.tolist() == [True, False]
    servo_step(dic, feat([0.0, 1.0, 0.0]), goals)   # sits on g2
    assert goals.consumed.tolist() == [True, True]
    with pytest.raises(EmptyGoalSet):
        servo_step(dic, feat([0.0, 0.0, 0.0]), goals)


def test_servo_sequential_keeps_distant_goals():
    dic = small_dict(np.random.default_rng(19))
    g1 = feat([1.0, 0.0, 0.0])
    goals = GoalSet(goals=[g1], mode="sequential", costs=[0.0])
    servo_step(dic, feat([0.0, 0.0, 0.0]), goals)   # far from g1
    assert goals.consumed.tolist() == [False]


def test_servo_eta_scales_query_linearly():
    # with alpha = 0 the coder is linear, so the action scales with eta
    rng = np.random.default_rng(20)
    dic = VisualFeedbackDictionary(rng.normal(size=(3, 3)),
                                   rng.normal(size=(3, 2)), alpha=0.0)
    s = feat([0.5, 0.2, -0.3])
    goals = GoalSet(goals=[feat([0.0, 0.0, 0.0])], mode="single")
    a1 = servo_step(dic, s, goals, eta=1.0)
    a2 = servo_step(dic, s, goals, eta=2.0)
    assert np.max(np.abs(a2 - 2.0 * a1)) < 1e-9


def test_servo_layout_mismatch_and_empty_goals():
    dic = small_dict(np.random.default_rng(21))
    s = feat([0.0, 0.0, 0.0])
    bad = FeatureVector(np.zeros(3), [("other", 0, 3)])
    with pytest.raises(LayoutMismatch):
        servo_step(dic, s, GoalSet(goals=[bad], mode="single"))
    with pytest.raises(EmptyGoalSet):
        GoalSet(goals=[], mode="single")


# -- serialization -------------------------------------------------------------------

def test_dictionary_csv_round_trip(tmp_path):
    rng = np.random.default_rng(22)
    layout = [("centroid", 0, 3), ("distance", 3, 1)]
    dic = VisualFeedbackDictionary(rng.normal(size=(4, 4)),
                                   rng.normal(size=(4, 2)), alpha=0.07,
                                   layout=layout)
    p = tmp_path / "dict.csv"
    save_dictionary(dic, p)
    back = load_dictionary(p)
    assert np.array_equal(back.atoms_s, dic.atoms_s)
    assert np.array_equal(back.atoms_r, dic.atoms_r)
    assert back.alpha == dic.alpha
    assert back.layout == layout


def test_dictionary_csv_round_trip_without_layout(tmp_path):
    rng = np.random.default_rng(23)
    dic = VisualFeedbackDictionary(rng.normal(size=(3, 2)),
                                   rng.normal(size=(3, 1)))
    p = tmp_path / "dict.csv"
    save_dictionary(dic, p)
    back = load_dictionary(p)
    assert np.array_equal(back.atoms_s, dic.atoms_s)
    assert np.array_equal(back.atoms_r, dic.atoms_r)
