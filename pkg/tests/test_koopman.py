"""Analytical operator fit: accumulators, pseudoinverse, cost, rollout."""

import numpy as np
import pytest

from koopmanix import (
    CompositeState,
    DemonstrationSet,
    KoopmanModel,
    LiftingSpec,
    StateLayout,
    Trajectory,
    accumulate,
    consecutive_pairs,
    cost,
    fit,
    lift,
    predict_step,
    pseudo_inverse,
    robot_slice,
    rollout,
)
from koopmanix.koopman import default_pinv_tolerance, solve_koopman

LAYOUT_1D = StateLayout(n=1, m=0, a=1)
IDENT_1D = LiftingSpec("identity", LAYOUT_1D)


def _traj_1d(values):
    return Trajectory(tuple(CompositeState([float(v)], []) for v in values))


def _demos_1d(*value_rows):
    return DemonstrationSet(LAYOUT_1D, tuple(_traj_1d(row) for row in value_rows))


def _demos_nd(layout, rows_list):
    trajs = []
    for rows in rows_list:
        states = tuple(CompositeState(r[: layout.n], r[layout.n :]) for r in rows)
        trajs.append(Trajectory(states))
    return DemonstrationSet(layout, tuple(trajs))


def _weighted_qr_oracle(demos, spec):
    """Independent stacked least squares: rows weighted per trajectory by
    sqrt(1/(N(T-1))), solved via QR on the normal system X K^T = Y."""
    N = demos.n_demos
    X, Y = [], []
    for traj in demos.trajectories:
        w = np.sqrt(1.0 / (N * (traj.horizon - 1)))
        for t in range(traj.horizon - 1):
            X.append(w * lift(spec, traj.states[t]).values)
            Y.append(w * lift(spec, traj.states[t + 1]).values)
    X = np.stack(X)
    Y = np.stack(Y)
    Q, R = np.linalg.qr(X)
    return np.linalg.solve(R, Q.T @ Y).T


# -------------------------------------------------------------- accumulators

def test_accumulate_hand_example():
    acc = accumulate(_demos_1d([1, 2, 4]), IDENT_1D)
    assert acc.pair_count == 2
    assert acc.A[0, 0] == pytest.approx(5.0)
    assert acc.G[0, 0] == pytest.approx(2.5)


def test_accumulate_constant_trajectory():
    acc = accumulate(_demos_1d([3, 3, 3]), IDENT_1D)
    assert acc.A[0, 0] == pytest.approx(9.0)
    assert acc.G[0, 0] == pytest.approx(9.0)


def test_duplicate_trajectory_leaves_accumulators_unchanged():
    one = accumulate(_demos_1d([1, 2, 4]), IDENT_1D)
    two = accumulate(_demos_1d([1, 2, 4], [1, 2, 4]), IDENT_1D)
    np.testing.assert_allclose(two.A, one.A, rtol=1e-15)
    np.testing.assert_allclose(two.G, one.G, rtol=1e-15)
    assert two.pair_count == 2 * one.pair_count


def test_accumulate_weights_mixed_horizons():
    # weight of each pair is 1/(N(T-1)): hand-check with two unequal horizons
    demos = _demos_1d([1, 2], [1, 1, 1])
    acc = accumulate(demos, IDENT_1D)
    # traj 0: pair (1,2) weight 1/2; traj 1: pairs (1,1),(1,1) weight 1/4
    assert acc.G[0, 0] == pytest.approx(1 / 2 + 2 / 4)
    assert acc.A[0, 0] == pytest.approx(2 / 2 + 2 / 4)


def test_g_symmetry():
    rng = np.random.default_rng(0)
    layout = StateLayout(n=3, m=2, a=1)
    spec = LiftingSpec("kodex-polynomial", layout)
    rows = [[rng.standard_normal(5) for _ in range(12)] for _ in range(4)]
    acc = accumulate(_demos_nd(layout, rows), spec)
    asym = np.max(np.abs(acc.G - acc.G.T))
    assert asym < 1e-12 * np.max(np.abs(acc.G))


def test_accumulate_layout_mismatch():
    spec = LiftingSpec("identity", StateLayout(n=2, m=0, a=1))
    with pytest.raises(ValueError):
        accumulate(_demos_1d([1, 2]), spec)


def test_parallel_accumulation_matches_sequential():
    rng = np.random.default_rng(1)
    layout = StateLayout(n=4, m=0, a=1)
    spec = LiftingSpec("kodex-polynomial", layout)
    rows = [[rng.standard_normal(4) for _ in range(9)] for _ in range(8)]
    demos = _demos_nd(layout, rows)
    seq = accumulate(demos, spec)
    par = accumulate(demos, spec, parallel=True)
    assert np.linalg.norm(par.A - seq.A) < 1e-10 * max(np.linalg.norm(seq.A), 1)
    assert np.linalg.norm(par.G - seq.G) < 1e-10 * max(np.linalg.norm(seq.G), 1)
    assert par.pair_count == seq.pair_count


# ------------------------------------------------------------- pseudoinverse

def test_pinv_identity():
    pinv, rank = pseudo_inverse(np.eye(3), 1e-12)
    np.testing.assert_allclose(pinv, np.eye(3))
    assert rank == 3


def test_pinv_truncates_zero_singular_values():
    pinv, rank = pseudo_inverse(np.diag([2.0, 0.0]), 1e-12)
    np.testing.assert_allclose(pinv, np.diag([0.5, 0.0]))
    assert rank == 1


def test_pinv_penrose_conditions():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((5, 5))
    G = G @ G.T  # SPD, full rank almost surely
    pinv, rank = pseudo_inverse(G, default_pinv_tolerance(5))
    assert rank == 5
    np.testing.assert_allclose(pinv @ G @ pinv, pinv, atol=1e-10)
    np.testing.assert_allclose(G @ pinv @ G, G, atol=1e-10)


def test_pinv_relative_threshold():
    # second singular value sits below rel_tolerance * sigma_max: dropped
    G = np.diag([1.0, 1e-9])
    _, rank_tight = pseudo_inverse(G, 1e-6)
    _, rank_loose = pseudo_inverse(G, 1e-12)
    assert rank_tight == 1
    assert rank_loose == 2


# ----------------------------------------------------------------------- fit

def test_fit_doubling_sequence():
    model = fit(_demos_1d([1, 2, 4]), IDENT_1D)
    assert model.K[0, 0] == pytest.approx(2.0)
    assert model.fit_meta.n_pairs == 2
    assert model.fit_meta.wall_time_s >= 0.0


def test_fit_constant_gives_identity():
    model = fit(_demos_1d([3, 3, 3]), IDENT_1D)
    assert model.K[0, 0] == pytest.approx(1.0)


def test_fit_recovers_rotation():
    theta = 0.1
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    rng = np.random.default_rng(3)
    rows_list = []
    for _ in range(3):
        x = rng.standard_normal(2)
        rows = [x.copy()]
        for _ in range(10):
            x = R @ x
            rows.append(x.copy())
        rows_list.append(rows)
    model = fit(_demos_nd(layout, rows_list), spec)
    assert np.linalg.norm(model.K - R) < 1e-10


def test_fit_exact_recovery_general_linear():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((4, 4)) * 0.4
    layout = StateLayout(n=4, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    rows_list = []
    for _ in range(6):
        x = rng.standard_normal(4)
        rows = [x.copy()]
        for _ in range(8):
            x = M @ x
            rows.append(x.copy())
        rows_list.append(rows)
    model = fit(_demos_nd(layout, rows_list), spec)
    assert np.linalg.norm(model.K - M) < 1e-8


def test_fit_matches_qr_oracle_on_nonlinear_data():
    # different horizons + polynomial lifting: full-rank G, rank-revealing case
    rng = np.random.default_rng(5)
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("kodex-polynomial", layout)
    rows_list = []
    for T in (6, 9, 14, 11):
        x = rng.uniform(-1, 1, 2)
        rows = [x.copy()]
        for _ in range(T - 1):
            x = np.array([0.9 * x[0] + 0.1 * x[1] ** 2, 0.8 * x[1] + 0.05 * x[0] * x[1]])
            rows.append(x.copy())
        rows_list.append(rows)
    demos = _demos_nd(layout, rows_list)
    model = fit(demos, spec)
    oracle = _weighted_qr_oracle(demos, spec)
    assert np.linalg.norm(model.K - oracle) < 1e-8


def test_fit_optimality_against_perturbations():
    rng = np.random.default_rng(6)
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("kodex-polynomial", layout)
    rows_list = []
    for _ in range(4):
        x = rng.uniform(-1, 1, 2)
        rows = [x.copy()]
        for _ in range(7):
            x = np.array([0.9 * x[0] - 0.2 * x[1], 0.7 * x[1] + 0.1 * x[0] ** 2])
            rows.append(x.copy())
        rows_list.append(rows)
    demos = _demos_nd(layout, rows_list)
    model = fit(demos, spec)
    J_star = cost(model, demos)
    p = model.K.shape[0]
    for _ in range(200):
        delta = rng.standard_normal((p, p))
        delta /= np.linalg.norm(delta)
        perturbed = KoopmanModel(model.K + 1e-3 * delta, spec, layout)
        assert J_star <= cost(perturbed, demos)


def test_weight_scale_invariance():
    # scaling A and G by one positive factor cannot move K = A G^+
    demos = _demos_1d([1, 2, 4], [2, 3, 5, 8])
    spec = IDENT_1D
    acc = accumulate(demos, spec)
    K1, _ = solve_koopman(acc.A, acc.G)
    K2, _ = solve_koopman(7.3 * acc.A, 7.3 * acc.G)
    assert np.linalg.norm(K1 - K2) < 1e-12


def test_fit_meta_counts_and_rank():
    demos = _demos_1d([1, 2, 4], [1, 3, 9, 27])
    model = fit(demos, IDENT_1D)
    assert model.fit_meta.n_demos == 2
    assert model.fit_meta.n_pairs == 5
    assert model.fit_meta.rank == 1


# ---------------------------------------------------------------------- cost

def test_cost_zero_for_exact_fit():
    demos = _demos_1d([1, 2, 4])
    model = fit(demos, IDENT_1D)
    pairs = len(consecutive_pairs(demos))
    assert cost(model, demos) < 1e-18 * pairs


def test_cost_hand_example():
    model = KoopmanModel(np.array([[0.0]]), IDENT_1D, LAYOUT_1D)
    assert cost(model, _demos_1d([1, 2, 4])) == pytest.approx(10.0)


def test_cost_identity_on_constant_pair():
    model = KoopmanModel(np.eye(1), IDENT_1D, LAYOUT_1D)
    assert cost(model, _demos_1d([5, 5])) == 0.0


# ------------------------------------------------------------------- rollout

def test_predict_step_scalar():
    model = KoopmanModel(np.array([[2.0]]), IDENT_1D, LAYOUT_1D)
    lifted = lift(IDENT_1D, CompositeState([3.0], []))
    assert predict_step(model, lifted).values[0] == pytest.approx(6.0)


def test_predict_step_linearity():
    rng = np.random.default_rng(7)
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    K = rng.standard_normal((2, 2))
    model = KoopmanModel(K, spec, layout)
    lifted = lift(spec, CompositeState(rng.standard_normal(2), []))
    twice = predict_step(model, predict_step(model, lifted)).values
    np.testing.assert_allclose(twice, K @ K @ lifted.values, rtol=1e-12)


def test_rollout_identity_model():
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    model = KoopmanModel(np.eye(2), spec, layout)
    ref = rollout(model, CompositeState([1.5, -0.5], []), 5)
    assert ref.shape == (5, 2)
    for row in ref:
        np.testing.assert_array_equal(row, [1.5, -0.5])


def test_rollout_geometric():
    model = KoopmanModel(np.array([[2.0]]), IDENT_1D, LAYOUT_1D)
    ref = rollout(model, CompositeState([1.0], []), 4)
    np.testing.assert_allclose(ref[:, 0], [1, 2, 4, 8])


def test_rollout_matches_rotation_closed_form():
    theta = 0.07
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    layout = StateLayout(n=2, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    model = KoopmanModel(R, spec, layout)
    x1 = np.array([1.0, 0.5])
    ref = rollout(model, CompositeState(x1, []), 100)
    for t in range(100):
        np.testing.assert_allclose(ref[t], np.linalg.matrix_power(R, t) @ x1, atol=1e-8)


def test_rollout_equals_iterated_predict_step():
    rng = np.random.default_rng(8)
    layout = StateLayout(n=2, m=1, a=1)
    spec = LiftingSpec("kodex-polynomial", layout)
    p = 10
    K = rng.standard_normal((p, p)) * 0.2
    model = KoopmanModel(K, spec, layout)
    init = CompositeState(rng.standard_normal(2), rng.standard_normal(1))
    ref = rollout(model, init, 7)
    lifted = lift(spec, init)
    rs = robot_slice(spec)
    for t in range(7):
        np.testing.assert_array_equal(ref[t], lifted.values[rs])
        lifted = predict_step(model, lifted)


def test_rollout_modes_agree_for_identity_lifting():
    # with no polynomial slots, re-lifting is a no-op
    rng = np.random.default_rng(9)
    layout = StateLayout(n=3, m=0, a=1)
    spec = LiftingSpec("identity", layout)
    K = rng.standard_normal((3, 3)) * 0.5
    model = KoopmanModel(K, spec, layout)
    init = CompositeState(rng.standard_normal(3), [])
    np.testing.assert_allclose(
        rollout(model, init, 20, mode="linear"),
        rollout(model, init, 20, mode="relift"),
        rtol=1e-12,
    )


def test_rollout_reports_first_bad_step():
    model = KoopmanModel(np.array([[1e200]]), IDENT_1D, LAYOUT_1D)
    with np.errstate(over="ignore"):
        with pytest.raises(ValueError, match="step 2"):
            rollout(model, CompositeState([1e200], []), 5)


def test_rollout_rejects_unknown_mode():
    model = KoopmanModel(np.eye(1), IDENT_1D, LAYOUT_1D)
    with pytest.raises(ValueError, match="mode"):
        rollout(model, CompositeState([1.0], []), 3, mode="hybrid")
