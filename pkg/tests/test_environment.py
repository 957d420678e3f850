"""Instance generation, per-round draws, schedules, and file loaders.

The draw tests pin the counter-based keying: every random quantity must be a
pure function of (master_seed, round index), independent of call order.
"""

import math

import numpy as np
import pytest

from fedlinucb import (
    Schedule,
    gen_instance,
    gen_schedule,
    load_arms_file,
    load_schedule_file,
    sample_decision_set,
    sample_reward,
)


# ---------------------------------------------------------------- instances


def test_theta_star_on_radius_s_sphere():
    for seed in range(20):
        inst = gen_instance("random-sphere", d=5, K=3, S=2.5, seed=seed)
        assert np.linalg.norm(inst.theta_star) == pytest.approx(2.5, rel=1e-12)


def test_instance_regeneration_is_identical():
    a = gen_instance("random-sphere", d=4, K=6, seed=99)
    b = gen_instance("random-sphere", d=4, K=6, seed=99)
    assert np.array_equal(a.theta_star, b.theta_star)
    c = gen_instance("random-sphere", d=4, K=6, seed=100)
    assert not np.array_equal(a.theta_star, c.theta_star)


def test_bias_demo_instance_shape():
    inst = gen_instance("bias-demo", seed=0)
    assert inst.dim == 2
    assert np.array_equal(inst.theta_star, np.zeros(2))
    assert inst.noise_spec == "rademacher-scaled"
    assert inst.L == 3.0  # widened to admit the long arm
    arms = sample_decision_set(inst, 1).arms
    assert np.array_equal(arms[0], [3.0, 0.0])
    assert arms[1] == pytest.approx([0.0, 1.0 / math.sqrt(10.0)], rel=1e-15)


def test_fixed_list_instance():
    arms = np.array([[0.6, 0.0], [0.0, 0.8]])
    inst = gen_instance("fixed-list", arms=arms, seed=1)
    assert inst.dim == 2
    for t in (1, 2, 77):
        assert np.array_equal(sample_decision_set(inst, t).arms, arms)
    with pytest.raises(ValueError):
        gen_instance("fixed-list", arms=np.array([[3.0, 0.0]]), L=1.0)
    with pytest.raises(ValueError):
        gen_instance("fixed-list", seed=1)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        gen_instance("mystery", d=2, K=2)
    with pytest.raises(ValueError):
        gen_instance("random-sphere", d=2)  # K missing


# ---------------------------------------------------------------- decision sets


def test_sphere_arms_fill_the_ball():
    inst = gen_instance("random-sphere", d=3, K=50, L=2.0, seed=5)
    norms = np.concatenate(
        [np.linalg.norm(sample_decision_set(inst, t).arms, axis=1) for t in range(1, 21)]
    )
    assert norms.max() <= 2.0 * (1 + 1e-12)
    # Uniform-in-ball, not on the shell: plenty of interior mass.
    assert (norms < 1.8).mean() > 0.3


def test_corner_arms_have_exact_coordinates():
    inst = gen_instance("hypercube-corners", d=4, K=8, L=1.0, seed=6)
    arms = sample_decision_set(inst, 3).arms
    assert np.allclose(np.abs(arms), 1.0 / math.sqrt(4.0))
    assert np.allclose(np.linalg.norm(arms, axis=1), 1.0)


def test_decision_set_keyed_by_round_only():
    inst = gen_instance("random-sphere", d=3, K=4, seed=12)
    direct = sample_decision_set(inst, 9).arms
    # Interleave other rounds; round 9 must not care.
    for t in (3, 1, 9, 2, 9):
        got = sample_decision_set(inst, t).arms
        if t == 9:
            assert np.array_equal(got, direct)
    assert not np.array_equal(sample_decision_set(inst, 10).arms, direct)


def test_rounds_are_one_based():
    inst = gen_instance("random-sphere", d=2, K=2, seed=0)
    with pytest.raises(ValueError):
        sample_decision_set(inst, 0)
    with pytest.raises(ValueError):
        sample_reward(inst, 0, np.array([0.1, 0.0]))


# ---------------------------------------------------------------- rewards


def test_reward_noiseless_is_inner_product():
    inst = gen_instance("random-sphere", d=3, K=2, R=0.0, seed=4)
    x = np.array([0.2, -0.1, 0.05])
    assert sample_reward(inst, 7, x) == float(x @ inst.theta_star)


def test_reward_noise_keyed_by_round_only():
    inst = gen_instance("random-sphere", d=2, K=2, seed=21)
    x = np.array([0.5, 0.0])
    first = sample_reward(inst, 13, x)
    sample_reward(inst, 1, x)
    sample_reward(inst, 99, x)
    assert sample_reward(inst, 13, x) == first
    # Same round, different arm: noise identical, mean shifts.
    y = np.array([0.0, 0.5])
    eta = first - float(x @ inst.theta_star)
    assert sample_reward(inst, 13, y) == pytest.approx(float(y @ inst.theta_star) + eta, rel=1e-12)


def test_gaussian_noise_moments():
    inst = gen_instance("random-sphere", d=2, K=2, R=1.5, seed=33)
    etas = np.array(
        [sample_reward(inst, t, np.zeros(2)) for t in range(1, 4001)]
    )
    assert abs(etas.mean()) < 3 * 1.5 / math.sqrt(4000)
    assert etas.std() == pytest.approx(1.5, rel=0.05)


def test_scaled_coin_noise_frequency():
    inst = gen_instance("bias-demo", R=1.0, seed=8)
    etas = np.array([sample_reward(inst, t, np.zeros(2)) for t in range(1, 10001)])
    assert set(np.unique(etas)) == {-1.0, 1.0}
    assert abs((etas == 1.0).mean() - 0.5) < 0.02


def test_reward_rejects_oversized_arm():
    inst = gen_instance("random-sphere", d=2, K=2, L=1.0, seed=0)
    with pytest.raises(ValueError):
        sample_reward(inst, 1, np.array([1.5, 0.0]))
    with pytest.raises(ValueError):
        sample_reward(inst, 1, np.array([0.5, 0.0, 0.0]))


# ---------------------------------------------------------------- schedules


def test_round_robin_pattern():
    sched = gen_schedule("round-robin", M=3, T=7)
    assert sched.agents.tolist() == [1, 2, 3, 1, 2, 3, 1]


def test_iid_uniform_covers_agents_and_reproduces():
    a = gen_schedule("iid-uniform", M=4, T=400, seed=9)
    b = gen_schedule("iid-uniform", M=4, T=400, seed=9)
    assert np.array_equal(a.agents, b.agents)
    assert set(a.agents.tolist()) == {1, 2, 3, 4}
    c = gen_schedule("iid-uniform", M=4, T=400, seed=10)
    assert not np.array_equal(a.agents, c.agents)


def test_block_schedule_contiguity():
    sched = gen_schedule("block", M=2, T=6)
    assert sched.agents.tolist() == [1, 1, 1, 2, 2, 2]
    with pytest.raises(ValueError):
        gen_schedule("block", M=4, T=6)


def test_explicit_schedule_and_validation():
    sched = gen_schedule("explicit-list", M=3, T=0, agents=[1, 3, 3, 2])
    assert sched.T == 4
    with pytest.raises(ValueError):
        gen_schedule("explicit-list", M=2, T=0, agents=[1, 3])
    with pytest.raises(ValueError):
        gen_schedule("explicit-list", M=2, T=0, agents=[0, 1])
    with pytest.raises(ValueError):
        gen_schedule("nope", M=2, T=4)


def test_schedule_dataclass_validation():
    with pytest.raises(ValueError):
        Schedule(M=2, T=3, agents=np.array([1, 2]), descriptor="bad-length")
    with pytest.raises(ValueError):
        Schedule(M=0, T=0, agents=np.array([], dtype=np.int64), descriptor="bad-m")
    empty = Schedule(M=2, T=0, agents=np.array([], dtype=np.int64), descriptor="empty")
    assert empty.T == 0


# ---------------------------------------------------------------- file loaders


def test_schedule_file_roundtrip(tmp_path):
    p = tmp_path / "sched.txt"
    p.write_text("# activation order\n1\n2\n\n 2  # repeat\n1\n", encoding="utf-8")
    sched = load_schedule_file(str(p), M=2)
    assert sched.agents.tolist() == [1, 2, 2, 1]
    assert sched.T == 4


def test_schedule_file_rejects_multi_token_line(tmp_path):
    p = tmp_path / "sched.txt"
    p.write_text("1 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_schedule_file(str(p), M=2)


def test_schedule_file_rejects_out_of_range_id(tmp_path):
    p = tmp_path / "sched.txt"
    p.write_text("1\n5\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_schedule_file(str(p), M=2)


def test_arms_file_roundtrip(tmp_path):
    p = tmp_path / "arms.txt"
    p.write_text("# two arms\n3 0\n0 0.31622776601683794\n", encoding="utf-8")
    arms = load_arms_file(str(p))
    assert arms.shape == (2, 2)
    assert arms[0].tolist() == [3.0, 0.0]


def test_arms_file_rejects_ragged_and_empty(tmp_path):
    p = tmp_path / "arms.txt"
    p.write_text("1 0\n0 1 0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_arms_file(str(p))
    q = tmp_path / "empty.txt"
    q.write_text("# nothing here\n\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_arms_file(str(q))
