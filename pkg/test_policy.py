"""
Tests for the reference policy: features, analytic gradients, sampling,
snapshots, checkpoint averaging and checkpoint files.
"""

import numpy as np
import pytest

from src.rl.policy import (
    FeatureEncoder,
    PolicyParams,
    average_checkpoints,
    batch_logprobs,
    gather_states,
    grad_logprob,
    grad_value,
    init_params,
    load_checkpoint,
    log_prob,
    sample_response,
    sample_responses,
    sampling_distribution,
    save_checkpoint,
    snapshot,
    value,
    weighted_logprob_grad,
)
from src.rl.taskgen import generate_task
from src.utils.errors import CheckpointError, ContractViolation
from src.utils.rng import seeded_rng
from src.utils.vocab import Vocabulary

H = 1e-6


@pytest.fixture
def vocab():
    return Vocabulary.default()


@pytest.fixture
def encoder(vocab):
    return FeatureEncoder(vocab_size=len(vocab), max_positions=4, prompt_buckets=8, cross_buckets=16, scale=1.5)


@pytest.fixture
def params(vocab, encoder):
    return init_params(vocab, encoder.dim, seeded_rng(0, "test/init"), encoder)


@pytest.fixture
def task(vocab):
    return generate_task("ADD", 1, seeded_rng(0, "test/task"), vocab)


# Features

def test_feature_layout(encoder, vocab):
    assert encoder.dim == 1 + 4 + len(vocab) + 8 + 2 * 16
    state = encoder.encode(123, 2, vocab.query_id)
    assert len(state.indices) == encoder.active == 6
    assert state.indices[0] == 0
    assert np.all((state.indices >= 0) & (state.indices < encoder.dim))
    assert np.all(state.values == 1.5)
    assert len(set(state.indices.tolist())) == encoder.active


def test_position_is_clipped(encoder, vocab):
    far = encoder.encode(5, 500, vocab.eos_id)
    last = encoder.encode(5, 3, vocab.eos_id)
    np.testing.assert_array_equal(far.indices, last.indices)
    assert far.indices[1] == 1 + 3


def test_encoding_is_deterministic(encoder, vocab):
    a = encoder.encode(2**62 + 17, 1, vocab.id_of("3"))
    b = encoder.encode(2**62 + 17, 1, vocab.id_of("3"))
    np.testing.assert_array_equal(a.indices, b.indices)
    assert a.dense().sum() == pytest.approx(6 * 1.5)


def test_out_of_vocabulary_state(encoder, vocab):
    with pytest.raises(ContractViolation):
        encoder.encode(1, 0, len(vocab))


def test_replicated_blocks(encoder, vocab):
    wide = FeatureEncoder(vocab_size=len(vocab), max_positions=4, prompt_buckets=8, cross_buckets=16,
                          scale=1.5, replicas=3, critic_scale=0.01)
    assert wide.dim == 3 * encoder.dim
    state = wide.encode(777, 2, vocab.id_of("9"))
    assert len(state.indices) == wide.active == 18
    assert len(set(state.indices.tolist())) == 18
    for r in range(3):
        block = state.indices[6 * r:6 * (r + 1)]
        assert np.all((block >= r * wide.block_dim) & (block < (r + 1) * wide.block_dim))
    np.testing.assert_array_equal(state.indices[:6], encoder.encode(777, 2, vocab.id_of("9")).indices)
    np.testing.assert_array_equal(state.critic_values, 0.01)


def test_replicas_must_be_positive(vocab):
    with pytest.raises(ContractViolation):
        FeatureEncoder(vocab_size=len(vocab), replicas=0)


def test_critic_reads_its_own_feature_scale(vocab):
    enc = FeatureEncoder(vocab_size=len(vocab), max_positions=4, prompt_buckets=8, cross_buckets=16,
                         scale=3.0, replicas=2, critic_scale=0.5)
    p = init_params(vocab, enc.dim, seeded_rng(4, "test/init"), enc)
    state = enc.encode(55, 1, vocab.query_id)
    assert value(p, state) == pytest.approx(0.5 * p.critic_weights[state.indices].sum())
    np.testing.assert_allclose(grad_value(p, state), state.critic_dense())


# Gradients against central finite differences

def test_grad_logprob_matches_finite_differences(params, encoder, vocab):
    state = encoder.encode(987654321, 2, vocab.id_of("4"))
    action = int(vocab.id_of("7"))
    analytic = grad_logprob(params, state, action)

    for row in state.indices:
        for col in (0, action, len(vocab) - 1):
            w = params.policy_weights
            saved = w[row, col]
            w[row, col] = saved + H
            up = log_prob(params, state, action)
            w[row, col] = saved - H
            down = log_prob(params, state, action)
            w[row, col] = saved
            assert analytic[row, col] == pytest.approx((up - down) / (2 * H), rel=1e-5, abs=1e-7)


def test_grad_logprob_is_zero_off_the_active_features(params, encoder, vocab):
    state = encoder.encode(42, 0, vocab.query_id)
    grad = grad_logprob(params, state, 3)
    inactive = np.setdiff1d(np.arange(encoder.dim), state.indices)
    assert np.all(grad[inactive] == 0.0)


def test_grad_value_matches_finite_differences(params, encoder, vocab):
    state = encoder.encode(31337, 1, vocab.box_open_id)
    analytic = grad_value(params, state)
    np.testing.assert_allclose(analytic, state.critic_dense())

    row = int(state.indices[3])
    w = params.critic_weights
    saved = w[row]
    w[row] = saved + H
    up = value(params, state)
    w[row] = saved - H
    down = value(params, state)
    w[row] = saved
    assert analytic[row] == pytest.approx((up - down) / (2 * H), rel=1e-6)


def test_weighted_batch_gradient_sums_per_state_gradients(params, encoder, vocab):
    keys = np.array([11, 11, 99])
    positions = np.array([0, 1, 0])
    prevs = np.array([vocab.query_id, vocab.box_open_id, vocab.query_id])
    actions = np.array([vocab.box_open_id, vocab.id_of("5"), vocab.eos_id])
    weights = np.array([0.5, -1.0, 2.0])

    idx, val = encoder.encode_batch(keys, positions, prevs)
    _, probs = batch_logprobs(params, idx, val, actions)
    batched = weighted_logprob_grad(params, idx, val, actions, probs, weights)

    expected = sum(
        w * grad_logprob(params, encoder.encode(k, p, q), a)
        for k, p, q, a, w in zip(keys, positions, prevs, actions, weights)
    )
    np.testing.assert_allclose(batched, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradients_at_random_points(vocab, encoder, seed):
    rng = seeded_rng(seed, "test/gradcheck")
    p = init_params(vocab, encoder.dim, rng, encoder)
    p.policy_weights *= rng.uniform(1.0, 20.0)
    state = encoder.encode(int(rng.integers(0, 2**62)), int(rng.integers(0, 8)), int(rng.integers(0, len(vocab))))
    action = int(rng.integers(0, len(vocab)))

    analytic = grad_logprob(p, state, action)
    row = int(state.indices[int(rng.integers(0, len(state.indices)))])
    for col in (action, int(rng.integers(0, len(vocab)))):
        w = p.policy_weights
        saved = w[row, col]
        w[row, col] = saved + H
        up = log_prob(p, state, action)
        w[row, col] = saved - H
        down = log_prob(p, state, action)
        w[row, col] = saved
        assert analytic[row, col] == pytest.approx((up - down) / (2 * H), rel=1e-4, abs=1e-7)

    v_analytic = grad_value(p, state)
    c = p.critic_weights
    saved = c[row]
    c[row] = saved + H
    up = value(p, state)
    c[row] = saved - H
    down = value(p, state)
    c[row] = saved
    assert v_analytic[row] == pytest.approx((up - down) / (2 * H), rel=1e-5)


def _pinned_logits(params, state, targets):
    """Zero the weights, then spread `targets` (token -> logit) over the state's active rows."""
    params.policy_weights[:] = 0.0
    share = float(np.sum(state.values))
    for token, logit in targets.items():
        params.policy_weights[state.indices, token] = logit / share


def test_log_prob_is_finite_at_extreme_logits(params, encoder, vocab):
    state = encoder.encode(2024, 0, vocab.query_id)
    action = int(vocab.id_of("7"))
    for big in (1e4, -1e4):
        _pinned_logits(params, state, {action: big})
        lp = log_prob(params, state, action)
        assert np.isfinite(lp) and lp <= 0.0
        other = log_prob(params, state, int(vocab.id_of("1")))
        assert np.isfinite(other)
    _pinned_logits(params, state, {action: -1e4})
    assert log_prob(params, state, action) == pytest.approx(-1e4 - np.log(len(vocab) - 1), rel=1e-9)


def test_dominant_logit_takes_almost_all_mass(params, encoder, vocab):
    state = encoder.encode(2025, 1, vocab.box_open_id)
    action = int(vocab.id_of("3"))
    _pinned_logits(params, state, {action: 50.0})
    assert log_prob(params, state, action) >= np.log1p(-1e-20)
    assert log_prob(params, state, int(vocab.eos_id)) == pytest.approx(-50.0, abs=1e-9)


def test_log_prob_rejects_unknown_action(params, encoder, vocab):
    with pytest.raises(ContractViolation):
        log_prob(params, encoder.encode(1, 0, vocab.query_id), len(vocab))


# Sampling

def test_sampling_distribution_bans_and_truncates():
    z = np.array([0.0, 1.0, 3.0, 2.0])
    p = sampling_distribution(z, banned=(0,))
    assert p[0] == 0.0 and p.sum() == pytest.approx(1.0)

    nucleus = sampling_distribution(z, top_p=0.1)
    np.testing.assert_allclose(nucleus, [0.0, 0.0, 1.0, 0.0])

    cold = sampling_distribution(z, temperature=0.5)
    assert cold[2] > sampling_distribution(z)[2]


def test_sample_response_invariants(params, task, vocab):
    for seed in range(5):
        traj = sample_response(params, task, max_len=12, rng=seeded_rng(seed, "test/sample"))
        assert 1 <= traj.length <= 12
        assert vocab.pad_id not in traj.actions.tolist()
        assert traj.values[-1] == 0.0
        assert np.all(traj.old_logprobs <= 0.0)
        assert np.all(traj.rewards == 0.0)
        assert traj.terminated_by_eos == (int(traj.actions[-1]) == vocab.eos_id)
        assert traj.family == "ADD"


def test_old_logprobs_are_untempered_policy_logprobs(params, task, encoder, vocab):
    traj = sample_response(params, task, max_len=8, temperature=0.7, top_p=0.9,
                           rng=seeded_rng(1, "test/sample"))
    prev = vocab.query_id
    for t, action in enumerate(traj.actions):
        state = encoder.encode(task.prompt_key, t, prev)
        assert traj.old_logprobs[t] == pytest.approx(log_prob(params, state, int(action)))
        assert traj.values[t] == pytest.approx(value(params, state))
        prev = int(action)


def test_sampling_is_reproducible(params, task):
    a = sample_response(params, task, 16, rng=seeded_rng(9, "s"))
    b = sample_response(params, task, 16, rng=seeded_rng(9, "s"))
    np.testing.assert_array_equal(a.actions, b.actions)


def test_first_token_frequencies_match_the_policy(params, task, encoder, vocab):
    state = encoder.encode(task.prompt_key, 0, vocab.query_id)
    one, two, three = (int(vocab.id_of(d)) for d in "123")
    targets = {token: -1000.0 for token in range(len(vocab))}
    targets.update({one: 0.0, two: np.log(2.0), three: np.log(3.0)})
    _pinned_logits(params, state, targets)

    n = 100_000
    uniforms = seeded_rng(3, "test/frequency").random((n, 1))
    trajs = sample_responses(params, [task] * n, 1, uniforms)
    counts = np.bincount([int(t.actions[0]) for t in trajs], minlength=len(vocab))

    for token, p in ((one, 1 / 6), (two, 2 / 6), (three, 3 / 6)):
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(counts[token] - n * p) <= 3 * sigma
    assert counts[one] + counts[two] + counts[three] == n


def test_row_grouping_does_not_change_samples(params, vocab):
    tasks = [generate_task("ADD", 1, seeded_rng(i, "test/group"), vocab) for i in range(3)]
    tasks.append(tasks[0])
    uniforms = seeded_rng(8, "test/group/u").random((4, 12))
    together = sample_responses(params, tasks, 12, uniforms)
    for i, task in enumerate(tasks):
        alone = sample_responses(params, [task], 12, uniforms[i:i + 1])[0]
        np.testing.assert_array_equal(together[i].actions, alone.actions)
        np.testing.assert_allclose(together[i].old_logprobs, alone.old_logprobs, rtol=1e-12)
        np.testing.assert_allclose(together[i].values, alone.values, rtol=1e-12)


def test_uniforms_must_match_the_batch(params, task):
    with pytest.raises(ContractViolation):
        sample_responses(params, [task, task], 4, np.zeros((2, 5)))


def test_sampling_needs_a_stream_and_a_length(params, task):
    with pytest.raises(ContractViolation):
        sample_response(params, task, 8, rng=None)
    with pytest.raises(ContractViolation):
        sample_response(params, task, 0, rng=seeded_rng(0, "s"))


def test_gather_states_matches_sampling(params, task, encoder, vocab):
    traj = sample_response(params, task, 10, rng=seeded_rng(2, "s"))
    idx, val, actions = gather_states(encoder, vocab, [traj])
    lp, _ = batch_logprobs(params, idx, val, actions)
    np.testing.assert_allclose(lp, traj.old_logprobs, atol=1e-12)


# Snapshots and averaging

def test_snapshot_is_frozen_and_detached(params):
    snap = snapshot(params)
    with pytest.raises(ValueError):
        snap.policy_weights[0, 0] = 1.0
    before = snap.policy_weights[0, 0]
    params.policy_weights[0, 0] += 5.0
    assert snap.policy_weights[0, 0] == before
    assert snap.version == params.version


def test_average_is_elementwise_mean(vocab, encoder):
    a = PolicyParams(np.full((encoder.dim, len(vocab)), 1.0), np.full(encoder.dim, 2.0), encoder, vocab, 3)
    b = PolicyParams(np.full((encoder.dim, len(vocab)), 3.0), np.full(encoder.dim, -2.0), encoder, vocab, 5)
    avg = average_checkpoints([snapshot(a), snapshot(b)])
    np.testing.assert_array_equal(avg.policy_weights, 2.0)
    np.testing.assert_array_equal(avg.critic_weights, 0.0)
    assert avg.version == 5


def test_average_of_identical_snapshots(params):
    avg = average_checkpoints([snapshot(params)] * 3)
    np.testing.assert_allclose(avg.policy_weights, params.policy_weights, rtol=1e-15)


def test_average_rejects_bad_inputs(params, vocab):
    with pytest.raises(ContractViolation):
        average_checkpoints([])
    other = PolicyParams(np.zeros((3, len(vocab))), np.zeros(3), None, vocab)
    with pytest.raises(ContractViolation):
        average_checkpoints([params, other])


# Checkpoint files

def test_checkpoint_file_restores_parameters(params, tmp_path):
    path = save_checkpoint(params, str(tmp_path / "ckpt.json"))
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.policy_weights, params.policy_weights)
    np.testing.assert_array_equal(loaded.critic_weights, params.critic_weights)
    assert loaded.encoder == params.encoder
    assert loaded.version == params.version


def test_checkpoint_bytes_are_deterministic(params, tmp_path):
    a = save_checkpoint(params, str(tmp_path / "a.json"))
    b = save_checkpoint(snapshot(params), str(tmp_path / "b.json"))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_checkpoint_vocabulary_mismatch(params, vocab, tmp_path):
    path = save_checkpoint(params, str(tmp_path / "ckpt.json"))
    other = Vocabulary(symbols=vocab.symbols + ("extra",))
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path, other)


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
