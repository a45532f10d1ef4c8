import warnings
from itertools import combinations

import numpy as np
import pytest

from helpers import gradient_check, random_batch
from jointsearch import predictor as P
from jointsearch.encoding import arch_dim, encode_arch, encode_joint, joint_dim
from jointsearch.errors import (
    CorruptCheckpointError,
    DegenerateTestSetError,
    DimensionMismatchError,
    FingerprintWarning,
)
from jointsearch.oracle import OracleConfig, gen_fp_dataset, gen_mp_dataset, records_to_arrays
from jointsearch.space import sample_arch, sample_policy


def _zeros(d, h=8):
    return P.MlpParams(np.zeros((d, h)), np.zeros(h), np.zeros((h, h)), np.zeros(h),
                       np.zeros((h, 1)), np.zeros(1))


def _reference_forward(params, x):
    # deliberately naive loops, independent of the vectorized implementation
    def dense(vec, W, b, relu):
        out = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += vec[i] * W[i, j]
            out.append(max(s, 0.0) if relu else s)
        return out

    h1 = dense(list(x), params.W1, params.b1, True)
    h2 = dense(h1, params.W2, params.b2, True)
    z = dense(h2, params.W3, params.b3, False)[0]
    return 1.0 / (1.0 + np.exp(-z))


P_ORACLE = OracleConfig()


# -- forward ---------------------------------------------------------------------

def test_zero_params_give_half():
    p = _zeros(5)
    assert P.forward(p, np.ones(5)) == 0.5
    np.testing.assert_array_equal(P.forward(p, np.eye(5)), np.full(5, 0.5))


def test_large_output_bias():
    p = _zeros(5)
    p.b3[0] = 10.0
    assert P.forward(p, np.zeros(5)) == pytest.approx(1 / (1 + np.exp(-10)), rel=1e-15)
    assert P.forward(p, np.zeros(5)) == pytest.approx(0.99995, abs=1e-5)


def test_forward_matches_naive_loops():
    p = P.init_params(12, hidden=16, seed=0)
    x = np.random.default_rng(1).uniform(-1, 1, size=12)
    assert P.forward(p, x) == pytest.approx(_reference_forward(p, x), rel=1e-12)


def test_forward_output_in_unit_interval(space21, rng):
    p = P.init_params(joint_dim(space21), seed=3)
    X, _ = random_batch(space21, "mp", rng, 64)
    y = P.forward(p, X)
    assert np.all((y > 0) & (y < 1))


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        P.forward(P.init_params(4, hidden=4), np.zeros(5))


def test_params_validation():
    p = P.init_params(4, hidden=4)
    with pytest.raises(DimensionMismatchError):
        P.MlpParams(p.W1, np.zeros(3), p.W2, p.b2, p.W3, p.b3)
    bad = p.W2.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        P.MlpParams(p.W1, p.b1, bad, p.b2, p.W3, p.b3)


def test_train_config_validation():
    for kwargs in ({"learning_rate": 0}, {"batch_size": 0}, {"adam_beta1": 1.0}, {"epochs": -1}):
        with pytest.raises(ValueError):
            P.TrainConfig(**kwargs)


def test_labeled_sample_range():
    with pytest.raises(ValueError):
        P.LabeledSample(np.zeros(3), 1.5)


# -- gradients -------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["fp", "mp"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(space21, variant, seed):
    rng = np.random.default_rng(100 + seed)
    X, t = random_batch(space21, variant, rng)
    p = P.init_params(X.shape[1], seed=seed)
    assert gradient_check(p, X, t, 50, seed) < 1e-4


def test_zero_residual_gives_zero_gradient(tiny, rng):
    X, _ = random_batch(tiny, "mp", rng, 10)
    p = P.init_params(X.shape[1], hidden=16, seed=0)
    # labels from the training-path forward so residuals are exactly zero
    t = P._forward_cache(p, X)[-1]
    for g in P.grad(p, (X, t)).arrays():
        assert not g.any()


def test_duplicated_sample_same_gradient(tiny, rng):
    X, t = random_batch(tiny, "mp", rng, 1)
    p = P.init_params(X.shape[1], hidden=16, seed=0)
    one = P.grad(p, (X, t))
    many = P.grad(p, (np.repeat(X, 7, axis=0), np.repeat(t, 7)))
    for a, b in zip(one.arrays(), many.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-18)


def test_grad_rejects_bad_batches():
    p = P.init_params(4, hidden=4)
    with pytest.raises(ValueError):
        P.grad(p, (np.zeros((0, 4)), np.zeros(0)))
    with pytest.raises(DimensionMismatchError):
        P.grad(p, (np.zeros((2, 5)), np.zeros(2)))


# -- training --------------------------------------------------------------------

def test_linear_target_converges():
    rng = np.random.default_rng(0)
    w = rng.normal(size=10)
    X = rng.uniform(-1, 1, size=(200, 10))
    t = 1 / (1 + np.exp(-(X @ w)))
    res = P.train(P.init_params(10, hidden=64, seed=0), (X, t), P.TrainConfig(epochs=100, batch_size=32))
    assert res.final_mse < 1e-3
    assert len(res.loss_history) == 100


def test_zero_epochs_returns_init():
    p = P.init_params(6, hidden=8, seed=4)
    res = P.train(p, (np.zeros((3, 6)), np.full(3, 0.5)), P.TrainConfig(epochs=0))
    assert res.params.equal(p)
    assert res.params.W1 is not p.W1


def test_training_is_deterministic(tiny):
    X, t = records_to_arrays(gen_mp_dataset(P_ORACLE, tiny, 100, 100, 10))
    p = P.init_params(X.shape[1], hidden=32, seed=1)
    cfg = P.TrainConfig(epochs=5, batch_size=16, seed=7)
    a = P.train(p, (X, t), cfg)
    b = P.train(p, (X, t), cfg)
    assert a.params.equal(b.params)
    assert a.loss_history == b.loss_history


def test_non_finite_loss_reports_epoch():
    X = np.ones((4, 3))
    t = np.full(4, 0.5)
    p = P.init_params(3, hidden=4)
    with pytest.raises(P.NonFiniteLossError) as info, np.errstate(all="ignore"):
        P.train(p, (X, t), P.TrainConfig(learning_rate=1e308, epochs=5))
    assert 0 <= info.value.epoch < 5
    assert f"epoch {info.value.epoch}" in str(info.value)


def test_train_accepts_labeled_samples():
    samples = [P.LabeledSample(np.eye(3)[i % 3], 0.2 + 0.1 * (i % 3)) for i in range(9)]
    res = P.train(P.init_params(3, hidden=8), samples, P.TrainConfig(epochs=2, batch_size=4))
    assert np.isfinite(res.final_mse)


# -- transfer --------------------------------------------------------------------

def test_transfer_shapes_and_zero_head(space21):
    fp = P.init_params(arch_dim(space21), seed=0)
    mp = P.transfer_init(fp, space21)
    assert mp.input_dim == joint_dim(space21)
    assert mp.variant == "mp-transfer"
    used = np.zeros(mp.input_dim, dtype=bool)
    from jointsearch.encoding import layout
    used[layout(space21).arch_index_in_joint] = True
    assert not mp.W1[~used].any()
    np.testing.assert_array_equal(mp.W2, fp.W2)


def test_transfer_identity_bitwise(space21, rng):
    fp = P.init_params(arch_dim(space21), seed=2)
    mp = P.transfer_init(fp, space21)
    for _ in range(50):
        a = sample_arch(space21, rng)
        q1, q2 = sample_policy(space21, a, rng), sample_policy(space21, a, rng)
        ref = P.forward(fp, encode_arch(space21, a))
        assert P.forward(mp, encode_joint(space21, a, q1)) == ref
        assert P.forward(mp, encode_joint(space21, a, q2)) == ref


def test_transfer_dimension_check(space21):
    with pytest.raises(DimensionMismatchError):
        P.transfer_init(P.init_params(arch_dim(space21) + 1, hidden=4), space21)


def test_finetuned_transfer_distinguishes_policies(space21):
    fp_data = records_to_arrays(gen_fp_dataset(P_ORACLE, space21, 2000))
    fp = P.train(P.init_params(arch_dim(space21), seed=0), fp_data, P.TrainConfig(epochs=10)).params
    mp_data = records_to_arrays(gen_mp_dataset(P_ORACLE, space21, 500, 500, 10, stream=1))
    tuned = P.train(P.transfer_init(fp, space21), mp_data,
                    P.TrainConfig(**P.TRANSFER_TRAIN_DEFAULTS)).params
    rng = np.random.default_rng(9)
    differ = 0
    for _ in range(1000):
        a = sample_arch(space21, rng)
        q1, q2 = sample_policy(space21, a, rng), sample_policy(space21, a, rng)
        if q1 == q2:
            continue
        differ += P.forward(tuned, encode_joint(space21, a, q1)) != P.forward(tuned, encode_joint(space21, a, q2))
    assert differ >= 900


# -- pairwise accuracy -----------------------------------------------------------

def _brute_pairwise(pred, labels):
    correct = total = 0
    for i, j in combinations(range(len(labels)), 2):
        if labels[i] == labels[j]:
            continue
        total += 1
        if pred[i] != pred[j] and (pred[i] > pred[j]) == (labels[i] > labels[j]):
            correct += 1
    return correct / total


def test_pairwise_self_is_one():
    labels = np.random.default_rng(0).uniform(size=300)
    assert P.pairwise_accuracy_from_scores(labels, labels) == 1.0


def test_pairwise_constant_is_zero():
    labels = np.random.default_rng(0).uniform(size=300)
    assert P.pairwise_accuracy_from_scores(np.full(300, 0.4), labels) == 0.0


def test_pairwise_matches_brute_force(space21):
    recs = gen_mp_dataset(P_ORACLE, space21, 2000, 0, 1, stream=5)
    X, t = records_to_arrays(recs)
    p = P.init_params(X.shape[1], seed=0)
    pred = P.forward(p, X)
    assert P.pairwise_accuracy(p, (X, t)) == _brute_pairwise(list(pred), list(t))


def test_pairwise_label_ties_excluded():
    labels = np.array([0.1, 0.1, 0.2, 0.3])
    pred = np.array([0.9, 0.1, 0.2, 0.3])
    # tie between the first two labels is dropped from the 5 remaining pairs
    assert P.pairwise_accuracy_from_scores(pred, labels) == pytest.approx(3 / 5)
    assert P.pairwise_accuracy_from_scores(pred, labels, chunk=1) == pytest.approx(3 / 5)


def test_pairwise_degenerate_sets():
    with pytest.raises(DegenerateTestSetError):
        P.pairwise_accuracy_from_scores([0.1], [0.5])
    with pytest.raises(DegenerateTestSetError):
        P.pairwise_accuracy_from_scores([0.1, 0.2], [0.5, 0.5])


# -- checkpoints -----------------------------------------------------------------

def test_save_load_bitwise(tmp_path, space21):
    p = P.init_params(joint_dim(space21), seed=5, variant="mp-scratch",
                      space_fingerprint=space21.fingerprint())
    P.save(p, tmp_path / "m.bin")
    q = P.load(tmp_path / "m.bin", expected_fingerprint=space21.fingerprint())
    assert q.equal(p)
    assert (tmp_path / "m.bin").read_bytes().startswith(P.MAGIC)


def test_load_warns_on_fingerprint_mismatch(tmp_path, tiny, space21):
    p = P.init_params(8, hidden=4, space_fingerprint=tiny.fingerprint())
    P.save(p, tmp_path / "m.bin")
    with pytest.warns(FingerprintWarning):
        P.load(tmp_path / "m.bin", expected_fingerprint=space21.fingerprint())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        P.load(tmp_path / "m.bin", expected_fingerprint=tiny.fingerprint())


@pytest.mark.parametrize("damage", ["truncate", "magic", "header"])
def test_corrupt_checkpoint(tmp_path, damage):
    path = tmp_path / "m.bin"
    P.save(P.init_params(8, hidden=4), path)
    raw = path.read_bytes()
    if damage == "truncate":
        raw = raw[:-9]
    elif damage == "magic":
        raw = b"XXXXXXXX" + raw[8:]
    else:
        raw = P.MAGIC + b"{not json\n" + raw[raw.index(b"\n") + 1:]
    path.write_bytes(raw)
    with pytest.raises(CorruptCheckpointError):
        P.load(path)
