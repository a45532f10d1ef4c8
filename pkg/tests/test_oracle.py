import dataclasses
from collections import Counter

import numpy as np
import pytest

from jointsearch.encoding import encode_arch, encode_joint
from jointsearch.errors import DivisibilityError, InvalidInputError
from jointsearch.oracle import (
    OracleConfig,
    fp_accuracy,
    gen_fp_dataset,
    gen_mp_dataset,
    quant_accuracy,
    read_dataset,
    records_to_arrays,
    write_dataset,
)
from jointsearch.space import ArchSpec, QuantPolicy, make_arch, make_policy, sample_arch, sample_policy, validate

QUIET = OracleConfig(noise_amplitude=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(acc_floor=0.8, acc_ceil=0.3)
    with pytest.raises(ValueError):
        OracleConfig(noise_amplitude=-1.0)


def test_fp_deterministic(space21, oracle_cfg, rng):
    a = sample_arch(space21, rng)
    assert fp_accuracy(oracle_cfg, space21, a) == fp_accuracy(oracle_cfg, space21, a)
    assert fp_accuracy(oracle_cfg, space21, a) == fp_accuracy(OracleConfig(), space21, a)


def test_invalid_arch_rejected(space21):
    bad = ArchSpec((1,) * 6, (3,) * 21, (1,) * 21)
    with pytest.raises(InvalidInputError):
        fp_accuracy(OracleConfig(), space21, bad)


def test_wider_channel_never_hurts(space21):
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = sample_arch(space21, rng)
        slot = int(rng.choice([i for i in range(space21.n_slots) if a.is_active(i)]))
        chans = space21.channel_choices_for(slot)
        i = chans.index(a.channels[slot])
        if i + 1 == len(chans):
            continue
        wider = list(a.channels)
        wider[slot] = chans[i + 1]
        b = dataclasses.replace(a, channels=tuple(wider))
        assert fp_accuracy(QUIET, space21, b) >= fp_accuracy(QUIET, space21, a)


def test_max_beats_min(space21, oracle_cfg):
    big = make_arch(space21, [st.max_depth for st in space21.stages], 7,
                    [space21.channel_choices_for(i)[-1] for i in range(space21.n_slots)])
    small = make_arch(space21, [min(st.depth_choices) for st in space21.stages], 3,
                      [space21.channel_choices_for(i)[0] for i in range(space21.n_slots)])
    assert fp_accuracy(oracle_cfg, space21, big) > fp_accuracy(oracle_cfg, space21, small)


def test_all_eight_bit_is_lossless(space21, oracle_cfg, rng):
    for _ in range(20):
        a = sample_arch(space21, rng)
        assert quant_accuracy(oracle_cfg, space21, a, make_policy(space21, a, 8)) == fp_accuracy(oracle_cfg, space21, a)


def test_lowering_a_bit_never_helps(space21, oracle_cfg):
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = sample_arch(space21, rng)
        q = sample_policy(space21, a, rng)
        slot = int(rng.choice([i for i in range(space21.n_slots) if a.is_active(i)]))
        field = int(rng.integers(4))
        bits = list(q.bits[slot])
        idx = space21.bit_choices.index(bits[field])
        if idx == 0:
            continue
        bits[field] = space21.bit_choices[idx - 1]
        lower = list(q.bits)
        lower[slot] = tuple(bits)
        before = quant_accuracy(oracle_cfg, space21, a, q)
        assert quant_accuracy(oracle_cfg, space21, a, QuantPolicy(tuple(lower))) <= before


def test_quant_range(space21, oracle_cfg, rng):
    for _ in range(200):
        a = sample_arch(space21, rng)
        q = sample_policy(space21, a, rng)
        fp = fp_accuracy(oracle_cfg, space21, a)
        assert oracle_cfg.acc_floor <= fp <= oracle_cfg.acc_ceil
        assert 0.0 <= quant_accuracy(oracle_cfg, space21, a, q) <= fp


def test_order_mostly_preserved(space21, oracle_cfg):
    rng = np.random.default_rng(0)
    fp, mp = [], []
    for _ in range(1000):
        a = sample_arch(space21, rng)
        fp.append(fp_accuracy(oracle_cfg, space21, a))
        mp.append(quant_accuracy(oracle_cfg, space21, a, sample_policy(space21, a, rng)))
    fp, mp = np.array(fp), np.array(mp)
    i, j = np.triu_indices(len(fp), 1)
    keep = fp[i] != fp[j]
    agree = np.sign(fp[i] - fp[j])[keep] == np.sign(mp[i] - mp[j])[keep]
    assert agree.mean() > 0.8


def test_interaction_makes_allocation_arch_dependent(space21):
    # the best single-slot bit choice under a fixed budget differs between archs
    oc = QUIET
    small = make_arch(space21, [2, 2, 2, 2, 2, 1], 3, [space21.channel_choices_for(i)[0] for i in range(21)])
    big = make_arch(space21, [2, 2, 2, 2, 2, 1], 7, [space21.channel_choices_for(i)[-1] for i in range(21)])
    drop = {}
    for name, a in (("small", small), ("big", big)):
        full = quant_accuracy(oc, space21, a, make_policy(space21, a, 8))
        drop[name] = full - quant_accuracy(oc, space21, a, make_policy(space21, a, 4))
    assert drop["big"] > drop["small"]


def test_fp_dataset_80k_labels_in_range(space21, oracle_cfg):
    recs = gen_fp_dataset(oracle_cfg, space21, 80_000)
    assert len(recs) == 80_000
    acc = np.array([r.accuracy for r in recs])
    assert acc.min() >= oracle_cfg.acc_floor and acc.max() <= oracle_cfg.acc_ceil
    distinct = {r.encoding.tobytes() for r in recs[:10_000]}
    assert len(distinct) >= 9_990
    assert all(r.policy is None for r in recs[:100])


def test_fp_single_record_rederivable(space21, oracle_cfg):
    (rec,) = gen_fp_dataset(oracle_cfg, space21, 1)
    assert rec.to_json() == gen_fp_dataset(oracle_cfg, space21, 3)[0].to_json()
    np.testing.assert_array_equal(rec.encoding, encode_arch(space21, rec.arch))
    assert rec.accuracy == fp_accuracy(oracle_cfg, space21, rec.arch)
    with pytest.raises(ValueError):
        gen_fp_dataset(oracle_cfg, space21, 0)


def test_streams_are_independent(space21, oracle_cfg):
    a = gen_fp_dataset(oracle_cfg, space21, 20, stream=0)
    b = gen_fp_dataset(oracle_cfg, space21, 20, stream=1)
    assert sum(x.arch == y.arch for x, y in zip(a, b)) == 0


def test_mp_recipe_counts(space21, oracle_cfg):
    recs = gen_mp_dataset(oracle_cfg, space21, 2500, 2500, 10)
    assert len(recs) == 5000
    grouped = Counter(r.arch for r in recs[2500:])
    assert len(grouped) == 250
    assert set(grouped.values()) == {10}
    for r in recs[::50]:
        assert validate(space21, r.arch, r.policy) == []
        np.testing.assert_array_equal(r.encoding, encode_joint(space21, r.arch, r.policy))
        assert r.accuracy == quant_accuracy(oracle_cfg, space21, r.arch, r.policy)


def test_mp_single_policy_groups(space21, oracle_cfg):
    recs = gen_mp_dataset(oracle_cfg, space21, 0, 30, 1)
    assert len({r.arch for r in recs}) == 30


def test_mp_divisibility(space21, oracle_cfg):
    with pytest.raises(DivisibilityError):
        gen_mp_dataset(oracle_cfg, space21, 10, 25, 10)


def test_mp_deterministic(space21, oracle_cfg):
    a = gen_mp_dataset(oracle_cfg, space21, 40, 40, 10, stream=2)
    b = gen_mp_dataset(oracle_cfg, space21, 40, 40, 10, stream=2)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_dataset_file_round_trip(tmp_path, space21, oracle_cfg):
    recs = gen_mp_dataset(oracle_cfg, space21, 20, 20, 10)
    path = tmp_path / "mp.jsonl"
    write_dataset(path, recs, space21, oracle_cfg, "mp")
    header, back = read_dataset(path)
    assert header["space_fingerprint"] == space21.fingerprint()
    assert header["kind"] == "mp"
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    X, t = records_to_arrays(back)
    assert X.shape == (40, 792) and t.shape == (40,)
