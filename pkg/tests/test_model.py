import json

import numpy as np
import pytest

from avgmdp.errors import InvalidModel, InvalidPolicy
from avgmdp.instances import regret_discontinuity, two_cycle
from avgmdp.model import (
    MdpModel,
    Policy,
    load_model,
    measure_from_dict,
    measure_to_dict,
    model_from_dict,
    model_to_dict,
)


def test_pair_indexing_is_contiguous_by_state():
    m = regret_discontinuity()
    assert m.n_states == 2 and m.n_pairs == 4
    assert list(m.pairs_of(1)) == [2, 3]
    assert m.pair_labels() == ["1,star", "1,sect", "2,dagger", "2,ddagger"]
    assert m.pair(1, 1) == 3
    with pytest.raises(IndexError):
        m.pair(0, 2)


@pytest.mark.parametrize(
    "kernel, reward, msg",
    [
        ([[0.5, 0.6]], [0.5], "sum to 1"),
        ([[-0.1, 1.1]], [0.5], "nonnegative"),
        ([[0.5, 0.5]], [1.5], r"\[0, 1\]"),
    ],
)
def test_invalid_models_rejected(kernel, reward, msg):
    with pytest.raises(InvalidModel, match=msg):
        MdpModel(actions=(("a",), ("b",)), kernel=kernel + [[1.0, 0.0]], reward=reward + [0.5], known=[True, True])


def test_state_without_action_rejected():
    with pytest.raises(InvalidModel):
        MdpModel(actions=((),), kernel=np.zeros((0, 1)), reward=[], known=[])


def test_arrays_are_read_only():
    m = two_cycle()
    with pytest.raises(ValueError):
        m.reward[0] = 0.1


def test_json_round_trip_and_renormalization():
    m = regret_discontinuity()
    d = model_to_dict(m)
    d["kernel"]["1,sect"] = ["1.0000000004", "0"]
    back = model_from_dict(json.loads(json.dumps(d)))
    assert np.allclose(back.kernel, m.kernel, atol=1e-12)
    assert back.pair_labels() == m.pair_labels()
    d["kernel"]["1,sect"] = [1.001, 0]
    with pytest.raises(InvalidModel, match="sums to"):
        model_from_dict(d)


def test_free_kernel_flag_round_trip():
    m = regret_discontinuity(known=False)
    back = model_from_dict(model_to_dict(m))
    assert not back.known.any()
    d = model_to_dict(m)
    d["kernel_space"]["1,star"] = "fuzzy"
    with pytest.raises(InvalidModel):
        model_from_dict(d)


def test_missing_field_is_invalid_model():
    with pytest.raises(InvalidModel):
        model_from_dict({"states": ["1"]})


def test_load_model_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(InvalidModel):
        load_model(path)


def test_measure_dict_round_trip():
    m = regret_discontinuity()
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(measure_from_dict(m, measure_to_dict(m, mu)), mu)
    with pytest.raises(InvalidModel):
        measure_from_dict(m, {"9,x": 1.0})


def test_policy_constructors_and_checks():
    m = regret_discontinuity()
    pol = Policy.from_actions(m, [1, 0])
    assert pol.is_deterministic() and not pol.fully_randomized()
    assert list(pol.choice(m)) == [1, 2]
    uni = Policy.uniform(m)
    assert uni.fully_randomized()
    with pytest.raises(InvalidPolicy):
        Policy.from_probs(m, [0.5, 0.4, 0.5, 0.5])
    with pytest.raises(InvalidPolicy):
        Policy.deterministic(m, [2, 3])
    p, r = uni.chain(m)
    assert np.allclose(p.sum(axis=1), 1) and np.allclose(r, [0.3, 0.5])
