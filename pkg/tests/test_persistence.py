import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdnet import persistence
from fdnet.model import FDNet, ModelConfig
from fdnet.persistence import FormatError


def test_known_layout():
    blob = persistence.dumps({"w": np.array([1.5, -2.0])})
    assert blob[:4] == b"FDNK"
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:10] == (1).to_bytes(2, "little") and blob[10:11] == b"w"
    assert blob[11] == 1 and blob[12:16] == (2).to_bytes(4, "little")
    np.testing.assert_array_equal(np.frombuffer(blob[16:], "<f8"), [1.5, -2.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1, max_size=12), st.lists(st.integers(0, 4), max_size=3)),
                max_size=5, unique_by=lambda t: t[0]),
       st.integers(0, 2**31 - 1))
def test_round_trip_is_exact(specs, seed):
    rng = np.random.default_rng(seed)
    state = {name: rng.standard_normal(shape) for name, shape in specs}
    back = persistence.loads(persistence.dumps(state))
    assert back.keys() == state.keys()
    for k in state:
        assert back[k].shape == state[k].shape
        np.testing.assert_array_equal(back[k], state[k])


def test_model_state_round_trip(tmp_path):
    model = FDNet(ModelConfig(main_size=32, channels=(8, 8, 8, 8), width=8, key_dim=8))
    path = tmp_path / "m.fdnk"
    persistence.save(path, model.state_dict())
    other = FDNet(ModelConfig(main_size=32, channels=(8, 8, 8, 8), width=8, key_dim=8, seed=5))
    other.load_state_dict(persistence.load(path))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(other.state_dict()[k], v)
    assert persistence.dumps(other.state_dict()) == path.read_bytes()


@pytest.mark.parametrize("blob", [b"", b"NOPE\x01\x00\x00\x00", b"FDNK\x02\x00\x00\x00"])
def test_bad_header(blob):
    with pytest.raises(FormatError):
        persistence.loads(blob)


def test_truncated_payload():
    blob = persistence.dumps({"a": np.arange(6.0).reshape(2, 3)})
    for cut in (9, 12, len(blob) - 1):
        with pytest.raises(FormatError):
            persistence.loads(blob[:cut])


def test_load_state_rejects_mismatch():
    model = FDNet(ModelConfig(main_size=32, channels=(8, 8, 8, 8), width=8, key_dim=8))
    state = model.state_dict()
    name = next(iter(state))
    with pytest.raises((KeyError, ValueError)):
        model.load_state_dict({k: v for k, v in state.items() if k != name})
    bad = dict(state)
    bad[name] = np.zeros(tuple(s + 1 for s in state[name].shape))
    with pytest.raises(ValueError):
        model.load_state_dict(bad)
