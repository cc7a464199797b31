import pytest
from hypothesis import given, strategies as st

from optistate.config import SimConfig, apply_kv, known_keys, read_kv, to_kv, write_kv
from optistate.errors import ConfigError
from optistate.profiles import SMALL, get_profile


def test_roundtrip_through_a_file(tmp_path):
    cfg = apply_kv(SimConfig(), {"seed": "42", "terrain.kind": "rough", "noise.imu_acc": "0.5",
                                 "render_depth": "false"})
    write_kv(tmp_path / "c.cfg", to_kv(cfg))
    back = apply_kv(SimConfig(), read_kv(tmp_path / "c.cfg"))
    assert back == cfg
    assert back.terrain.kind == "rough" and back.seed == 42 and back.render_depth is False


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_survive_formatting(v):
    cfg = apply_kv(SimConfig(), {"nominal_height": repr(v)})
    assert apply_kv(SimConfig(), dict((k, str(x) if not isinstance(x, float) else repr(x))
                                      for k, x in to_kv(cfg))).nominal_height == v


def test_unparseable_value_names_the_key():
    with pytest.raises(ConfigError, match="gait.duty"):
        apply_kv(SimConfig(), {"gait.duty": "half"})
    with pytest.raises(ConfigError, match="terrain"):
        apply_kv(SimConfig(), {"terrain.kind": "lava"})


def test_profile_overrides():
    p = apply_kv(SMALL, {"gru.hidden_size": "16", "vit_train.betas": "0.8,0.9"})
    assert p.gru.hidden_size == 16 and p.vit_train.betas == (0.8, 0.9)
    assert "gru_train.schedule" in known_keys(SMALL)


def test_unknown_profile_is_a_config_error():
    assert get_profile("small") is SMALL
    with pytest.raises(ConfigError):
        get_profile("huge")
