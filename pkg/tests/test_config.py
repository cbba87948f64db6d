import pytest

from nbvgrasp.config import (
    DEFAULTS,
    ConfigError,
    bench_config,
    dataset_config,
    dump_config,
    load_config,
    parse_seeds,
    policy_config,
    train_config,
)


def test_parse_seeds():
    assert parse_seeds("3,5,10-12") == (3, 5, 10, 11, 12)
    assert parse_seeds(" 7 ") == (7,)
    assert parse_seeds("4-4") == (4,)
    with pytest.raises(ValueError):
        parse_seeds("a-b")


def test_defaults_build_configs():
    cp = load_config()
    assert policy_config(cp).q_max == 0.95 and policy_config(cp).t_max == 8
    assert len(bench_config(cp).seeds) == 100
    assert train_config(cp).epochs == 30
    assert dataset_config(cp).grasps_per_pair == 80


def test_file_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[policy]\nt_max = 3\n[bench]\nseeds = 1-4\npolicies = ace-nbv\n")
    cp = load_config(p)
    assert policy_config(cp).t_max == 3
    b = bench_config(cp, jobs=2)
    assert b.seeds == (1, 2, 3, 4) and b.policies == ("ace-nbv",) and b.jobs == 2


@pytest.mark.parametrize("text", ["[policy]\nbogus = 1\n", "[nope]\nx = 1\n"])
def test_unknown_keys_rejected(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError, match="unknown"):
        load_config(p)


def test_empty_value_rejected(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[policy]\nq_max =\n")
    with pytest.raises(ConfigError, match="missing"):
        load_config(p)


def test_bad_values():
    with pytest.raises(ConfigError):
        policy_config(load_config(overrides={"policy": {"t_max": "x"}}))
    with pytest.raises(ConfigError):
        policy_config(load_config(overrides={"policy": {"q_max": "2"}}))
    with pytest.raises(ConfigError):
        bench_config(load_config(overrides={"bench": {"policies": "teleport"}}))
    with pytest.raises(ConfigError):
        dataset_config(load_config(overrides={"dataset": {"kinds": "sideways"}}))
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_dump_reloads(tmp_path):
    cp = load_config(overrides={"policy": {"t_max": "5"}})
    text = dump_config(cp)
    p = tmp_path / "d.ini"
    p.write_text(text)
    again = load_config(p)
    assert dump_config(again) == text
    assert set(again.sections()) == set(DEFAULTS)
