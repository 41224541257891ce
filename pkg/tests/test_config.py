import pytest

from swiptbench.config import load_config, parse_config, preset_text, serialize_config
from swiptbench.env import dbm_to_mw
from swiptbench.errors import ParseError, ValidationError

MINIMAL = """\
[experiment]
name = mini
controllers = pgrl
seeds = 3

[task:A]
domain = 1
n_secondary = 1
"""


def test_table2_preset_structure():
    spec = load_config(preset="table2")
    assert [ds.domain.domain_id for ds in spec.domain_sequence] == [1, 2]
    assert [len(ds.tasks) for ds in spec.domain_sequence] == [4, 4]
    assert [ds.domain.n_secondary for ds in spec.domain_sequence] == [2, 4]
    assert spec.seeds == (0, 1, 2, 3, 4)
    d2t2 = spec.domain_sequence[1].tasks[1][1]
    assert d2t2.comm_scale_zeta[0] == 0.9
    assert d2t2.arrival_rate_lambda_a == 25
    assert d2t2.noise_N0 == pytest.approx(1e-12)


def test_table1_preset_defaults():
    spec = load_config(preset="table1")
    assert len(spec.task_list()) == 1
    cfg = spec.task_list()[0][3]
    assert cfg.bandwidth_W == 5e6
    assert cfg.p0_max == 300


def test_minimal_config_uses_defaults():
    spec = parse_config(MINIMAL)
    assert spec.name == "mini"
    assert spec.controllers == ("pgrl",)
    assert spec.seeds == (3,)
    assert spec.iterations == spec.pg.iterations


def test_round_trip_reproduces_spec():
    for text in (MINIMAL, preset_text("table2"), preset_text("table1")):
        spec = parse_config(text)
        again = parse_config(serialize_config(spec))
        assert again == spec
        assert serialize_config(again) == serialize_config(spec)


def test_noise_is_read_in_dbm():
    spec = parse_config(MINIMAL.replace("n_secondary = 1", "n_secondary = 1\nnoise_N0 = -90"))
    assert spec.task_list()[0][3].noise_N0 == pytest.approx(dbm_to_mw(-90.0))


def test_per_node_list_values():
    spec = parse_config(MINIMAL.replace("n_secondary = 1", "n_secondary = 2\ncomm_scale_zeta = 0.1, 0.2, 0.3"))
    assert spec.task_list()[0][3].comm_scale_zeta == (0.1, 0.2, 0.3)
    with pytest.raises(ValidationError):
        parse_config(MINIMAL.replace("n_secondary = 1", "n_secondary = 2\ncomm_scale_zeta = 0.1, 0.2"))


def test_unknown_key_reports_line():
    text = MINIMAL + "bogus_key = 4\n"
    with pytest.raises(ParseError) as exc:
        parse_config(text)
    assert exc.value.line == 9


def test_unknown_section_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_config(MINIMAL + "\n[extra]\nx = 1\n")
    assert exc.value.line == 10


def test_bad_value_names_field():
    with pytest.raises(ParseError) as exc:
        parse_config(MINIMAL.replace("n_secondary = 1", "n_secondary = two"))
    assert "n_secondary" in str(exc.value)
    assert exc.value.line == 8
    with pytest.raises(ValidationError) as vexc:
        parse_config(MINIMAL.replace("n_secondary = 1", "conv_eff_lambda = 2.0"))
    assert vexc.value.field == "conv_eff_lambda"


def test_no_tasks_is_invalid():
    with pytest.raises(ValidationError):
        parse_config("[experiment]\nname = empty\n")


def test_interleaved_domains_rejected():
    text = MINIMAL + "\n[task:B]\ndomain = 2\n\n[task:C]\ndomain = 1\nn_secondary = 1\n"
    with pytest.raises(ValidationError):
        parse_config(text)


def test_fixed_eta_syntax():
    spec = parse_config(MINIMAL + "\n[lifelong]\neta_a_mode = fixed(0.3)\n")
    assert spec.lifelong.eta_a_mode == "fixed"
    assert spec.lifelong.eta_a_value == 0.3


def test_key_before_section_is_parse_error():
    with pytest.raises(ParseError) as exc:
        parse_config("name = x\n" + MINIMAL)
    assert exc.value.line == 1
