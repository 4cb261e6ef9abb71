import pytest

from fiba.config import ConfigError, format_config, parse_bool, parse_config


def test_parse_basic():
    text = "# run\nalpha = 0.15\nrho-p=0.1   # trailing comment\n\nptr = true\n"
    assert parse_config(text) == {"alpha": "0.15", "rho_p": "0.1", "ptr": "true"}


@pytest.mark.parametrize("text", ["alpha 0.1", "= 3", "a = 1\na = 2"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_format_round_trip():
    values = {"alpha": 0.2, "ptr": True, "values": [0.05, 0.1]}
    assert parse_config(format_config(values)) == {"alpha": "0.2", "ptr": "true", "values": "0.05,0.1"}


def test_parse_bool():
    assert parse_bool("Yes") and not parse_bool("0")
    with pytest.raises(ValueError):
        parse_bool("maybe")
