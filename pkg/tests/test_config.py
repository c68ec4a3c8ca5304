import pytest

from ctdg.config import ConfigError, RunConfig, dump_config, parse_config


def test_defaults_and_round_trip():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.train.lambda_edge == 5.0 and cfg.schedule.alpha == 5.0 and cfg.model.rrwp_K == 10


def test_sections_and_overrides():
    text = """
    [model]
    hidden_dim = 32   # inline comment
    n_heads = 4
    [train]
    betas = 0.8, 0.99
    [schedule]
    family = constant
    """
    cfg = parse_config("\n".join(line.strip() for line in text.splitlines()), ["train.lr=0.01", "data.kind=sbm"])
    assert cfg.model.hidden_dim == 32
    assert cfg.train.betas == (0.8, 0.99) and cfg.train.lr == 0.01
    assert cfg.schedule.family == "constant" and cfg.data.kind == "sbm"
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize(
    "text, overrides",
    [
        ("[nope]\nx = 1\n", []),
        ("[model]\nwidth = 3\n", []),
        ("[model]\nhidden_dim = abc\n", []),
        ("[schedule]\nalpha = -1\n", []),
        ("", ["model.hidden_dim"]),
        ("", ["hidden_dim=3"]),
        ("no section header\n", []),
    ],
)
def test_config_errors(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides)
