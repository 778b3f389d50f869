import pytest

from contea.config import RunConfig
from contea.errors import ConfigError

from conftest import SYNTHETIC_CONF


def test_defaults():
    c = RunConfig()
    assert (c.dim, c.alpha, c.beta, c.m, c.gamma, c.lam, c.proxy_count, c.csls_k) == (
        100, 0.1, 0.1, 500, 15.0, 0.5, 64, 10
    )
    assert (c.batch_size, c.lr, c.finetune_epochs, c.eval_every, c.patience) == (512, 1e-3, 30, 5, 5)


def test_overrides_and_lambda_alias():
    c = RunConfig().with_overrides(["lambda=0.25", "dim=16", "metric=cosine"])
    assert (c.lam, c.dim, c.metric) == (0.25, 16, "cosine")
    assert RunConfig().with_overrides({"m": "7"}).m == 7


@pytest.mark.parametrize("item", ["dim=abc", "nope=1", "dim", "mode=other", "dim=0", "gamma=0"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides([item])


def test_file_round_trip(tmp_path):
    c = RunConfig(dim=12, lam=0.3, mode="retrain")
    path = tmp_path / "c.conf"
    path.write_text("# comment\n" + c.to_text(), encoding="utf-8")
    assert RunConfig.from_file(path) == c
    assert RunConfig.from_file(SYNTHETIC_CONF).lr == 0.005
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "missing.conf")
