import json

import pytest

from evtrade.config import ConfigError, LabelConfig, PolicyConfig, RunConfig


class TestRunConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = RunConfig()
        cfg.write(tmp_path / "c.json")
        assert RunConfig.load(tmp_path / "c.json") == cfg

    def test_partial_sections(self):
        cfg = RunConfig.from_dict({"backtest": {"holding": 5}, "labels": {"tau": 0.02}})
        assert cfg.backtest.holding == 5 and cfg.backtest.cost == 0.0015 and cfg.labels.tau == 0.02

    def test_nested_schedule(self):
        cfg = RunConfig.from_dict({"policy": {"schedule": {"iterations": 3}, "env_seed": 4}})
        assert cfg.policy.schedule.iterations == 3 and cfg.policy.env_seed == 4

    @pytest.mark.parametrize("doc, key", [
        ({"backtest": {"holdng": 2}}, "holdng"),
        ({"window": {"bogus": 1}}, "bogus"),
        ({"policy": {"schedule": {"lr": 1}}}, "lr"),
        ({"extra": {}}, "extra"),
        ({"backtest": {"holding": 0}}, "holding"),
        ({"labels": {"tau": -1}}, "tau"),
    ])
    def test_rejects_and_names_key(self, doc, key):
        with pytest.raises(ConfigError, match=key):
            RunConfig.from_dict(doc)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{\n  \"backtest\": ,\n}")
        with pytest.raises(ConfigError, match="line 2"):
            RunConfig.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "nope.json")

    def test_override_ignores_none(self):
        cfg = RunConfig()
        assert cfg.override("backtest", holding=None) is cfg
        assert cfg.override("backtest", holding=3, cost=None).backtest.holding == 3

    def test_written_json_sorted(self, tmp_path):
        RunConfig().write(tmp_path / "c.json")
        doc = json.loads((tmp_path / "c.json").read_text())
        assert list(doc) == sorted(doc)


@pytest.mark.parametrize("cls, kw", [(LabelConfig, dict(tau=0.0)), (LabelConfig, dict(neutral_band=-1)),
                                     (PolicyConfig, dict(n_train=0)), (PolicyConfig, dict(flip_prob=0.7))])
def test_section_validation(cls, kw):
    with pytest.raises(ValueError):
        cls(**kw)
