import pytest
from pydantic import ValidationError

from gridgate.config import DEFAULT_LAMBDAS, Settings, load_settings


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("GRIDGATE_SETTINGS", raising=False)
    monkeypatch.delenv("GRIDGATE_THREADS", raising=False)


def test_packaged_settings_match_defaults():
    assert load_settings() == Settings()


def test_defaults():
    settings = Settings()
    assert settings.dt_hours == pytest.approx(1 / 6)
    assert settings.hosting.lambdas == DEFAULT_LAMBDAS
    assert settings.economics.to_params().c_cap == 1500.0
    assert settings.rules.to_rule_config().kappa == 1.5


def test_file_overrides(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text("[grid]\nslack_voltage_pu = 1.03\n\n[profiles]\ndt_minutes = 15\n")
    settings = load_settings(path)
    assert settings.grid.slack_voltage_pu == 1.03
    assert settings.dt_hours == 0.25
    assert settings.powerflow.tolerance == 1e-8


def test_environment_path(tmp_path, monkeypatch):
    path = tmp_path / "env.toml"
    path.write_text("[runtime]\nthreads = 2\n")
    monkeypatch.setenv("GRIDGATE_SETTINGS", str(path))
    assert load_settings().runtime.threads == 2


def test_environment_threads(monkeypatch):
    monkeypatch.setenv("GRIDGATE_THREADS", "4")
    assert load_settings().runtime.threads == 4


def test_missing_explicit_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_settings(tmp_path / "nowhere.toml")


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "typo.toml"
    path.write_text("[grid]\nslak_voltage = 1.0\n")
    with pytest.raises(ValidationError):
        load_settings(path)


def test_with_overrides_validates():
    settings = Settings().with_overrides(rules={"kappa": 2.0}, profiles=None)
    assert settings.rules.kappa == 2.0
    assert settings.rules.length_floor_m == 25.0
    with pytest.raises(ValidationError):
        Settings().with_overrides(rules={"kappa": 0.5})
    with pytest.raises(ValidationError):
        Settings().with_overrides(hosting={"lambdas": [0.0, -1.0]})


def test_settings_are_frozen():
    with pytest.raises(ValidationError):
        Settings().grid.s_base_kva = 1.0
