import pytest

import config
from config import CONFIG, check_configuration, configuration_status, validate_environment
from models import ElementConfig, RunConfig
from setup_wizard import create_env_template


@pytest.fixture
def clean_config(monkeypatch):
    for key, value in {
        "VEM_THREADS": 1, "VEM_SOLVER": "auto", "VEM_SOLVER_RTOL": 1e-10, "VEM_SOLVER_MAXITER": 100,
        "VEM_DENSE_LIMIT": 2000, "VEM_QUAD_EXTRA": 4, "VEM_SEED": 0, "VEM_LOG_LEVEL": "INFO",
    }.items():
        monkeypatch.setitem(CONFIG, key, value)
    return CONFIG


def test_defaults_are_valid(clean_config):
    assert validate_environment() == ([], [])
    assert check_configuration()


@pytest.mark.parametrize("key,value,message", [
    ("VEM_THREADS", "many", "VEM_THREADS must be an integer"),
    ("VEM_THREADS", 0, "at least 1"),
    ("VEM_SOLVER", "gmres", "VEM_SOLVER must be one of"),
    ("VEM_SOLVER_RTOL", -1.0, "positive number"),
    ("VEM_QUAD_EXTRA", -2, "nonnegative"),
])
def test_configuration_errors(clean_config, key, value, message):
    clean_config[key] = value
    errors, _ = validate_environment()
    assert any(message in e for e in errors)
    assert not check_configuration()


def test_loose_tolerance_is_a_warning(clean_config):
    clean_config["VEM_SOLVER_RTOL"] = 1e-3
    errors, warnings = validate_environment()
    assert errors == []
    assert any("loose" in w for w in warnings)


def test_integer_parsing(monkeypatch):
    monkeypatch.setenv("VEM_THREADS", "3")
    assert config._int_env("VEM_THREADS", 1) == 3
    monkeypatch.setenv("VEM_THREADS", "three")
    assert config._int_env("VEM_THREADS", 1) == "three"
    monkeypatch.delenv("VEM_SOLVER_RTOL", raising=False)
    assert config._float_env("VEM_SOLVER_RTOL", 1e-10) == 1e-10


def test_env_template(tmp_path):
    path = tmp_path / ".env.template"
    create_env_template(str(path))
    text = path.read_text()
    for key in ("VEM_THREADS", "VEM_SOLVER", "VEM_DENSE_LIMIT", "VEM_OUTPUT_DIR", "VEM_LOG_FILE"):
        assert f"{key}=" in text


def test_run_config_validates_element():
    with pytest.raises(ValueError):
        RunConfig(n=2, m=2, k=1)
    with pytest.raises(ValueError, match="integer"):
        ElementConfig(2, 1.0, 1)
    assert RunConfig(n=3, m=1, k=2, mesh_kind="cube_grid").element_config.label == "n=3 m=1 k=2"


def test_configuration_status_marks_offending_keys(clean_config, capsys):
    clean_config["VEM_SOLVER"] = "gmres"
    clean_config["VEM_SOLVER_RTOL"] = 1e-3
    status = {key: state for key, _, state in configuration_status()}
    assert status["VEM_SOLVER"] == "error"
    assert status["VEM_SOLVER_RTOL"] == "warning"
    assert status["VEM_DENSE_LIMIT"] == "ok"
    assert not check_configuration()
    out = capsys.readouterr().out
    assert "config error: VEM_SOLVER must be one of" in out
    assert "config warning: VEM_SOLVER_RTOL" in out
