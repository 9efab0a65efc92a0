import json

import numpy as np
import pytest

import fedsilo


def small_config(seed=3):
    cfg = json.loads(fedsilo.default_config_json())
    cfg["seed"] = seed
    cfg["model"]["hidden"] = [8]
    cfg["train"]["epochs"] = 2
    cfg["train"]["rounds"] = 2
    cfg["data"]["synthetic"]["clients"] = 2
    cfg["data"]["synthetic"]["dim"] = 4
    cfg["data"]["synthetic"]["classes"] = 3
    cfg["data"]["synthetic"]["sizes"] = [80, 60]
    cfg["data"]["synthetic"]["eval_size"] = 40
    cfg["data"]["synthetic"]["eval_splits"] = [
        {"name": "S1", "client": 0},
        {"name": "S2", "client": 1},
    ]
    return cfg


def test_import_and_version():
    assert fedsilo.__version__


def test_fedavg_matches_numpy():
    rng = np.random.default_rng(0)
    w = rng.normal(size=32)
    locals_ = [rng.normal(size=32) for _ in range(4)]
    p = [0.4, 0.3, 0.2, 0.1]

    merged = fedsilo.fedavg_update(w, locals_, p, 1.0)
    expected = sum(pi * li for pi, li in zip(p, locals_))
    np.testing.assert_allclose(merged, expected, atol=1e-12)

    eta = 0.9
    merged = fedsilo.fedavg_update(w, locals_, p, eta)
    expected = w - eta * sum(pi * (w - li) for pi, li in zip(p, locals_))
    np.testing.assert_allclose(merged, expected, atol=1e-12)


def test_derive_weights_values():
    assert fedsilo.derive_weights("equal", [10] * 5) == pytest.approx([0.2] * 5)
    prop = fedsilo.derive_weights("proportional", [420, 450, 100, 140, 40])
    assert prop == pytest.approx([n / 1150 for n in [420, 450, 100, 140, 40]])
    pref = fedsilo.derive_weights("preference", [10] * 5, favored_client=4, favored_weight=0.4)
    assert pref == pytest.approx([0.15, 0.15, 0.15, 0.15, 0.4])


def test_anneal_schedule():
    assert fedsilo.anneal(0.1, 5, 10) == pytest.approx(0.1)
    assert fedsilo.anneal(0.1, 11, 10) == pytest.approx(0.1 / np.sqrt(2.0))


def test_compose_check_exact_inverse_is_zero():
    rng = np.random.default_rng(1)
    g = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    c = rng.normal(size=3)
    a = np.linalg.inv(g)
    b = -a @ c
    assert fedsilo.compose_check(a, b, g, c) == pytest.approx(0.0, abs=1e-10)
    assert fedsilo.compose_check(np.eye(3), np.zeros(3), 2.0 * np.eye(3), np.zeros(3)) == (
        pytest.approx(1.0)
    )


def test_run_experiment_is_deterministic():
    cfg = json.dumps(small_config())
    first = fedsilo.run_experiment(cfg)
    second = fedsilo.run_experiment(cfg)
    np.testing.assert_array_equal(first["final_params"], second["final_params"])
    assert first["final_eval_loss"] == second["final_eval_loss"]
    assert first["eval_splits"] == ["S1", "S2"]
    # 1 initial record + epochs * rounds
    assert len(first["reports"]) == 1 + 2 * 2
    assert first["total_bytes"] > 0


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config(seed=9)
    out = tmp_path / "run"
    result = fedsilo.run_experiment(json.dumps(cfg), str(out))
    info = fedsilo.checkpoint_info(str(out / "checkpoint.flam"))
    names = [b["name"] for b in info["blocks"]]
    assert "layer0.W" in names
    np.testing.assert_array_equal(info["params"], result["final_params"])


def test_verify_passes():
    assert fedsilo.verify()
