import math

import numpy as np
import pytest

import rla


def test_rla_resnet164_parameter_total():
    stats = rla.count_parameters({"model": "rla-resnet164", "k": 12})
    assert stats["total_params"] == sum(layer["params"] for layer in stats["layers"])
    millions, tolerance = rla.golden_target({"model": "rla-resnet164", "k": 12})
    assert abs(stats["total_params"] / 1e6 - millions) <= tolerance


def test_macs_quadruple_with_resolution():
    cfg = {"model": "resnet110", "blocks": 2}
    small = rla.count_macs(cfg, 32)
    large = rla.count_macs(cfg, 64)
    assert small["total_params"] == large["total_params"]
    conv = {l["name"]: l["macs"] for l in small["layers"] if l["kind"] == "conv"}
    for layer in large["layers"]:
        if layer["kind"] == "conv":
            assert layer["macs"] == 4 * conv[layer["name"]]


def test_forward_shapes_and_finiteness():
    images = np.zeros((2, 3, 32, 32), dtype=np.float32)
    logits = rla.forward({"model": "rla-resnet164", "blocks": 1, "k": 4}, images)
    assert logits.shape == (2, 10)
    assert np.all(np.isfinite(logits))
    np.testing.assert_array_equal(logits[0], logits[1])


def test_shared_lag_norm_entries():
    norms = rla.shared_norms({"model": "shared-lag-densenet"})
    assert [len(stage) for stage in norms] == [15, 15, 15]


def test_arma_and_recurrence():
    coef = rla.arma_ar_coefficients(0.5, 0.3, 3)
    assert coef == pytest.approx([0.2, 0.06, 0.018], abs=1e-15)
    assert rla.arma_impulse_response(0.0, 0.3, 3) == pytest.approx([1.0, -0.3, 0.0, 0.0])
    sim = rla.recurrence_expand(0.7, -0.4, 0.2, 0.9, 15)
    closed = rla.recurrence_closed_form(0.7, -0.4, 0.2, 0.9, 15)
    assert np.max(np.abs(np.array(sim) - np.array(closed))) <= 1e-12


def test_fit_exponential():
    a, b, r2 = rla.fit_exponential([2 * math.exp(-0.4 * l) for l in range(1, 16)])
    assert b == pytest.approx(0.4, abs=1e-9)
    assert a == pytest.approx(2.0, abs=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_partition_suite_passes():
    passed, text = rla.run_suite("partition")
    assert passed, text


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        rla.count_parameters({"model": "no-such-model"})
    with pytest.raises(ValueError):
        rla.arma_ar_coefficients(0.5, 1.5, 3)
    with pytest.raises(ValueError):
        rla.fit_exponential([1.0, -1.0, 2.0])
    with pytest.raises(RuntimeError):
        rla.forward({"model": "resnet110", "blocks": 1}, np.zeros((1, 1, 32, 32), dtype=np.float32))
