import math

import numpy as np
import pytest

import xcnn


def test_tensor_gradient_matches_analytic():
    a = xcnn.Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), requires_grad=True)
    b = xcnn.Tensor(np.array([[0.5, -1.0, 2.0], [1.5, 0.0, -2.0]]), requires_grad=True)
    loss = xcnn.sum(a * b)
    loss.backward()
    np.testing.assert_array_equal(a.grad, b.numpy())
    np.testing.assert_array_equal(b.grad, a.numpy())


def test_shape_mismatch_raises():
    a = xcnn.Tensor(np.ones((2, 3)))
    b = xcnn.Tensor(np.ones((3, 2)))
    with pytest.raises(xcnn.ShapeError):
        a + b


def test_parameter_audits():
    rows = [r["count"] for r in xcnn.custom_cnn_audit()["per_layer"] if r["count"]]
    assert rows == [168, 12, 660, 24, 3488, 64, 178951509, 16386]
    assert xcnn.head_audit(2048, 256, 3)["trainable"] == 525315
    assert xcnn.custom_cnn_shapes()[12] == [32768]


def test_loss_and_class_weights():
    logits = xcnn.Tensor(np.log(np.array([[0.7, 0.2, 0.1]])))
    loss = xcnn.weighted_cross_entropy(logits, [1], [1.0, 2.0, 1.0]).item()
    assert loss == pytest.approx(1.6094, abs=1e-4)
    w = xcnn.class_weights([416, 120, 561], 1197)
    assert [round(x, 4) for x in w] == [0.9591, 3.3250, 0.7112]


def test_auc_is_exact_ratio():
    _, auc, num, den = xcnn.roc_curve_auc([0.8, 0.4, 0.6, 0.2], [True, True, False, False])
    assert (auc, num, den) == (0.75, 6, 8)


def test_kernel_shap_efficiency():
    def game(z):
        return 2.0 * (z[0] + z[1]) + 3.0 * z[0] * z[1] - 1.5 * z[2]

    r = xcnn.kernel_shap(game, 4, budget=64)
    assert r["mode"] == "exhaustive"
    assert sum(r["phi"]) == pytest.approx(r["full_value"] - r["base_value"], abs=1e-12)
    assert r["phi"][0] == pytest.approx(r["phi"][1], abs=1e-12)
    assert abs(r["phi"][3]) < 1e-12
    exact = xcnn.exact_shapley(game, 4)
    assert all(math.isclose(a, b, abs_tol=1e-9) for a, b in zip(r["phi"], exact))


def test_report_on_empty_dir_reports_missing_artifacts(tmp_path):
    assert xcnn.run("report", out=str(tmp_path)) == 6
    assert xcnn.run("train", config=str(tmp_path / "absent.cfg"), out=str(tmp_path)) == 2
