import numpy as np
import pytest

from actconv import gradcheck
from actconv.gradcheck import GradCase, central_diff, check_case, check_layer, forward_diff, rel_err


def test_central_diff_polynomial():
    theta = np.array([3.0])
    assert central_diff(lambda t: t[0] ** 2, theta, (0,), 1e-5) == pytest.approx(6.0, abs=1e-9)
    assert theta[0] == 3.0


def test_central_diff_kink_is_symmetric():
    assert central_diff(lambda t: abs(t[0]), np.array([0.0]), (0,)) == 0.0


def test_forward_diff_is_one_sided():
    assert forward_diff(lambda t: abs(t[0]), np.array([0.0]), (0,)) == pytest.approx(1.0)
    assert forward_diff(lambda t: t[0] ** 2, np.array([3.0]), (0,), 1e-4) == pytest.approx(6.0, abs=1e-7)


def test_central_diff_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        central_diff(lambda t: np.inf if t[0] > 0 else 0.0, np.array([0.0]), (0,))


def test_bilerp_cross_check():
    rep = check_layer(gradcheck.interp_case, seeds=range(20), tol=1e-6)
    assert rep.passed, rep.line()


def test_conv_oracle_self_test():
    rep = check_layer(gradcheck.conv_case, seeds=range(3), tol=1e-7)
    assert rep.passed and rep.max_rel_err < 1e-7, rep.line()


def test_rel_err_floor():
    assert rel_err(0.0, 0.0) == 0.0
    assert rel_err(1e-12, 0.0) == pytest.approx(1e-4)


def corrupted_case(rng):
    case = gradcheck.acu_case(rng, K=5, origin_fixed=True)
    bad = {k: v.copy() for k, v in case.grads.items()}
    bad["positions"][2, 1] += 0.5 * (abs(bad["positions"][2, 1]) + 1.0)
    return GradCase(case.params, case.loss, bad, case.coords, case.position_blocks)


def test_corrupted_backward_is_caught():
    rep = check_layer(corrupted_case, seeds=[0])
    assert not rep.passed
    assert rep.worst_coordinate == ("positions", (2, 1))
    assert "FAIL" in rep.line() and "positions[2,1]" in rep.line()


def test_lattice_positions_skipped_without_one_sided():
    rng = np.random.default_rng(0)
    theta = np.array([1.0, 0.5])
    case = GradCase({"p": theta}, lambda: float(np.sum(np.abs(theta - 1.0))), {"p": np.array([9.0, -1.0])},
                    position_blocks=frozenset({"p"}))
    rep = check_case(case)
    assert rep.n_checked == 1 and rep.passed
    one = check_case(case, one_sided=True)
    assert one.n_checked == 2 and not one.passed


def test_network_suite_width_quarter():
    (rep,) = gradcheck.run_suite("network", seeds=[0])
    assert rep.passed and rep.max_rel_err < 1e-3, rep.line()


def test_unknown_suite():
    with pytest.raises(ValueError):
        gradcheck.run_suite("pooling")
