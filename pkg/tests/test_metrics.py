import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgpi.dynamics import Aircraft, Vehicle
from dgpi.hjb import HamiltonianEval
from dgpi.metrics import (CSV_HEADER, MetricsRow, mean_abs_hamiltonian, metrics_csv,
                          policy_error, read_metrics_csv, value_error)
from dgpi.networks import LinearPolicy, MlpSpec, PolicyNetwork, QuadraticValue, ValueNetwork
from dgpi.oracles import LqrProblem, solve_care

m = Aircraft()
SOL = solve_care(LqrProblem(m.A, m.B, m.Q, m.R))


def opt_policy(x):
    return -x @ SOL.K.T


def opt_value(x):
    return np.einsum("bi,ij,bj->b", x, SOL.P, x)


@pytest.fixture
def test_set(rng):
    return m.sample_states(500, rng)


def test_exact_solution_has_zero_error(test_set):
    assert policy_error(LinearPolicy(SOL.K), opt_policy, test_set) == (0.0, 0.0)
    assert value_error(QuadraticValue(SOL.P), opt_value, test_set) == pytest.approx((0, 0), abs=1e-15)


@given(st.floats(-2, 2))
def test_constant_offset_scales_by_range(delta):
    X = m.sample_states(200, np.random.default_rng(1))
    pi = opt_policy(X)
    signed, absolute = policy_error(lambda x: opt_policy(x) + delta, opt_policy, X)
    assert signed == pytest.approx(delta / (pi.max() - pi.min()), abs=1e-12)
    assert absolute == pytest.approx(abs(delta) / (pi.max() - pi.min()), abs=1e-12)


def test_value_offset(test_set):
    V = opt_value(test_set)
    signed, _ = value_error(lambda x: opt_value(x) + 0.5, opt_value, test_set)
    assert signed == pytest.approx(0.5 / (V.max() - V.min()))
    assert opt_value(np.array([[1.0, 0.0, 0.0]]))[0] == pytest.approx(1.4245, abs=1e-4)


def test_random_net_error_matches_direct_formula(test_set, rng):
    spec = MlpSpec([3, 8, 1], "linear")
    net = PolicyNetwork(spec, rng.normal(size=spec.n_params))
    got = policy_error(net, opt_policy, test_set)
    diffs = []
    star = [float(opt_policy(x[None])[0, 0]) for x in test_set]
    span = max(star) - min(star)
    for x, s in zip(test_set, star):
        diffs.append((float(net(x)[0]) - s) / span)
    assert got[0] == pytest.approx(sum(diffs) / len(diffs), rel=1e-10)
    assert got[1] == pytest.approx(sum(map(abs, diffs)) / len(diffs), rel=1e-10)


def test_errors_invariant_to_shuffling(test_set, rng):
    spec = MlpSpec([3, 8, 1], "softplus")
    v = ValueNetwork(spec, rng.normal(size=spec.n_params))
    a = value_error(v, opt_value, test_set)
    b = value_error(v, opt_value, rng.permutation(test_set))
    assert a == pytest.approx(b, rel=1e-12)


def test_degenerate_normaliser_and_empty_set():
    with pytest.raises(ValueError):
        policy_error(opt_policy, opt_policy, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        value_error(opt_value, opt_value, np.zeros((0, 3)))


def test_mean_abs_hamiltonian_examples(test_set):
    h = HamiltonianEval(m, QuadraticValue(SOL.P), LinearPolicy(SOL.K))
    assert mean_abs_hamiltonian(h, test_set) < 1e-6
    # V = 0 leaves only the running cost
    zero_v = QuadraticValue(np.zeros((3, 3)))
    h0 = HamiltonianEval(m, zero_v, LinearPolicy(SOL.K))
    ell = m.utility(test_set, opt_policy(test_set))
    assert mean_abs_hamiltonian(h0, test_set) == pytest.approx(np.mean(ell), rel=1e-12)
    x = test_set[0]
    assert mean_abs_hamiltonian(h0, x) == pytest.approx(abs(float(ell[0])), rel=1e-12)


def test_csv_header_and_round_trip():
    rows = [MetricsRow(0, "warmup", 1.5, 0.25, 3.0, 4.0, None, None, None, None, 12.0, None),
            MetricsRow(10, "pi", 0.1 + 0.2, -1e-17, 1e-300, -2.0, 0.1, 0.2, -0.3, 0.4, None, 5.5)]
    text = metrics_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert text.splitlines()[1] == "0,warmup,1.5,0.25,3.0,4.0,,,,,12.0,"
    assert read_metrics_csv(text) == rows


def test_vehicle_rows_carry_no_oracle_columns():
    row = MetricsRow(5, "pi", 1.0, 1.0, 1.0, 1.0, C=3.0)
    assert row.as_csv_fields()[6:10] == ["", "", "", ""]
