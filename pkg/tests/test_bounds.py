import dataclasses
import math

import numpy as np
import pytest

import bounds as bd
import model as mdl


def _inputs(**overrides):
    base = dict(alpha=2.0, beta=3.0, rho=0.1, lam=1e-4, a_norm=1.0, ata_norm=1.0, y_frob=5.0,
                b_in=1.0, b_out=1.0, n=4, N=8, s=100, L=3)
    base.update(overrides)
    return bd.BoundInputs(**base)


def test_q_stated_example():
    inp = _inputs(alpha=2.0, rho=0.1, ata_norm=1.0)
    assert bd.compute_q(inp) == pytest.approx(0.1 / 1.9)
    assert bd.compute_q(inp) == pytest.approx(0.052631, abs=1e-6)


def test_q_certified_dominates_stated():
    inp = _inputs(alpha=2.0, rho=0.1, ata_norm=1.0, q_rule="certified")
    assert bd.q_certified(inp) == pytest.approx(5.0)
    assert bd.compute_q(inp) == pytest.approx(5.0)
    assert bd.q_certified(inp) >= bd.q_stated(inp)


def test_q_vanishes_with_rho():
    assert bd.compute_q(_inputs(rho=1e-9)) < 1e-8


def test_q_undefined():
    with pytest.raises(bd.QUndefined):
        bd.compute_q(_inputs(alpha=1.0, beta=1.0, rho=1.0, ata_norm=1.0))
    with pytest.raises(bd.QUndefined):
        bd.compute_kl(_inputs(alpha=1.0, beta=1.0, rho=1.0, ata_norm=1.0))


@pytest.mark.parametrize('field,value', [('alpha', 0.0), ('beta', 1.0), ('delta', 1.0), ('b_out', 0.0),
                                         ('L', 0), ('q_rule', 'loose')])
def test_inputs_validated(field, value):
    with pytest.raises(ValueError):
        _inputs(**{field: value})


def test_kl_depth_one():
    inp = _inputs(L=1)
    q = bd.compute_q(inp)
    g = bd.compute_g(inp)
    assert bd.compute_kl(inp) == pytest.approx(q * g * inp.a_norm * inp.y_frob, rel=1e-13)


def _direct_kl(inp):
    q = bd.compute_q(inp)
    g = 3.0 * (1.0 + 2.0 * inp.beta * q * inp.rho)
    total = 0.0
    for k in range(1, inp.L + 1):
        d_prev = sum(g ** i for i in range(k - 1))
        e_k = inp.a_norm * inp.y_frob * (q * g + 36.0 * q * q * inp.rho * inp.beta * (1.0 + inp.beta * q * inp.rho) * d_prev)
        total += g ** (inp.L - k) * e_k
    return total


@pytest.mark.parametrize('q_rule', ['stated', 'certified'])
@pytest.mark.parametrize('depth', range(1, 11))
def test_kl_direct_sum_matches_recursion(depth, q_rule):
    inp = _inputs(L=depth, q_rule=q_rule)
    assert bd.compute_kl(inp) == pytest.approx(_direct_kl(inp), rel=1e-12)
    assert bd.kl_recursion(inp) == pytest.approx(_direct_kl(inp), rel=1e-12)


def test_kl_step_identity():
    inp = _inputs(L=4)
    g = bd.compute_g(inp)
    nxt = inp.with_depth(5)
    assert bd.compute_kl(nxt) == pytest.approx(g * bd.compute_kl(inp) + math.exp(bd.log_e(inp, 5)), rel=1e-12)


def test_log_d_matches_geometric_sum():
    g = 3.7
    for k in range(1, 8):
        assert math.exp(bd.log_d(k, g)) == pytest.approx(sum(g ** i for i in range(k)), rel=1e-13)
    assert bd.log_d(0, g) == -np.inf


@pytest.mark.parametrize('q_rule', ['stated', 'certified'])
def test_sigma_forms_agree(q_rule):
    for depth in range(1, 11):
        inp = _inputs(L=depth, q_rule=q_rule)
        assert bd.compute_sigma_l(inp) == pytest.approx(bd.sigma_l_expanded(inp), rel=1e-12)


def test_sigma_exceeds_kl_term():
    inp = _inputs(L=5)
    q = bd.compute_q(inp)
    assert bd.compute_sigma_l(inp) > 2.0 * q * inp.rho * math.sqrt(inp.beta) * bd.compute_kl(inp)


def test_sigma_monotone_in_depth():
    values = [bd.compute_sigma_l(_inputs(L=depth)) for depth in range(1, 11)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_output_bound_base_and_step():
    inp = _inputs()
    q = bd.compute_q(inp)
    g = bd.compute_g(inp)
    first = bd.output_bound(inp, 1)
    assert first == pytest.approx(3.0 * inp.a_norm * inp.y_frob * q * math.sqrt(inp.beta), rel=1e-13)
    for k in range(1, 6):
        assert bd.output_bound(inp, k + 1) == pytest.approx(g * bd.output_bound(inp, k) + first, rel=1e-12)
    with pytest.raises(ValueError):
        bd.output_bound(inp, 0)


def test_covering_log_monotone_and_vanishing():
    inp = _inputs()
    values = [bd.covering_log(inp, eps) for eps in (1e-3, 2e-3, 4e-3, 1.0)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert bd.covering_log(inp, 1e300) == pytest.approx(0.0, abs=1e-12)
    sigma = bd.compute_sigma_l(inp)
    expected = inp.N * inp.n * math.log(1.0 + 2.0 * math.sqrt(inp.beta) * sigma / 0.5)
    assert bd.covering_log(inp, 0.5) == pytest.approx(expected, rel=1e-12)


def test_covering_ball_formula():
    assert bd.covering_log_ball(8, 4, t=2.0, eps=0.5) == pytest.approx(32 * math.log(9.0))
    with pytest.raises(ValueError):
        bd.covering_log_ball(8, 4, t=2.0, eps=0.0)


def test_rademacher_hand_evaluation():
    inp = _inputs(b_in=0.5, b_out=2.0, s=400)
    sigma = bd.compute_sigma_l(inp)
    log_factor = 1.0 + math.log(1.0 + 4.0 * math.sqrt(inp.beta) * sigma / (math.sqrt(inp.s) * inp.b_out))
    expected = 8.0 * 2.5 * 2.0 * math.sqrt(32 / 400) * math.sqrt(log_factor)
    assert bd.rademacher_estimate(inp) == pytest.approx(expected, rel=1e-12)


def test_dudley_integral_below_closed_form():
    for depth in (1, 3, 6):
        inp = _inputs(L=depth)
        dudley = bd.dudley_integral(inp)
        assert 0.0 < dudley <= bd.rademacher_estimate(inp) * (1 + 1e-8)


def test_theorem4_at_least_train_and_delta_monotone():
    inp = _inputs()
    assert bd.theorem4_bound(inp, 0.3) >= 0.3
    loose = bd.theorem4_bound(dataclasses.replace(inp, delta=0.01), 0.0)
    tight = bd.theorem4_bound(dataclasses.replace(inp, delta=0.99), 0.0)
    assert tight < loose


def test_theorem5_collapses_theorem4_when_radii_equal():
    inp = _inputs(b_in=1.5, b_out=1.5)
    assert bd.theorem5_bound(inp, 0.1) == pytest.approx(bd.theorem4_bound(inp, 0.1), rel=1e-12)


def test_theorem5_rejects_mismatched_radii():
    with pytest.raises(bd.BInBOutMismatch):
        bd.theorem5_bound(_inputs(b_in=1.0, b_out=2.0), 0.0)


def test_theorem5_scaling():
    inp = _inputs()
    by_n = [bd.theorem5_bound(dataclasses.replace(inp, N=big_n), 0.0) for big_n in (8, 16, 32)]
    by_l = [bd.theorem5_bound(inp.with_depth(depth), 0.0) for depth in (1, 2, 4, 8)]
    by_s = [bd.theorem5_bound(dataclasses.replace(inp, s=s), 0.0) for s in (100, 200, 400)]
    assert by_n[0] < by_n[1] < by_n[2]
    assert by_l[0] < by_l[1] < by_l[2] < by_l[3]
    assert by_s[0] > by_s[1] > by_s[2]


@pytest.mark.parametrize('field', ['beta', 'y_frob'])
def test_bounds_monotone_in_factor_two_sweeps(field):
    base = _inputs()
    values = []
    for factor in (1.0, 2.0, 4.0):
        inp = dataclasses.replace(base, **{field: getattr(base, field) * factor})
        values.append((bd.compute_sigma_l(inp), bd.output_bound(inp, 3), bd.theorem5_bound(inp, 0.0)))
    for lo, hi in zip(values, values[1:]):
        assert all(b >= a for a, b in zip(lo, hi))


def test_large_configuration_stays_finite():
    inp = _inputs(alpha=1.0, beta=1e3, rho=0.1, ata_norm=4.0, a_norm=2.0, y_frob=3e3,
                  n=784, N=54880, s=70000, L=40, q_rule="certified")
    assert math.isfinite(bd.log_sigma_l(inp))
    assert math.isfinite(bd.theorem5_bound(inp, 0.0))
    assert math.isfinite(bd.rademacher_estimate(inp))


def test_invertibility_lemma_closed_forms():
    eye = np.eye(3)
    assert bd.invertibility_bound(eye, 0.5 * eye) == pytest.approx(2.0)
    assert bd.invertibility_bound(eye, 2.0 * eye) is None
    assert bd.inverse_difference_bound(2.0 * eye, eye) == pytest.approx(0.5)


def test_compute_report_fields():
    inp = _inputs(b_in=1.0, b_out=1.0, q_rule="certified")
    report = bd.compute_report(inp, train_mse=0.2)
    data = report.to_dict()
    assert "inputs" not in data
    for key in ("q", "g", "k_l", "sigma_l", "output_bound", "rademacher_estimate",
                "theorem4_excess", "theorem5_excess"):
        assert math.isfinite(data[key]) and data[key] >= 0
    assert report.q == report.q_certified
    assert report.theorem5_excess == pytest.approx(report.theorem4_excess, rel=1e-12)
    assert report.covering_log_at(0.1) == pytest.approx(bd.covering_log(inp, 0.1))


def test_compute_report_without_theorem5():
    report = bd.compute_report(_inputs(b_in=0.5, b_out=1.0))
    assert report.theorem5_excess is None
    assert report.theorem4_excess > 0


def test_bound_inputs_from_model(rng):
    op = mdl.build_analysis_operator(rng.standard_normal((12, 4)))
    mm = mdl.sample_measurement_matrix(2, 4, seed=1)
    ys = rng.standard_normal((2, 9))
    measured = bd.bound_inputs_from(op, mm, ys, rho=0.1, lam=1e-3, b_in=2.0, b_out=3.0, depth=4)
    assert measured.s == 9
    assert measured.y_frob == pytest.approx(np.linalg.norm(ys))
    assert (measured.n, measured.N, measured.L) == (4, 12, 4)
    from_radius = bd.bound_inputs_from(op, mm, ys, rho=0.1, lam=1e-3, b_in=2.0, b_out=3.0, depth=4,
                                       y_source="b_in")
    assert from_radius.y_frob == pytest.approx(3.0 * 2.0)
