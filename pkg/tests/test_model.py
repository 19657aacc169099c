import numpy as np
import pytest

import model as mdl


def _stacked_identity(n: int) -> np.ndarray:
    return np.vstack([np.eye(n), np.eye(n)])


def test_stacked_identity_is_tight_frame():
    op = mdl.build_analysis_operator(_stacked_identity(3))
    assert (op.N, op.n) == (6, 3)
    assert op.alpha == pytest.approx(2.0)
    assert op.beta == pytest.approx(2.0)
    assert op.s_inverse_norm == pytest.approx(0.5)
    np.testing.assert_allclose(op.s_operator, 2.0 * np.eye(3))


def test_operator_arrays_are_read_only():
    op = mdl.build_analysis_operator(_stacked_identity(2))
    with pytest.raises(ValueError):
        op.phi[0, 0] = 5.0


@pytest.mark.parametrize('shape', [(3, 3), (2, 4)])
def test_not_redundant(shape):
    with pytest.raises(mdl.NotRedundant):
        mdl.build_analysis_operator(np.ones(shape))


def test_zero_column_is_not_a_frame():
    phi = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(mdl.NotAFrame):
        mdl.build_analysis_operator(phi)


def test_sample_measurement_matrix_is_seeded():
    a1 = mdl.sample_measurement_matrix(4, 10, seed=3)
    a2 = mdl.sample_measurement_matrix(4, 10, seed=3)
    np.testing.assert_array_equal(a1.a, a2.a)
    assert a1.a_norm == pytest.approx(np.linalg.norm(a1.a, 2), rel=1e-6)
    assert a1.ata_norm == pytest.approx(a1.a_norm ** 2)
    assert a1.cs_ratio == pytest.approx(0.4)


@pytest.mark.parametrize('m,n', [(5, 5), (6, 4), (0, 3)])
def test_sample_measurement_matrix_bad_shape(m, n):
    with pytest.raises(mdl.BadShape):
        mdl.sample_measurement_matrix(m, n, seed=0)


def test_assumption2_value_closed_form():
    op = mdl.build_analysis_operator(_stacked_identity(3))
    mm = mdl.measurement_model(np.array([[3.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert mdl.assumption2_value(op, mm, rho=0.1) == pytest.approx(0.1 * 3.0 / 2.0, rel=1e-8)


@pytest.mark.parametrize('rho', [0.01, 0.1, 0.7, 3.0])
def test_assumption2_value_is_linear_in_rho(rng, rho):
    op = mdl.build_analysis_operator(rng.standard_normal((12, 5)))
    mm = mdl.sample_measurement_matrix(3, 5, seed=4)
    assert mdl.assumption2_value(op, mm, rho) == pytest.approx(rho * mdl.assumption2_value(op, mm, 1.0), rel=1e-12)
    assert mdl.assumption2_value(op, mm, 2 * rho) == pytest.approx(2 * mdl.assumption2_value(op, mm, rho), rel=1e-12)


def test_sinv_s_residual_small(rng):
    op = mdl.build_analysis_operator(rng.standard_normal((20, 5)))
    assert mdl.sinv_s_residual(op) < 1e-10
    np.testing.assert_allclose(mdl.sinv_s_matrix(op), np.eye(5), atol=1e-10)


def test_frame_ratio_within_bounds(rng):
    op = mdl.build_analysis_operator(rng.standard_normal((15, 4)))
    for _ in range(100):
        r = mdl.frame_ratio(op, rng.standard_normal(4))
        assert op.alpha * (1 - 1e-8) <= r <= op.beta * (1 + 1e-8)


def test_frame_ratio_rejects_zero_vector():
    op = mdl.build_analysis_operator(_stacked_identity(2))
    with pytest.raises(ValueError):
        mdl.frame_ratio(op, np.zeros(2))


def test_check_dimensions():
    op = mdl.build_analysis_operator(_stacked_identity(3))
    mm = mdl.measurement_model(np.ones((1, 4)))
    with pytest.raises(mdl.DimensionMismatch):
        mdl.check_dimensions(op, mm)


def test_matrix_container_layout():
    mat = np.array([[1.0, -2.5], [0.0, 4.0], [3.25, 1e-300]])
    payload = mdl.encode_matrix(mat)
    assert payload[:16] == (3).to_bytes(8, 'little') + (2).to_bytes(8, 'little')
    assert len(payload) == 16 + 8 * 6
    np.testing.assert_array_equal(mdl.decode_matrix(payload), mat)


def test_matrix_file_roundtrip(tmp_path, rng):
    mat = rng.standard_normal((4, 3))
    path = tmp_path / 'phi.bin'
    mdl.write_matrix(path, mat)
    np.testing.assert_array_equal(mdl.read_matrix(path), mat)


@pytest.mark.parametrize('cut', [3, 20, -1])
def test_matrix_container_truncated(cut):
    payload = mdl.encode_matrix(np.ones((2, 2)))
    with pytest.raises(mdl.ContainerError):
        mdl.decode_matrix(payload[:cut])


def test_matrix_container_oversized():
    payload = mdl.encode_matrix(np.ones((2, 2))) + b'\x00'
    with pytest.raises(mdl.ContainerError):
        mdl.decode_matrix(payload)


def test_frame_bounds_of_rank_one_bump():
    # top eigenvector of S orthogonal to the dense cosine vector cos(k) + 1.5
    c = np.cos(np.arange(1, 4, dtype=np.float64)) + 1.5
    w = np.array([c[1], -c[0], 0.0])
    w /= np.linalg.norm(w)
    phi = np.vstack([np.eye(3) + 2 * np.outer(w, w), np.eye(3)])
    op = mdl.build_analysis_operator(phi)
    assert op.beta == pytest.approx(10.0, rel=1e-8)
    assert op.alpha == pytest.approx(2.0, rel=1e-8)


@pytest.mark.parametrize('seed', range(5))
def test_frame_bound_chain(seed):
    rng = np.random.default_rng(seed)
    op = mdl.build_analysis_operator(rng.standard_normal((18, 6)))
    s_norm = np.linalg.norm(op.s_operator, 2)
    s_inv_norm = np.linalg.norm(np.linalg.inv(op.s_operator), 2)
    tol = 1e-8
    assert op.alpha * (1 - tol) <= s_norm <= op.beta * (1 + tol)
    assert (1 - tol) / op.beta <= s_inv_norm <= (1 + tol) / op.alpha
    assert op.s_inverse_norm == pytest.approx(s_inv_norm, rel=1e-8)
    assert np.linalg.norm(op.phi, 2) <= np.sqrt(op.beta) * (1 + tol)


def test_sinv_s_residual_is_largest_entry(monkeypatch):
    op = mdl.build_analysis_operator(_stacked_identity(3))
    off = np.zeros((3, 3))
    off[0, 1] = off[2, 0] = 1e-3
    monkeypatch.setattr(mdl.linalg, 'invert', lambda m: 0.5 * np.eye(3) + off)
    # S = 2I, so S^-1 S - I = 2 * off
    assert mdl.sinv_s_residual(op) == pytest.approx(2e-3, rel=1e-12)
