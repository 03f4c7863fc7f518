import numpy as np
import pytest

from dbnsat.qubo import QuboLayout, QuboProblem, qubo_energy, rbm_to_qubo, split_assignment
from dbnsat.rbm import RbmParams, ShapeError, energy


def all_bits(n):
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(float)


def test_zero_params_give_empty_quadratic():
    p = RbmParams(np.zeros((2, 3)), np.zeros(3), np.zeros(2))
    q = rbm_to_qubo(p)
    assert q.quadratic == []
    assert np.allclose(q.linear, 0)
    assert q.num_vars == 5


def test_hand_built_scalar_instance():
    p = RbmParams([[2.0]], [1.0], [-1.0])
    q = rbm_to_qubo(p)
    assert list(q.linear) == [1.0, -1.0]
    assert q.quadratic == [(0, 1, 2.0)]
    assert qubo_energy(q, [1.0, 1.0]) == -2.0
    assert qubo_energy(q, [0.0, 0.0]) == 0.0


def test_energy_equivalence_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        p = RbmParams(rng.normal(size=(n, m)), rng.normal(size=m), rng.normal(size=n))
        q = rbm_to_qubo(p)
        for x in all_bits(m + n):
            v, h = split_assignment(q, x)
            assert qubo_energy(q, x) == pytest.approx(energy(p, v, h), abs=1e-12)


def test_sparsity_preserved():
    w = np.array([[0.0, 1.0], [0.0, 0.0]])
    q = rbm_to_qubo(RbmParams(w, np.zeros(2), np.zeros(2)))
    assert q.quadratic == [(1, 2, 1.0)]


def test_split_layout():
    q = QuboProblem(3, np.zeros(3), [], QuboLayout(2, 1))
    v, h = split_assignment(q, np.array([1.0, 0.0, 1.0]))
    assert list(v) == [1.0, 0.0]
    assert list(h) == [1.0]
    assert list(np.concatenate([v, h])) == [1.0, 0.0, 1.0]


def test_shape_errors():
    q = QuboProblem(2, np.zeros(2), [], QuboLayout(1, 1))
    with pytest.raises(ShapeError):
        qubo_energy(q, [1.0])
    with pytest.raises(ShapeError):
        split_assignment(q, [1.0, 0.0, 1.0])


def test_duplicate_pairs_rejected():
    with pytest.raises(ValueError):
        QuboProblem(2, np.zeros(2), [(0, 1, 1.0), (0, 1, 2.0)], QuboLayout(1, 1))
    with pytest.raises(ValueError):
        QuboProblem(2, np.zeros(2), [(1, 0, 1.0)], QuboLayout(1, 1))
