"""RBM ground-state search as a QUBO over the stacked variable vector x = (v, h).

Sign convention: qubo_energy returns the RBM energy E itself, i.e. the
minimization target.  The linear part holds the biases (b then c); each
weight w_ij becomes the quadratic term between visible variable j and
hidden variable m + i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dbnsat.rbm import RbmParams, ShapeError


@dataclass(frozen=True)
class QuboLayout:
    """Variables 0..m-1 are visible, m..m+n-1 are hidden."""

    num_visible: int
    num_hidden: int


@dataclass
class QuboProblem:
    num_vars: int
    linear: np.ndarray
    quadratic: list  # (i, j, coeff) with i < j
    layout: QuboLayout

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64)
        if self.linear.shape != (self.num_vars,):
            raise ShapeError("linear coefficient vector has wrong length")
        seen = set()
        for i, j, _ in self.quadratic:
            if not (0 <= i < j < self.num_vars):
                raise ValueError(f"bad quadratic index pair ({i}, {j})")
            if (i, j) in seen:
                raise ValueError(f"duplicate quadratic pair ({i}, {j})")
            seen.add((i, j))


def rbm_to_qubo(params: RbmParams) -> QuboProblem:
    """Build the QUBO whose energy equals the RBM energy on every state.

    Zero weights produce no quadratic term, preserving sparsity.
    """
    m, n = params.num_visible, params.num_hidden
    linear = np.concatenate([params.visible_bias, params.hidden_bias])
    quadratic = []
    hi, vj = np.nonzero(params.weights)
    for i, j in zip(hi.tolist(), vj.tolist()):
        quadratic.append((j, m + i, float(params.weights[i, j])))
    return QuboProblem(m + n, linear, quadratic, QuboLayout(m, n))


def _check_assignment(q: QuboProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (q.num_vars,):
        raise ShapeError(f"assignment length {x.shape} != {q.num_vars}")
    return x


def qubo_energy(q: QuboProblem, x) -> float:
    """E(x) = -(linear . x + sum of quadratic terms); lower is more probable."""
    x = _check_assignment(q, x)
    total = float(q.linear @ x)
    for i, j, c in q.quadratic:
        total += c * x[i] * x[j]
    return -total


def split_assignment(q: QuboProblem, x):
    """Split x = (v, h) back into the two RBM layers."""
    x = _check_assignment(q, x)
    m = q.layout.num_visible
    return x[:m].copy(), x[m:].copy()
