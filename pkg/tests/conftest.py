"""Shared fixtures: a linear block-structured system and dense oracles."""

import numpy as np
import pytest

from ptcsmooth.core import (BlockLayout, BlockVector, FirstOrderBlocks,
                            MassMatrix, NonlinearSystem)
from ptcsmooth.lines import LineSet


class LinearChainSystem(NonlinearSystem):
    """R(w) = A w - rhs with A block-tridiagonal along a 1D chain.

    The exact first-order blocks ARE the Jacobian, so with a full-chain line
    the line preconditioner equals A and smoother/Newton behavior has closed
    forms.
    """

    def __init__(self, diag, off_up, off_lo, rhs, measures=None):
        self.diag = np.asarray(diag, dtype=float)
        self.off_up = np.asarray(off_up, dtype=float)  # dR_i/dw_{i+1}
        self.off_lo = np.asarray(off_lo, dtype=float)  # dR_{i+1}/dw_i
        n, b, _ = self.diag.shape
        self._layout = BlockLayout(n, b)
        self.rhs = np.asarray(rhs, dtype=float)
        if measures is None:
            measures = np.ones(n)
        self._mass = MassMatrix(self._layout, measures)
        self.A = self.dense()

    @property
    def layout(self):
        return self._layout

    def dense(self):
        n, b = self._layout.n_cells, self._layout.block_size
        A = np.zeros((n * b, n * b))
        for i in range(n):
            A[i * b:(i + 1) * b, i * b:(i + 1) * b] = self.diag[i]
        for i in range(n - 1):
            A[i * b:(i + 1) * b, (i + 1) * b:(i + 2) * b] = self.off_up[i]
            A[(i + 1) * b:(i + 2) * b, i * b:(i + 1) * b] = self.off_lo[i]
        return A

    def solution(self):
        return BlockVector(self._layout, np.linalg.solve(self.A, self.rhs))

    def residual(self, w):
        return BlockVector(self._layout, self.A @ w.values - self.rhs)

    def jacobian_vector(self, w, v):
        return BlockVector(self._layout, self.A @ v.values)

    def first_order_blocks(self, w):
        n = self._layout.n_cells
        edges = np.column_stack((np.arange(n - 1), np.arange(1, n)))
        return FirstOrderBlocks(self._layout, self.diag.copy(), edges,
                                self.off_up.copy(), self.off_lo.copy())

    def mass(self):
        return self._mass

    def explicit_dt(self, w):
        return np.ones(self._layout.n_cells)

    def initial_state(self):
        return BlockVector.zeros(self._layout)


def diffusion_chain(n=8, b=1, seed=None):
    """Scalar (or random-block) diagonally dominant chain system."""
    if b == 1:
        diag = np.full((n, 1, 1), 2.0)
        off = np.full((n - 1, 1, 1), -1.0)
        rng = np.random.default_rng(0 if seed is None else seed)
        rhs = rng.standard_normal(n)
        return LinearChainSystem(diag, off, off.copy(), rhs)
    rng = np.random.default_rng(0 if seed is None else seed)
    off_up = 0.3 * rng.standard_normal((n - 1, b, b))
    off_lo = 0.3 * rng.standard_normal((n - 1, b, b))
    diag = rng.standard_normal((n, b, b))
    for i in range(n):
        # Force block-diagonal dominance.
        diag[i] += (2.0 * b) * np.eye(b)
    rhs = rng.standard_normal(n * b)
    return LinearChainSystem(diag, off_up, off_lo, rhs)


def full_chain_lines(n):
    return LineSet(n, [list(range(n))])


def dense_from_lines(line_set, diag_blocks, off_blocks):
    """Assemble the line-structured operator densely (test oracle)."""
    n, b, _ = diag_blocks.shape
    A = np.zeros((n * b, n * b))
    for i in range(n):
        A[i * b:(i + 1) * b, i * b:(i + 1) * b] = diag_blocks[i]
    for line in line_set.lines:
        for p, q in zip(line[:-1], line[1:]):
            if (p, q) in off_blocks:
                A[p * b:(p + 1) * b, q * b:(q + 1) * b] = off_blocks[(p, q)]
            if (q, p) in off_blocks:
                A[q * b:(q + 1) * b, p * b:(p + 1) * b] = off_blocks[(q, p)]
    return A


@pytest.fixture
def scalar_chain():
    return diffusion_chain(n=8, b=1)
