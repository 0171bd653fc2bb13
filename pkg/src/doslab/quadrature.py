"""Composite Gauss-Legendre rules on intervals and tensor-product boxes."""

from __future__ import annotations

import functools
import itertools

import numpy as np


@functools.lru_cache(maxsize=64)
def _leggauss(n_nodes: int):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(a: float, b: float, n_nodes: int = 16, n_panels: int = 1):
    """Nodes and weights for [a, b], Gauss-Legendre of order n_nodes per panel."""
    if b <= a:
        raise ValueError(f"empty interval [{a}, {b}]")
    if n_nodes < 1 or n_panels < 1:
        raise ValueError("need at least one node and one panel")
    base_x, base_w = _leggauss(n_nodes)
    edges = np.linspace(a, b, n_panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    x = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    w = (half[:, None] * base_w[None, :]).ravel()
    return x, w


def tensor_rule(rules):
    """Tensor product of 1-d rules [(x_i, w_i), ...] -> (points (M, d), weights (M,))."""
    axes = list(rules)
    if not axes:
        raise ValueError("need at least one axis")
    pts = np.array(list(itertools.product(*[x for x, _ in axes])), dtype=float)
    wgrids = np.meshgrid(*[w for _, w in axes], indexing="ij")
    w = np.ones_like(wgrids[0])
    for g in wgrids:
        w = w * g
    return pts, w.ravel()


def integrate(f, a: float, b: float, n_nodes: int = 16, n_panels: int = 1):
    """Integral of a vectorized scalar function over [a, b]."""
    x, w = panel_rule(a, b, n_nodes, n_panels)
    return np.sum(np.asarray(f(x)) * w, axis=-1)
