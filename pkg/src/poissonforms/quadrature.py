"""Deterministic quadrature rules used by the intensity-measure integrals.

Everything here is standard numerical infrastructure: tensor-product
Gauss-Legendre on boxes (with node doubling until a relative tolerance is
met), Gauss-Hermite for Gaussian-weighted integrals over the full space, and
a spectrally accurate product rule on the unit sphere.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "gauss_legendre",
    "tensor_rule",
    "gauss_hermite_gaussian",
    "sphere_rule",
    "adaptive_box_integral",
]


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights rescaled from [-1, 1] to [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def tensor_rule(
    bounds: Sequence[tuple[float, float]], n_per_axis: int
) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss-Legendre rule on an axis-aligned box.

    Returns nodes of shape (N, d) and weights of shape (N,).
    """
    axes = [gauss_legendre(a, b, n_per_axis) for (a, b) in bounds]
    grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    w = axes[0][1]
    for _, wi in axes[1:]:
        w = np.multiply.outer(w, wi)
    return nodes, w.ravel()


def gauss_hermite_gaussian(
    dim: int, n_per_axis: int, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating f against exp(-|x|^2 / (2 scale^2)) on R^dim.

    Built from the probabilists' Hermite rule (weight e^{-u^2/2}), rescaled so
    that sum_i w_i f(x_i) ~ int f(x) exp(-|x|^2/(2 scale^2)) dx.
    """
    u, w = np.polynomial.hermite_e.hermegauss(n_per_axis)
    x1 = scale * u
    w1 = scale * w
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    ww = w1
    for _ in range(dim - 1):
        ww = np.multiply.outer(ww, w1)
    return nodes, ww.ravel()


def sphere_rule(n_cos: int = 48, n_phi: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta) times a
    periodic trapezoid rule in the azimuth. Weights sum to 4*pi.
    """
    t, wt = gauss_legendre(-1.0, 1.0, n_cos)
    phi = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    wphi = np.full(n_phi, 2.0 * np.pi / n_phi)
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    st = np.sqrt(np.clip(1.0 - tt**2, 0.0, None))
    pts = np.stack(
        [st * np.cos(pp), st * np.sin(pp), tt], axis=-1
    ).reshape(-1, 3)
    w = np.multiply.outer(wt, wphi).ravel()
    return pts, w


def adaptive_box_integral(
    f: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[tuple[float, float]],
    rtol: float = 1e-8,
    n_start: int = 64,
    max_doublings: int = 5,
) -> float:
    """Integrate a vectorized integrand over a box, doubling the per-axis
    Gauss-Legendre order until the relative change drops below ``rtol``.
    """
    n = n_start
    nodes, w = tensor_rule(bounds, n)
    val = float(w @ np.asarray(f(nodes), dtype=float))
    for _ in range(max_doublings):
        n *= 2
        nodes, w = tensor_rule(bounds, n)
        new = float(w @ np.asarray(f(nodes), dtype=float))
        denom = max(abs(new), 1e-300)
        if abs(new - val) / denom < rtol:
            return new
        val = new
    return val
