"""Pure NumPy kernel backend.

Implements the two hot loops of the solver: the red-black Gauss-Seidel
sweep for the implicit diffusion system and semi-Lagrangian advection with
clamped bilinear gathers. The compiled backend in ``_core.pyx`` mirrors the
arithmetic of these functions expression-for-expression so that both
backends produce bit-identical fields; any change here must be made there
in the same evaluation order.

Array convention: fields are float64 arrays of shape (height, width) with
row index j along y and column index i along x.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _neighbor_sum(q: np.ndarray, pad: np.ndarray) -> np.ndarray:
    # Zero-gradient ghosts: edge rows/columns replicate themselves.
    pad[1:-1, 1:-1] = q
    pad[0, 1:-1] = q[0]
    pad[-1, 1:-1] = q[-1]
    pad[1:-1, 0] = q[:, 0]
    pad[1:-1, -1] = q[:, -1]
    return ((pad[:-2, 1:-1] + pad[2:, 1:-1]) + pad[1:-1, :-2]) + pad[1:-1, 2:]


def diffuse_rb(q0: np.ndarray, a: float, iterations: int) -> np.ndarray:
    """Solve (1 + 4a) q - a * nbsum(q) = q0 by red-black Gauss-Seidel.

    ``a`` is the dimensionless diffusion number D*dt/h^2; zero-gradient
    boundaries (a missing neighbor contributes the cell itself, which is
    what the edge-replicating pad produces).
    """
    h, w = q0.shape
    q = q0.copy()
    if a == 0.0 or iterations == 0:
        return q
    inv = 1.0 / (1.0 + 4.0 * a)
    pad = np.empty((h + 2, w + 2), dtype=np.float64)
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    parity = (ii + jj) & 1
    red = parity == 0
    black = ~red
    for _ in range(iterations):
        for mask in (red, black):
            new = (q0 + a * _neighbor_sum(q, pad)) * inv
            np.copyto(q, new, where=mask)
    return q


def advect(q: np.ndarray, u: np.ndarray, v: np.ndarray, s: float) -> np.ndarray:
    """Semi-Lagrangian gather: sample q at (i - s*u, j - s*v), clamped.

    ``s`` is dt/cell_size so velocities in m/s become cell displacements.
    Backtraced coordinates are clamped to the cell-center hull, which is a
    zero-gradient extension of the field at the boundary.
    """
    h, w = q.shape
    jj, ii = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    gx = ii - s * u
    gy = jj - s * v
    np.clip(gx, 0.0, w - 1.0, out=gx)
    np.clip(gy, 0.0, h - 1.0, out=gy)
    i0 = np.minimum(np.floor(gx), w - 2.0)
    j0 = np.minimum(np.floor(gy), h - 2.0)
    fx = gx - i0
    fy = gy - j0
    i0 = i0.astype(np.int64)
    j0 = j0.astype(np.int64)
    q00 = q[j0, i0]
    q01 = q[j0, i0 + 1]
    q10 = q[j0 + 1, i0]
    q11 = q[j0 + 1, i0 + 1]
    omfx = 1.0 - fx
    top = q00 * omfx + q01 * fx
    bot = q10 * omfx + q11 * fx
    return top * (1.0 - fy) + bot * fy
