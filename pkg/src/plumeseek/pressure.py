"""Pressure projection for the collocated velocity field.

The discrete divergence and gradient are central differences closed with
reflecting ghost cells chosen per boundary mode:

* ``closed``: wall-normal velocity is odd across the wall (no penetration),
  tangential velocity and the potential are even (free slip, Neumann).
* ``open``: velocity components are even (zero gradient), the potential is
  odd (anchored to zero half a cell outside the domain).

With these rules the 1-D difference matrices satisfy C_vel = -C_pot^T, so
the composed operator A = div o grad is symmetric negative semi-definite
with a one-dimensional null space (the constant field when closed, the
full checkerboard when open). A is assembled sparse once per
(shape, mode), pinned at one row to remove the null direction, and
LU-factorized; the factorization is cached. Solving this exact operator
drives the measured divergence of the corrected field to rounding level,
which is what the projection contract demands. The ``iterations`` argument
of :func:`plumeseek.fluid_sim.project` is validated by the caller; the
direct solve is already converged, so extra iterations change nothing.

Fields with (numerically) zero divergence are returned unchanged: a
max |div| below 1e-12 x max speed already satisfies the contract, and the
short-circuit keeps the wind-replacement regime (spatially uniform
velocity) free of factorization work.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

BOUNDARY_MODES = ("open", "closed")

# ghost reflection sign per (mode, role); role is "normal" (the component
# differentiated along its own axis), or "pot" (the potential).
_RULES = {
    ("closed", "normal"): -1.0,
    ("closed", "pot"): 1.0,
    ("open", "normal"): 1.0,
    ("open", "pot"): -1.0,
}


def _central_1d(n: int, ghost_sign: float) -> sp.csr_matrix:
    """Central difference matrix (spacing 1) with reflecting ghosts."""
    m = sp.lil_matrix((n, n))
    for i in range(n):
        if i > 0:
            m[i, i - 1] += -0.5
        else:
            m[i, 0] += -0.5 * ghost_sign
        if i < n - 1:
            m[i, i + 1] += 0.5
        else:
            m[i, n - 1] += 0.5 * ghost_sign
    return m.tocsr()


class _Operators:
    def __init__(self, h: int, w: int, mode: str):
        cu = _central_1d(w, _RULES[(mode, "normal")])
        cv = _central_1d(h, _RULES[(mode, "normal")])
        gx1 = _central_1d(w, _RULES[(mode, "pot")])
        gy1 = _central_1d(h, _RULES[(mode, "pot")])
        eye_h = sp.identity(h, format="csr")
        eye_w = sp.identity(w, format="csr")
        self.dx = sp.kron(eye_h, cu, format="csr")
        self.dy = sp.kron(cv, eye_w, format="csr")
        self.gx = sp.kron(eye_h, gx1, format="csr")
        self.gy = sp.kron(gy1, eye_w, format="csr")
        self._lu = None
        self.shape = (h, w)

    @property
    def lu(self):
        # factorized lazily: fields that stay divergence-free (the uniform
        # wind-replacement regime) never pay for it
        if self._lu is None:
            a = (self.dx @ self.gx + self.dy @ self.gy).tolil()
            # Pin one unknown: A is symmetric with a known 1-D null space
            # whose vector is nowhere zero, so fixing phi at cell 0 selects
            # a valid representative without perturbing A phi = rhs on the
            # other rows.
            a[0, :] = 0.0
            a[0, 0] = 1.0
            self._lu = splu(a.tocsc())
        return self._lu

    def divergence(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        d = self.dx @ u.ravel() + self.dy @ v.ravel()
        return d.reshape(self.shape)

    def project(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rhs = self.dx @ u.ravel() + self.dy @ v.ravel()
        speed = max(np.max(np.abs(u)), np.max(np.abs(v)), 1e-300)
        if np.max(np.abs(rhs)) <= 1e-12 * speed:
            return u.copy(), v.copy()
        rhs[0] = 0.0
        phi = self.lu.solve(rhs)
        un = u - (self.gx @ phi).reshape(self.shape)
        vn = v - (self.gy @ phi).reshape(self.shape)
        return un, vn


_CACHE: dict[tuple[int, int, str], _Operators] = {}


def operators(h: int, w: int, mode: str) -> _Operators:
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    key = (h, w, mode)
    ops = _CACHE.get(key)
    if ops is None:
        ops = _Operators(h, w, mode)
        _CACHE[key] = ops
    return ops
