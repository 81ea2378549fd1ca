"""Effective spin Hamiltonian of a Kramers doublet coupled to a nuclear spin.

All Hamiltonians are returned in frequency units (MHz), fields are in mT.

Basis convention: electron ``m_S`` is the outer factor and runs
``+S ... -S``; the nuclear ``m_I`` is the inner factor and runs
``+I ... -I``.  For S = 1/2, I = 7/2 the basis index is
``k = i_S * 8 + i_I``.

The hyperfine tensor enters as ``sum_ij A_ij S_i I_j``.  Off-diagonal entries
are stored symmetrically, so an ``A_xz`` coupling contributes
``A_xz (S_x I_z + S_z I_x)``.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ._jacobi import MAX_SWEEPS, OFF_DIAGONAL_TOL, jacobi_eigh
from .constants import DEFAULT_CONSTANTS
from .errors import (
    ContractViolationError,
    ConvergenceError,
    InvalidDimensionError,
    InvalidParameterError,
    UnsupportedGeometryError,
)

UP = "up"
DOWN = "down"

HERMITIAN_RTOL = 1e-12
GN_VANADIUM_51 = 1.47106


class SpinOperators(NamedTuple):
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray


def angular_momentum(dim):
    """Return (Jx, Jy, Jz) for spin j = (dim - 1)/2 in descending-m order."""
    j = (dim - 1) / 2.0
    m = j - np.arange(dim)
    jplus = np.zeros((dim, dim), dtype=complex)
    for i in range(1, dim):
        # J+ |m_i> = sqrt(j(j+1) - m_i(m_i+1)) |m_i + 1>, and m_i + 1 sits at i - 1
        jplus[i - 1, i] = np.sqrt(j * (j + 1) - m[i] * (m[i] + 1))
    jminus = jplus.conj().T
    jx = (jplus + jminus) / 2
    jy = (jplus - jminus) / 2j
    jz = np.diag(m).astype(complex)
    return jx, jy, jz


@lru_cache(maxsize=None)
def build_spin_operators(S_dim=2, I_dim=8):
    """Electron and nuclear spin operators on the product space.

    The electron factor comes first in the tensor product.  Returned arrays
    are read-only and shared between calls.
    """
    S_dim, I_dim = int(S_dim), int(I_dim)
    if S_dim < 2 or I_dim < 2:
        raise InvalidDimensionError(f"spin dimensions must be >= 2, got ({S_dim}, {I_dim})")
    return _product_operators(S_dim, I_dim)


@lru_cache(maxsize=None)
def _product_operators(S_dim, I_dim):
    # I_dim == 1 is allowed internally (bare electron spin)
    s_ops = angular_momentum(S_dim)
    i_ops = angular_momentum(I_dim) if I_dim > 1 else (np.zeros((1, 1)),) * 3
    eye_s, eye_i = np.eye(S_dim), np.eye(I_dim)
    ops = [np.kron(s, eye_i) for s in s_ops] + [np.kron(eye_s, i) for i in i_ops]
    for op in ops:
        op.flags.writeable = False
    return SpinOperators(*ops)


@lru_cache(maxsize=None)
def _coupling_basis(S_dim, I_dim):
    s_ops = angular_momentum(S_dim)
    i_ops = angular_momentum(I_dim)
    out = np.empty((3, 3, S_dim * I_dim, S_dim * I_dim), dtype=complex)
    for a in range(3):
        for b in range(3):
            out[a, b] = np.kron(s_ops[a], i_ops[b])
    out.flags.writeable = False
    return out


def _as_tensor(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(3)
    elif arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise InvalidParameterError(f"{name} must be a 3x3 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ManifoldParams:
    """Spin parameters of one electronic manifold.

    ``g_tensor`` and ``A_tensor`` accept a 3x3 matrix, a diagonal 3-vector or
    a scalar (isotropic).  ``A_tensor`` is in MHz.
    """

    g_tensor: np.ndarray
    A_tensor: np.ndarray
    g_N: float = GN_VANADIUM_51
    S_dim: int = 2
    I_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "g_tensor", _as_tensor(self.g_tensor, "g_tensor"))
        object.__setattr__(self, "A_tensor", _as_tensor(self.A_tensor, "A_tensor"))
        if not np.isfinite(self.g_N):
            raise InvalidParameterError("g_N must be finite")
        if self.S_dim < 2 or self.I_dim < 2:
            raise InvalidDimensionError(f"spin dimensions must be >= 2, got ({self.S_dim}, {self.I_dim})")

    @property
    def dim(self):
        return self.S_dim * self.I_dim

    def replace(self, **changes):
        kwargs = dict(g_tensor=self.g_tensor, A_tensor=self.A_tensor, g_N=self.g_N,
                      S_dim=self.S_dim, I_dim=self.I_dim)
        kwargs.update(changes)
        return ManifoldParams(**kwargs)

    def to_dict(self):
        return {
            "g_tensor": self.g_tensor.tolist(),
            "A_tensor": self.A_tensor.tolist(),
            "g_N": self.g_N,
        }

    def __eq__(self, other):
        if not isinstance(other, ManifoldParams):
            return NotImplemented
        return (np.array_equal(self.g_tensor, other.g_tensor)
                and np.array_equal(self.A_tensor, other.A_tensor)
                and self.g_N == other.g_N
                and (self.S_dim, self.I_dim) == (other.S_dim, other.I_dim))

    __hash__ = None


@dataclass(frozen=True)
class DefectModel:
    """Ground and excited manifold of one defect site.

    ``zpl_frequency`` is the zero-phonon optical frequency in MHz.
    """

    name: str
    ground: ManifoldParams
    excited: ManifoldParams
    zpl_frequency: float

    def __post_init__(self):
        if not (np.isfinite(self.zpl_frequency) and self.zpl_frequency > 0):
            raise InvalidParameterError("zpl_frequency must be > 0")
        if self.ground.dim != self.excited.dim:
            raise InvalidDimensionError("ground and excited manifolds must share a Hilbert space")

    def with_excited(self, **changes):
        return DefectModel(self.name, self.ground, self.excited.replace(**changes), self.zpl_frequency)


def as_field(B):
    """Normalize a field specification to a 3-vector in mT.

    A scalar is taken as a field along the c (z) axis.
    """
    arr = np.asarray(B, dtype=float)
    if arr.ndim == 0:
        arr = np.array([0.0, 0.0, float(arr)])
    if arr.shape != (3,):
        raise InvalidParameterError(f"field must be a scalar or a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("field components must be finite")
    return arr


def build_manifold_hamiltonian(p, B, c=DEFAULT_CONSTANTS):
    """Hamiltonian of one manifold at field ``B`` (mT), in MHz.

    ``H = mu_B B.g.S - g_N mu_N B.I + S.A.I``
    """
    B = as_field(B)
    ops = build_spin_operators(p.S_dim, p.I_dim)
    S = np.stack(ops[:3])
    I = np.stack(ops[3:])
    electron = c.mu_B_over_h * (B @ p.g_tensor)
    nuclear = -p.g_N * c.mu_N_over_h * B
    H = np.tensordot(electron, S, axes=1) + np.tensordot(nuclear, I, axes=1)
    H = H + np.tensordot(p.A_tensor, _coupling_basis(p.S_dim, p.I_dim), axes=([0, 1], [0, 1]))
    if not np.all(np.isfinite(H)):
        raise InvalidParameterError("Hamiltonian has non-finite entries")
    return H


def check_hermitian(H, rtol=HERMITIAN_RTOL):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ContractViolationError(f"expected a square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ContractViolationError("matrix has non-finite entries")
    scale = max(np.linalg.norm(H), 1.0)
    if np.linalg.norm(H - H.conj().T) > rtol * scale:
        raise ContractViolationError("matrix is not Hermitian within tolerance")
    return H


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Labelled eigen-decomposition of one manifold at one field point.

    Attributes
    ----------
    energies : (n,) ndarray
        Ascending eigenvalues, MHz.
    states : (n, n) ndarray
        Eigenvectors as columns.
    electron_branch : tuple of {"down", "up"}
    nuclear_label : (n,) ndarray
        Dominant ``m_I`` of each state.
    nuclear_weight : (n,) ndarray
        Summed squared amplitude on the dominant ``m_I``; a labelling
        confidence in (0, 1].
    sz : (n,) ndarray
        Electron spin expectation <S_z>.
    iz : (n,) ndarray
        Nuclear spin expectation <I_z>.
    """

    energies: np.ndarray
    states: np.ndarray
    electron_branch: tuple
    nuclear_label: np.ndarray
    nuclear_weight: np.ndarray
    sz: np.ndarray
    iz: np.ndarray
    sweeps: int = 0

    def __len__(self):
        return len(self.energies)


def _dims_for(n, s_dim):
    if n % s_dim:
        raise InvalidDimensionError(f"matrix dimension {n} is not a multiple of S_dim={s_dim}")
    return s_dim, n // s_dim


def _expect(op, vecs):
    return np.real(np.einsum("ik,ij,jk->k", vecs.conj(), op, vecs))


def _fix_phases(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    pivots = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(pivots) / pivots)


def eigensystem(H, prior=None, *, s_dim=2, tol=OFF_DIAGONAL_TOL, max_sweeps=MAX_SWEEPS,
                degeneracy_rtol=1e-9):
    """Diagonalize ``H`` and attach electron-branch and nuclear labels.

    Parameters
    ----------
    H : (n, n) array_like
        Hermitian matrix in MHz.
    prior : EigenSystem, optional
        Eigensystem at a neighbouring field point.  Used to resolve the branch
        of states whose <S_z> vanishes.
    s_dim : int
        Electron dimension used to interpret the basis (``n = s_dim * I_dim``).

    Notes
    -----
    Degenerate eigenvalues (within ``degeneracy_rtol * ||H||``) are
    re-diagonalized inside their subspace against ``I_z + 1e-3 S_z`` and
    ordered by descending <I_z>, then descending <S_z>.
    """
    H = check_hermitian(H)
    n = H.shape[0]
    S_dim, I_dim = _dims_for(n, s_dim)
    ops = _product_operators(S_dim, I_dim)

    w, v, sweeps, converged = jacobi_eigh(H, tol=tol, max_sweeps=max_sweeps)
    if not converged:
        raise ConvergenceError(f"Jacobi iteration did not converge within {max_sweeps} sweeps")

    scale = max(np.linalg.norm(H, 2), 1.0) if n else 1.0
    gap_tol = degeneracy_rtol * scale
    tie_op = ops.Iz + 1e-3 * ops.Sz
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and w[stop] - w[stop - 1] <= gap_tol:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            sub = block.conj().T @ tie_op @ block
            sub = (sub + sub.conj().T) / 2
            _, u, _, _ = jacobi_eigh(sub)
            rotated = block @ u[:, ::-1]   # descending tie-operator value
            v[:, start:stop] = rotated
        start = stop

    v = _fix_phases(v)
    sz = _expect(ops.Sz, v)
    iz = _expect(ops.Iz, v)

    weights = np.abs(v.reshape(S_dim, I_dim, n)) ** 2
    nuc_weights = weights.sum(axis=0)
    m_values = (I_dim - 1) / 2.0 - np.arange(I_dim)
    dominant = np.argmax(nuc_weights, axis=0)
    nuclear_label = m_values[dominant]
    nuclear_weight = nuc_weights[dominant, np.arange(n)]

    branches = []
    for k in range(n):
        if sz[k] > 1e-9:
            branches.append(UP)
        elif sz[k] < -1e-9:
            branches.append(DOWN)
        elif prior is not None and len(prior) == n:
            overlaps = np.abs(prior.states.conj().T @ v[:, k]) ** 2
            branches.append(prior.electron_branch[int(np.argmax(overlaps))])
        else:
            i_s = int(np.argmax(np.abs(v[:, k]))) // I_dim
            m_s = (S_dim - 1) / 2.0 - i_s
            branches.append(UP if m_s > 0 else DOWN)

    for arr in (w, v, nuclear_label, nuclear_weight, sz, iz):
        arr.flags.writeable = False
    return EigenSystem(w, v, tuple(branches), nuclear_label, nuclear_weight, sz, iz, sweeps)


def solve_manifold(p, B, c=DEFAULT_CONSTANTS, prior=None):
    """Build and diagonalize the Hamiltonian of manifold ``p`` at field ``B``."""
    return eigensystem(build_manifold_hamiltonian(p, B, c), prior, s_dim=p.S_dim)


def zeeman_splitting(p, B, c=DEFAULT_CONSTANTS):
    """Electron-only Zeeman splitting ``g_zz mu_B |B_z|`` in MHz.

    Only fields along the c axis are supported; anything else has to go
    through the full eigensystem.
    """
    B = as_field(B)
    if np.hypot(B[0], B[1]) > 1e-9:
        raise UnsupportedGeometryError("zeeman_splitting only supports fields along z")
    return abs(p.g_tensor[2, 2] * c.mu_B_over_h * B[2])


def field_sweep(p, fields, c=DEFAULT_CONSTANTS):
    """Solve a manifold along a sequence of field points.

    Returns the eigensystems together with a ``tracking`` array:
    ``tracking[k, j]`` is the energy index at field ``k`` of the state that
    started as index ``j``, chosen by maximum overlap with the previous step.
    """
    systems = []
    prior = None
    tracking = []
    for B in fields:
        es = solve_manifold(p, B, c, prior)
        if prior is None:
            tracking.append(np.arange(len(es)))
        else:
            overlap = np.abs(prior.states.conj().T @ es.states) ** 2
            order = _greedy_assignment(overlap)
            tracking.append(order[tracking[-1]])
        systems.append(es)
        prior = es
    return systems, np.array(tracking)


def _greedy_assignment(overlap):
    """Map each previous index to a distinct current index by largest overlap."""
    n = overlap.shape[0]
    result = np.full(n, -1)
    taken = np.zeros(n, dtype=bool)
    flat = np.argsort(overlap, axis=None)[::-1]
    for idx in flat:
        i, j = divmod(int(idx), n)
        if result[i] < 0 and not taken[j]:
            result[i] = j
            taken[j] = True
    return result
