"""Complex Hermitian linear-algebra primitives.

Everything downstream (duality reductions, dual-variable cuts, the SDP
backend) runs on these four operations: deterministic Hermitian
eigendecomposition, range/null splitting with a relative rank tolerance,
PSD tests, and the complex-to-real embedding used by the real-arithmetic
SDP backend.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, NotPsdError

# Relative tolerance separating a genuine null space from round-off when
# classifying eigenvalues. Coarse enough to absorb the noise of a
# near-optimal dual point, fine enough not to discard real signal space.
DEFAULT_RANK_RTOL = 1e-8

HERMITIAN_RTOL = 1e-12


def herm(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(m.T)


def check_hermitian(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Validate conjugate symmetry of ``m`` and return it as a complex array.

    Raises ContractViolationError when the residual max|M - M^H| exceeds
    rtol * (1 + max|M|).
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(float))):
        raise ContractViolationError("matrix has non-finite entries")
    scale = 1.0 + (np.max(np.abs(m)) if m.size else 0.0)
    resid = np.max(np.abs(m - herm(m))) if m.size else 0.0
    if resid > rtol * scale:
        raise ContractViolationError(
            f"matrix is not Hermitian: residual {resid:.3e} > {rtol * scale:.3e}"
        )
    return m


def hermitian_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Returns ``(values, vectors)`` with orthonormal eigenvector columns.
    Each eigenvector is rotated so its largest-magnitude entry is real and
    positive, which makes the output deterministic for a fixed input.
    """
    m = check_hermitian(m)
    w, v = np.linalg.eigh((m + herm(m)) / 2.0)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    for k in range(v.shape[1]):
        col = v[:, k]
        i = int(np.argmax(np.abs(col)))
        pivot = col[i]
        if np.abs(pivot) > 0:
            v[:, k] = col * (np.conj(pivot) / np.abs(pivot))
    return w, v


@dataclass(frozen=True)
class RangeNullSplit:
    """Orthonormal range/null bases of a PSD matrix.

    ``u1`` (N x m) spans the range, ``u2`` (N x (N - m)) the null space;
    ``eigenvalues`` holds the m nonzero eigenvalues, descending.
    """

    rank: int
    u1: np.ndarray
    u2: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self) -> int:
        return self.u1.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u1 * self.eigenvalues) @ herm(self.u1)


def range_null_split(a: np.ndarray, rel_tol: float = DEFAULT_RANK_RTOL) -> RangeNullSplit:
    """Split a PSD matrix into range and null orthonormal bases.

    Eigenvalues below ``rel_tol`` times the largest are classified as zero.
    Raises NotPsdError when an eigenvalue is below -rel_tol * ||a||_2.
    """
    w, v = hermitian_eig(a)
    top = float(w[0]) if w.size else 0.0
    if w.size and w[-1] < -rel_tol * max(top, abs(float(w[-1]))):
        raise NotPsdError(
            f"matrix is not PSD: min eigenvalue {w[-1]:.3e} vs top {top:.3e}"
        )
    if top <= 0.0:
        m = 0
    else:
        m = int(np.sum(w > rel_tol * top))
    eigs = np.clip(w[:m], 0.0, None)
    return RangeNullSplit(rank=m, u1=v[:, :m], u2=v[:, m:], eigenvalues=eigs)


def is_psd(m: np.ndarray, tol: float = 1e-10) -> bool:
    """True when the minimum eigenvalue is >= -tol * (1 + ||m||_2)."""
    w, _ = hermitian_eig(m)
    if w.size == 0:
        return True
    spectral = max(abs(float(w[0])), abs(float(w[-1])))
    return bool(w[-1] >= -tol * (1.0 + spectral))


def complex_to_real_embedding(m: np.ndarray) -> np.ndarray:
    """Real symmetric 2N x 2N embedding [[Re, -Im], [Im, Re]] of Hermitian m.

    Preserves positive semidefiniteness in both directions and doubles each
    eigenvalue's multiplicity; trace doubles.
    """
    m = check_hermitian(m)
    re, im = np.real(m), np.imag(m)
    out = np.block([[re, -im], [im, re]])
    return (out + out.T) / 2.0


def real_embedding_to_complex(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`complex_to_real_embedding` (orthogonal projection).

    For a 2N x 2N real symmetric matrix, returns the Hermitian N x N matrix
    whose embedding is nearest to ``y`` in Frobenius norm.
    """
    y = np.asarray(y, dtype=float)
    n2 = y.shape[0]
    if y.ndim != 2 or y.shape[0] != y.shape[1] or n2 % 2:
        raise ContractViolationError(f"expected an even-dim square matrix, got {y.shape}")
    n = n2 // 2
    re = (y[:n, :n] + y[n:, n:]) / 2.0
    im = (y[n:, :n] - y[:n, n:]) / 2.0
    m = re + 1j * im
    return (m + herm(m)) / 2.0
