"""Value types for discrete quantum states: amplitudes, polar form, probabilities
and probability currents on the links of a sparse Hermitian generator.

Every type is immutable after construction. Arrays handed out are read-only views.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

NORM_TOL = 1e-9
HERMITIAN_TOL = 1e-12


def _readonly(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def amplitudes_of(psi) -> np.ndarray:
    """Return the complex amplitude array of a field or array-like."""
    if isinstance(psi, ComplexAmplitudeField):
        return psi.amplitudes
    return np.asarray(psi, dtype=complex).ravel()


@dataclass(frozen=True, eq=False)
class ComplexAmplitudeField:
    """Normalized complex amplitudes psi_n over labels 0..N-1."""

    amplitudes: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.amplitudes, dtype=complex).ravel()
        if psi.size == 0:
            raise ValueError("amplitude field must have at least one label")
        if not np.all(np.isfinite(psi)):
            raise ValueError("amplitudes must be finite")
        norm = float(np.vdot(psi, psi).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized: sum |psi|^2 = {norm!r}")
        object.__setattr__(self, "amplitudes", _readonly(psi, complex))

    @classmethod
    def normalized(cls, values) -> "ComplexAmplitudeField":
        psi = np.asarray(values, dtype=complex).ravel()
        norm = np.sqrt(np.vdot(psi, psi).real)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(psi / norm)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def __len__(self) -> int:
        return self.dim


@dataclass(frozen=True, eq=False)
class PolarField:
    """Modulus R_n >= 0 and phase S_n (action units) with psi_n = R_n exp(i S_n / hbar)."""

    R: np.ndarray
    S: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).ravel()
        S = np.asarray(self.S, dtype=float).ravel()
        if R.shape != S.shape:
            raise ValueError(f"R and S shapes differ: {R.shape} vs {S.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(S))):
            raise ValueError("R and S must be finite")
        if np.any(R < 0):
            raise ValueError("modulus R must be nonnegative")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        object.__setattr__(self, "R", _readonly(R, float))
        object.__setattr__(self, "S", _readonly(S, float))

    @property
    def dim(self) -> int:
        return self.R.size


@dataclass(frozen=True, eq=False)
class ProbabilityField:
    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).ravel()
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("probabilities must be finite and nonnegative")
        total = float(P.sum())
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "P", _readonly(P, float))

    @property
    def dim(self) -> int:
        return self.P.size


class HermitianGenerator:
    """Sparse Hermitian matrix stored as a real diagonal plus the upper-triangle links.

    Only pairs n < m with H_nm != 0 are stored; H_mn is always the conjugate of the
    stored value, so Hermiticity and adjacency symmetry hold by construction.
    """

    def __init__(self, diag, rows, cols, values, hbar: float = 1.0):
        diag = np.asarray(diag, dtype=float).ravel()
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=complex).ravel()
        n = diag.size
        if n == 0:
            raise ValueError("generator needs at least one label")
        if not (rows.size == cols.size == values.size):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size and (rows.min() < 0 or cols.max() >= n or np.any(rows >= cols)):
            raise ValueError("links must satisfy 0 <= n < m < N")
        if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(values))):
            raise ValueError("generator entries must be finite")
        if hbar <= 0:
            raise ValueError("hbar must be positive")
        keep = values != 0
        rows, cols, values = rows[keep], cols[keep], values[keep]
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                raise ValueError("duplicate link in generator entries")
        self._diag = _readonly(diag, float)
        self._rows = _readonly(rows, np.int64)
        self._cols = _readonly(cols, np.int64)
        self._values = _readonly(values, complex)
        self.hbar = float(hbar)

    @classmethod
    def from_dense(cls, H, hbar: float = 1.0, tol: float = HERMITIAN_TOL) -> "HermitianGenerator":
        H = np.asarray(H, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("generator must be a square matrix")
        scale = max(1.0, float(np.abs(H).max(initial=0.0)))
        if np.abs(H - H.conj().T).max(initial=0.0) > tol * scale:
            raise ValueError("matrix is not Hermitian")
        rows, cols = np.nonzero(np.triu(H, k=1))
        return cls(H.diagonal().real, rows, cols, H[rows, cols], hbar=hbar)

    @classmethod
    def from_entries(cls, dim: int, entries: dict, hbar: float = 1.0,
                     tol: float = HERMITIAN_TOL) -> "HermitianGenerator":
        """Build from a mapping (n, m) -> H_nm; entries given in both orders must agree."""
        H = np.zeros((dim, dim), dtype=complex)
        seen = np.zeros((dim, dim), dtype=bool)
        for (n, m), value in entries.items():
            H[n, m] = value
            seen[n, m] = True
        for (n, m), value in entries.items():
            if n == m:
                if abs(complex(value).imag) > tol * max(1.0, abs(value)):
                    raise ValueError(f"diagonal entry ({n},{n}) is not real")
            elif seen[m, n]:
                if abs(H[m, n] - np.conj(value)) > tol * max(1.0, abs(value)):
                    raise ValueError(f"entries ({n},{m}) and ({m},{n}) are not conjugate")
            else:
                H[m, n] = np.conj(value)
        return cls.from_dense(H, hbar=hbar, tol=tol)

    @property
    def dim(self) -> int:
        return self._diag.size

    @property
    def diag(self) -> np.ndarray:
        return self._diag

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def cols(self) -> np.ndarray:
        return self._cols

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n_links(self) -> int:
        return self._rows.size

    @cached_property
    def link_index(self) -> dict:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self._rows, self._cols))}

    @cached_property
    def adjacency(self) -> tuple:
        nbrs = [[] for _ in range(self.dim)]
        for a, b in zip(self._rows.tolist(), self._cols.tolist()):
            nbrs[a].append(b)
            nbrs[b].append(a)
        return tuple(tuple(sorted(x)) for x in nbrs)

    def entry(self, n: int, m: int) -> complex:
        if n == m:
            return complex(self._diag[n])
        a, b = (n, m) if n < m else (m, n)
        i = self.link_index.get((a, b))
        if i is None:
            return 0j
        v = self._values[i]
        return complex(v if n < m else np.conj(v))

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        n = self.dim
        r = np.concatenate([np.arange(n), self._rows, self._cols])
        c = np.concatenate([np.arange(n), self._cols, self._rows])
        v = np.concatenate([self._diag.astype(complex), self._values, self._values.conj()])
        return sp.csr_matrix((v, (r, c)), shape=(n, n))

    def to_sparse(self) -> sp.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def matvec(self, psi) -> np.ndarray:
        return self._csr @ np.asarray(psi, dtype=complex)

    @cached_property
    def spectral_radius(self) -> float:
        """Largest |eigenvalue|, computed (not bounded) from the matrix."""
        if self.dim <= 2048:
            w = scipy.linalg.eigvalsh(self.to_dense())
            return float(np.abs(w).max())
        if self._csr.count_nonzero() == 0:
            return 0.0
        # fixed start vector keeps the estimate reproducible
        v0 = np.ones(self.dim) / np.sqrt(self.dim)
        w = scipy.sparse.linalg.eigsh(self._csr, k=1, which="LM", v0=v0, return_eigenvectors=False)
        return float(np.abs(w).max())

    def __repr__(self) -> str:
        return f"HermitianGenerator(dim={self.dim}, links={self.n_links}, hbar={self.hbar})"


class CurrentField:
    """Antisymmetric current J_nm stored once per link as J_ab for a < b."""

    def __init__(self, rows, cols, values, dim: int):
        self._rows = _readonly(rows, np.int64)
        self._cols = _readonly(cols, np.int64)
        self._values = _readonly(values, float)
        self.dim = int(dim)
        if self._values.shape != self._rows.shape:
            raise ValueError("one current value per link required")

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def cols(self) -> np.ndarray:
        return self._cols

    @property
    def values(self) -> np.ndarray:
        return self._values

    def get(self, n: int, m: int) -> float:
        a, b = (n, m) if n < m else (m, n)
        hit = np.flatnonzero((self._rows == a) & (self._cols == b))
        if hit.size == 0:
            return 0.0
        v = float(self._values[hit[0]])
        return v if n < m else -v

    def divergence(self) -> np.ndarray:
        """Rate of change of P_n implied by the current, sum_m J_nm."""
        return (np.bincount(self._rows, weights=self._values, minlength=self.dim)
                - np.bincount(self._cols, weights=self._values, minlength=self.dim))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        out[self._rows, self._cols] = self._values
        out[self._cols, self._rows] = -self._values
        return out


def polar_decompose(psi, hbar: float = 1.0) -> PolarField:
    amps = amplitudes_of(psi)
    if not np.all(np.isfinite(amps)):
        raise ValueError("amplitudes must be finite")
    R = np.abs(amps)
    S = np.where(R > 0, hbar * np.angle(amps), 0.0)
    # np.angle returns -pi for negative reals with a negative-zero imaginary part
    S = np.where(S <= -np.pi * hbar, np.pi * hbar, S)
    return PolarField(R, S, hbar)


def polar_compose(p: PolarField) -> ComplexAmplitudeField:
    return ComplexAmplitudeField(p.R * np.exp(1j * p.S / p.hbar))


def probability(psi) -> ProbabilityField:
    amps = amplitudes_of(psi)
    return ProbabilityField(amps.real ** 2 + amps.imag ** 2)


def _check_dims(dim: int, H: HermitianGenerator):
    if dim != H.dim:
        raise ValueError(f"dimension mismatch: state has {dim} labels, generator {H.dim}")


def current_values(amps: np.ndarray, H: HermitianGenerator) -> np.ndarray:
    """J_ab = (2/hbar) Im(conj(psi_a) H_ab psi_b) for every stored link a < b."""
    z = np.conj(amps[H.rows]) * H.values * amps[H.cols]
    return (2.0 / H.hbar) * z.imag


def current(psi, H: HermitianGenerator) -> CurrentField:
    amps = amplitudes_of(psi)
    _check_dims(amps.size, H)
    return CurrentField(H.rows, H.cols, current_values(amps, H), H.dim)


def current_from_polar(p: PolarField, H: HermitianGenerator) -> CurrentField:
    _check_dims(p.dim, H)
    a, b = H.rows, H.cols
    theta = np.exp(-1j * (p.S[a] - p.S[b]) / p.hbar)
    J = (2.0 / H.hbar) * p.R[a] * p.R[b] * (H.values * theta).imag
    return CurrentField(a, b, J, H.dim)
