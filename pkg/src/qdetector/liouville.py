"""Liouville-space machinery: vectorization, the Liouvillian, its spectrum.

Vectorization stacks columns, ``vec(A rho C) = (C^T kron A) vec(rho)``.

The Liouvillian conserves the label difference of ``|i><j|`` (see
:func:`qdetector.model.conserved_labels`), so the 576x576 matrix is block
diagonal over 85 sectors, the largest being 38x38. The default eigensolver
diagonalises each sector densely; ``method="dense"`` diagonalises the full
matrix in one call and is kept as a cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import model
from .errors import DegenerateSteadyState, IllConditioned, NonConvergedEigensolve
from .model import CHANNELS, DIM, DetectorParams, JumpOperator, RateSet
from .precision import RefinedSolver, dd_add, dd_dot, dd_scale

LDIM = DIM * DIM


def vectorize(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    return rho.reshape(-1, order="F")


def devectorize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    n = int(round(np.sqrt(v.size)))
    if v.ndim != 1 or n * n != v.size:
        raise ValueError(f"vector of length {v.size} is not a vectorized square matrix")
    return v.reshape(n, n, order="F")


def spre(A: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> A rho``."""
    return np.kron(np.eye(A.shape[0]), A)


def spost(C: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> rho C``."""
    return np.kron(C.T, np.eye(C.shape[0]))


def sandwich(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> A rho C``."""
    return np.kron(C.T, A)


def dissipator(L: np.ndarray) -> np.ndarray:
    LdL = L.conj().T @ L
    return sandwich(L, L.conj().T) - 0.5 * spre(LdL) - 0.5 * spost(LdL)


@lru_cache(maxsize=None)
def trace_vector(n: int = DIM) -> np.ndarray:
    v = vectorize(np.eye(n, dtype=complex))
    v.setflags(write=False)
    return v


@lru_cache(maxsize=1)
def sectors() -> tuple[np.ndarray, ...]:
    """Index sets of the symmetry sectors, sector of the populations first."""
    labels = model.conserved_labels()
    groups: dict[tuple[int, ...], list[int]] = {}
    for j in range(DIM):
        for i in range(DIM):
            key = tuple(int(x) for x in labels[i] - labels[j])
            groups.setdefault(key, []).append(i + DIM * j)
    keys = sorted(groups, key=lambda k: (k != (0, 0, 0), k))
    out = tuple(np.array(groups[k]) for k in keys)
    for idx in out:
        idx.setflags(write=False)
    return out


def current_superop(channel: str, rates: RateSet) -> np.ndarray:
    """Jump superoperator of one channel, positive for quanta emitted into the bath.

    ``J rho = Gamma_minus L_minus rho L_plus - Gamma_plus L_plus rho L_minus``
    """
    emit, absorb = _jump_sandwiches(channel)
    return rates.gamma_minus[channel] * emit - rates.gamma_plus[channel] * absorb


@lru_cache(maxsize=None)
def _jump_sandwiches(channel: str) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(L_minus . L_plus, L_plus . L_minus)`` as sparse superoperators."""
    L_plus, L_minus = model.channel_operators(channel)
    return (
        sp.csr_matrix(sp.kron(L_plus.T, L_minus), dtype=complex),
        sp.csr_matrix(sp.kron(L_minus.T, L_plus), dtype=complex),
    )


@dataclass
class Liouvillian:
    matrix: np.ndarray = field(repr=False)
    params: DetectorParams
    rates: RateSet
    hamiltonian: np.ndarray = field(repr=False)
    jumps: list[JumpOperator] = field(repr=False)
    currents: dict[str, np.ndarray] = field(repr=False)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return devectorize(self.matrix @ vectorize(rho))


def lindblad_rhs(H: np.ndarray, jumps: list[JumpOperator], rho: np.ndarray) -> np.ndarray:
    """Master-equation right-hand side evaluated in matrix form."""
    out = -1j * (H @ rho - rho @ H)
    for j in jumps:
        if j.rate == 0:
            continue
        L, Ld = j.L, j.L.conj().T
        LdL = Ld @ L
        out += j.rate * (L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL))
    return out


def assemble_liouvillian(params: DetectorParams) -> Liouvillian:
    rates = model.build_rates(params)
    H = model.build_hamiltonian(params)
    jumps = model.build_jump_operators(params, rates)
    # L = 1 (x) A + conj(A) (x) 1 + sum rate conj(L) (x) L, A = -iH - K/2
    K = sum(j.rate * (j.L.conj().T @ j.L) for j in jumps)
    A = -1j * H - 0.5 * K
    eye = sp.identity(DIM, format="csr")
    M = sp.kron(eye, A) + sp.kron(A.conj(), eye)
    for j in jumps:
        if j.rate != 0:
            M = M + j.rate * sp.kron(j.L.conj(), j.L)
    M = M.toarray()
    currents = {c: current_superop(c, rates) for c in CHANNELS}
    return Liouvillian(M, params, rates, H, jumps, currents)


# --- spectral decomposition ----------------------------------------------


@dataclass
class Sector:
    index: np.ndarray
    eigenvalues: np.ndarray
    right: np.ndarray  # columns are right eigenvectors
    left: np.ndarray  # rows are left eigenvectors, left @ right = 1
    zero: np.ndarray  # boolean mask of steady-state modes


@dataclass
class SpectralData:
    """Eigen-triplets of a Liouvillian, its steady state and Drazin inverse.

    ``eigenvalues`` are sorted with the steady-state mode(s) first and then by
    descending real part. Column ``k`` of ``right`` and row ``k`` of ``left``
    belong to ``eigenvalues[k]``. Treat instances as read-only.
    """

    eigenvalues: np.ndarray
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    rho_ss: np.ndarray = field(repr=False)
    n_zero: int
    sectors: list[Sector] = field(repr=False)
    liouvillian: Liouvillian | None = field(default=None, repr=False)
    drazin: np.ndarray | None = field(default=None, repr=False)
    solver: "PopulationSolver | None" = field(default=None, repr=False)
    # double-double right vectors of refined slow modes, keyed by column
    exact_modes: dict = field(default_factory=dict, repr=False)

    @property
    def lambda1(self) -> complex:
        return complex(self.eigenvalues[self.n_zero])

    @property
    def rho_ss_vec(self) -> np.ndarray:
        return vectorize(self.rho_ss)

    def row_weights(self, row: np.ndarray) -> np.ndarray:
        """``row @ right`` over decaying modes, refined modes contracted in double-double."""
        k = self.n_zero
        out = row @ self.right[:, k:]
        for col, y in self.exact_modes.items():
            out[col - k] = self.solver.contract(row, y)
        return out

    def propagate(self, rho0: np.ndarray, t: float) -> np.ndarray:
        """``vec(rho(t))`` from the spectral sum, for ``t >= 0``."""
        v0 = vectorize(rho0)
        out = np.zeros(v0.size, dtype=complex)
        for sec in self.sectors:
            coeff = sec.left @ v0[sec.index]
            out[sec.index] = sec.right @ (np.exp(sec.eigenvalues * t) * coeff)
        return out


def _eig(block: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        vals, right = np.linalg.eig(block)
        left = np.linalg.inv(right)
    except np.linalg.LinAlgError as exc:
        raise NonConvergedEigensolve(str(exc)) from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(left))):
        raise NonConvergedEigensolve("non-finite eigen-decomposition")
    return vals, right, left


class PopulationSolver:
    """Refined Drazin solves restricted to the populations sector.

    The sector is written in real form (real parts stacked over imaginary
    parts) and bordered by the trace constraint, so that
    ``[[L, t], [<<1|, 0]] [x; mu] = [b; 0]`` returns ``x = L+ b`` for
    traceless ``b`` and the steady state for ``b = 0`` with unit trace.
    Vectors are double-double pairs ``(hi, lo)`` of length ``2 n``.
    """

    def __init__(self, matrix: np.ndarray, index: np.ndarray | None = None):
        self.index = sectors()[0] if index is None else index
        n = self.index.size
        self.n = n
        M = matrix[np.ix_(self.index, self.index)]
        tr = trace_vector(int(round(np.sqrt(matrix.shape[0]))))[self.index].real
        K = np.zeros((2 * n + 2, 2 * n + 2))
        K[:n, :n], K[:n, n : 2 * n] = M.real, -M.imag
        K[n : 2 * n, :n], K[n : 2 * n, n : 2 * n] = M.imag, M.real
        K[2 * n, :n] = tr
        K[2 * n + 1, n : 2 * n] = tr
        K[:n, 2 * n] = tr
        K[n : 2 * n, 2 * n + 1] = tr
        self.trace = tr
        self._steady = None
        try:
            self._solver = RefinedSolver(K)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise IllConditioned(f"bordered populations system: {exc}") from exc

    def _solve(self, bh, bl):
        m = 2 * self.n
        fh = np.zeros(m + 2)
        fl = np.zeros(m + 2)
        fh[:m], fl[:m] = bh, bl
        try:
            xh, xl = self._solver.solve(fh, fl)
        except ArithmeticError as exc:
            raise IllConditioned(str(exc)) from exc
        return xh[:m], xl[:m]

    def steady_state(self):
        if self._steady is None:
            m = 2 * self.n
            b = np.zeros(m + 2)
            b[m] = 1.0
            try:
                xh, xl = self._solver.solve(b)
            except ArithmeticError as exc:
                raise IllConditioned(str(exc)) from exc
            self._steady = (xh[:m], xl[:m])
        return self._steady

    def drazin(self, bh, bl):
        """``L+ b`` for a traceless double-double vector ``b``."""
        return self._solve(bh, bl)

    def from_full(self, v: np.ndarray):
        if np.abs(np.delete(v, self.index)).max(initial=0.0) > 0:
            raise ValueError("vector has weight outside the populations sector")
        w = v[self.index]
        hi = np.concatenate([w.real, w.imag])
        return hi, np.zeros_like(hi)

    def to_full(self, x, size: int = LDIM) -> np.ndarray:
        hi, lo = x
        h = hi + lo
        out = np.zeros(size, dtype=complex)
        out[self.index] = h[: self.n] + 1j * h[self.n :]
        return out

    def trace_of(self, x) -> float:
        hi, lo = x
        return dd_dot(self.trace, hi[: self.n], lo[: self.n])

    def contract(self, row: np.ndarray, x) -> complex:
        """``row @ x`` for a full-space complex row vector, in double-double."""
        hi, lo = x
        r = row[self.index]
        # (r_re + i r_im) . (x_re + i x_im) against the stacked [x_re; x_im]
        re = dd_dot(np.concatenate([r.real, -r.imag]), hi, lo)
        im = dd_dot(np.concatenate([r.imag, r.real]), hi, lo)
        return complex(re, im)

    @staticmethod
    def subtract(x, y):
        return dd_add(x[0], x[1], -y[0], -y[1])

    def project(self, x):
        """``x - tr(x) rho_ss`` for a complex stacked double-double ``x``."""
        n = self.n
        hi, lo = x
        tr_re = dd_dot(self.trace, hi[:n], lo[:n])
        tr_im = dd_dot(self.trace, hi[n:], lo[n:])
        sh, sl = self.steady_state()
        # (tr_re + i tr_im) (s_re + i s_im) in stacked form
        swap_h = np.concatenate([-sh[n:], sh[:n]])
        swap_l = np.concatenate([-sl[n:], sl[:n]])
        a = dd_scale(tr_re, sh, sl)
        b = dd_scale(tr_im, swap_h, swap_l)
        y = dd_add(hi, lo, -a[0], -a[1])
        return dd_add(*y, -b[0], -b[1])

    def apply_drazin(self, v: np.ndarray):
        """``L+ v`` for a complex sector vector ``v`` (projected first), double-double."""
        hi = np.concatenate([v.real, v.imag])
        return self.drazin(*self.project((hi, np.zeros_like(hi))))

    def sector_vector(self, x) -> np.ndarray:
        hi, lo = x
        h = hi + lo
        return h[: self.n] + 1j * h[self.n :]


SLOW_TOL = 1e-6
RESOLVE_TOL = 1e-90


class ShiftedSolver:
    """Refined solves with ``A - sigma`` for a complex sector block ``A``."""

    def __init__(self, block: np.ndarray, sigma: complex):
        n = block.shape[0]
        self.n = n
        B = block - sigma * np.eye(n)
        K = np.block([[B.real, -B.imag], [B.imag, B.real]])
        try:
            self._solver = RefinedSolver(K)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise IllConditioned(f"shifted sector system: {exc}") from exc

    def apply(self, v: np.ndarray):
        hi = np.concatenate([v.real, v.imag])
        try:
            return self._solver.solve(hi, np.zeros_like(hi))
        except ArithmeticError as exc:
            raise IllConditioned(str(exc)) from exc

    def sector_vector(self, x) -> np.ndarray:
        h = x[0] + x[1]
        return h[: self.n] + 1j * h[self.n :]


def _refine_slow_modes(apply, to_vector, start: np.ndarray, maxit: int = 50):
    """Dominant eigenpairs of an inverse operator by subspace iteration.

    ``apply`` maps a complex vector to a double-double stacked result of
    ``L+`` or ``(A - sigma)^-1``; ``start`` holds float eigenvector
    estimates as columns. Since every product is a refined solve, the
    Ritz values ``theta`` keep full relative accuracy even when the
    corresponding eigenvalues sit far below float64 resolution of the
    spectrum. Returns ``(theta, vectors)`` with double-double vectors.
    """
    X, _ = np.linalg.qr(start)
    prev = None
    for _ in range(maxit):
        Z = np.column_stack([to_vector(apply(X[:, j])) for j in range(X.shape[1])])
        theta, U = np.linalg.eig(X.conj().T @ Z)
        order = np.argsort(-np.abs(theta))
        theta, U = theta[order], U[:, order]
        if prev is not None and np.all(np.abs(theta - prev) <= 1e-14 * np.abs(theta)):
            break
        prev = theta
        X, _ = np.linalg.qr(Z)
    else:
        raise IllConditioned("slow-mode subspace iteration did not converge")
    vectors = []
    for j, th in enumerate(theta):
        if not np.isfinite(th) or th == 0:
            raise IllConditioned("slow-mode Ritz value is not finite")
        y = apply(X @ U[:, j])
        # power-of-two normalisation keeps the double-double pair exact
        e = np.frexp(np.abs(y[0]).max())[1]
        y = (np.ldexp(y[0], -e), np.ldexp(y[1], -e))
        v = to_vector(y)
        r = to_vector(apply(v)) - th * v
        if np.linalg.norm(r) > 1e-8 * abs(th) * np.linalg.norm(v):
            raise IllConditioned(f"slow mode residual {np.linalg.norm(r) / abs(th):.2e}")
        vectors.append(y)
    return theta, vectors


def _frequency_groups(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Split indices into groups of eigenvalues with close imaginary parts."""
    order = np.argsort(values.imag)
    groups, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b].imag - values[a].imag > tol:
            groups.append(np.array(current))
            current = []
        current.append(b)
    groups.append(np.array(current))
    return groups


def _refine_coherences(M: np.ndarray, sec: Sector, scale: float) -> None:
    """Refine weakly damped modes of a coherence sector in place."""
    slow = np.flatnonzero(np.abs(sec.eigenvalues.real) < SLOW_TOL * scale)
    if not slow.size:
        return
    block = M[np.ix_(sec.index, sec.index)]
    for group in _frequency_groups(sec.eigenvalues[slow], SLOW_TOL * scale):
        cols = slow[group]
        sigma = 1j * float(np.mean(sec.eigenvalues[cols].imag))
        shifted = ShiftedSolver(block, sigma)
        theta, vecs = _refine_slow_modes(shifted.apply, shifted.sector_vector, sec.right[:, cols])
        for j, th, y in zip(cols, theta, vecs):
            sec.eigenvalues[j] = sigma + 1.0 / th
            sec.right[:, j] = shifted.sector_vector(y)
    sec.left = np.linalg.inv(sec.right)


def spectral_decompose(
    liouvillian: Liouvillian | np.ndarray,
    zero_tol: float = 1e-10,
    cond_tol: float = 1e-12,
    allow_degenerate: bool = False,
    method: str = "sectors",
    refine: bool = True,
) -> SpectralData:
    """Diagonalise the Liouvillian and extract steady state and Drazin inverse.

    With ``refine`` (sector method, full model only) the steady state comes
    from the bordered populations system and populations-sector modes with
    ``|lambda| < SLOW_TOL * max|lambda|`` are recomputed by refined inverse
    iteration. Uniqueness of the kernel is then decided on the refined
    spectrum: a slowest mode below ``RESOLVE_TOL * max|lambda|`` counts as
    a degenerate steady state. Without refinement, eigenvalues within
    ``zero_tol`` of zero form the kernel and ``cond_tol`` bounds the ratio
    of smallest to largest decaying ``|lambda|``.

    With ``allow_degenerate`` a multi-dimensional kernel is accepted; the
    reported steady state is then the projection of the maximally mixed state
    onto the kernel, and every kernel mode is excluded from the Drazin sum.
    """
    if isinstance(liouvillian, Liouvillian):
        M, owner = liouvillian.matrix, liouvillian
    else:
        M, owner = np.asarray(liouvillian), None
    if method == "sectors":
        index_sets = sectors()
    elif method == "dense":
        index_sets = (np.arange(M.shape[0]),)
    else:
        raise ValueError(f"unknown method {method!r}")

    secs = []
    for idx in index_sets:
        vals, right, left = _eig(M[np.ix_(idx, idx)])
        secs.append(Sector(idx, vals, right, left, np.abs(vals) < zero_tol))
    scale = max(np.abs(s.eigenvalues).max() for s in secs)
    n_near = sum(int(s.zero.sum()) for s in secs)

    solver = None
    exact: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if refine and method == "sectors" and M.shape[0] == LDIM:
        try:
            solver = PopulationSolver(M)
            ss = solver.steady_state()
        except IllConditioned:
            solver = None
    if solver is not None:
        pop = secs[0]
        mags = np.abs(pop.eigenvalues)
        k = int(np.argmin(mags))
        slow = np.flatnonzero(mags < SLOW_TOL * scale)
        slow = slow[slow != k]
        try:
            lam, vecs = np.zeros(0, dtype=complex), []
            if slow.size:
                theta, vecs = _refine_slow_modes(
                    solver.apply_drazin, solver.sector_vector, pop.right[:, slow]
                )
                lam = 1.0 / theta
            for sec in secs[1:]:
                _refine_coherences(M, sec, scale)
        except IllConditioned:
            if n_near > 1:
                raise DegenerateSteadyState(f"{n_near} eigenvalues with |lambda| < {zero_tol}")
            raise
        decaying = np.concatenate([lam, *(s.eigenvalues for s in secs[1:])])
        weakest = np.abs(decaying).min()
        if weakest < RESOLVE_TOL * scale:
            raise DegenerateSteadyState(
                f"slowest mode |lambda|={weakest:.3e} is unresolvable against {scale:.3e}"
            )
        if np.any(decaying.real >= 0):
            raise IllConditioned("refined mode does not decay")
        for j, lj, y in zip(slow, lam, vecs):
            pop.eigenvalues[j] = lj
            pop.right[:, j] = solver.sector_vector(y)
            exact[int(j)] = y
        for sec in secs[1:]:
            sec.zero = np.zeros(sec.eigenvalues.size, dtype=bool)
        pop.eigenvalues[k] = 0.0
        pop.zero = np.zeros(mags.size, dtype=bool)
        pop.zero[k] = True
        n_zero = 1
        x0 = solver.to_full(ss)
    else:
        n_zero = n_near
        if n_zero == 0:
            raise NonConvergedEigensolve("no eigenvalue within zero_tol of 0")
        if n_zero > 1 and not allow_degenerate:
            raise DegenerateSteadyState(f"{n_zero} eigenvalues with |lambda| < {zero_tol}")
        if n_zero == 1:
            sec = next(s for s in secs if s.zero.any())
            k = int(np.flatnonzero(sec.zero)[0])
            x0 = np.zeros(M.shape[0], dtype=complex)
            x0[sec.index] = sec.right[:, k]

    one = trace_vector(int(round(np.sqrt(M.shape[0]))))
    if n_zero == 1:
        sec = next(s for s in secs if s.zero.any())
        k = int(np.flatnonzero(sec.zero)[0])
        rho = devectorize(x0)
        rho = rho / np.trace(rho)
        rho = 0.5 * (rho + rho.conj().T)
        # pin the kernel pair to (vec(rho_ss), <<1|) and rebuild the left basis
        sec.right[:, k] = vectorize(rho)[sec.index]
        try:
            sec.left = np.linalg.inv(sec.right)
        except np.linalg.LinAlgError as exc:
            raise NonConvergedEigensolve(str(exc)) from exc
    else:
        mixed = one / one.sum()
        proj = np.zeros(M.shape[0], dtype=complex)
        for s in secs:
            if s.zero.any():
                z = s.zero
                proj[s.index] = s.right[:, z] @ (s.left[z, :] @ mixed[s.index])
        rho = devectorize(proj)
        rho = rho / np.trace(rho)
        rho = 0.5 * (rho + rho.conj().T)

    # global ordering: kernel first, then descending real part
    vals = np.concatenate([s.eigenvalues for s in secs])
    zero = np.concatenate([s.zero for s in secs])
    order = np.lexsort((vals.imag, -vals.real, ~zero))
    position = np.argsort(order)
    n = M.shape[0]
    right = np.zeros((n, n), dtype=complex)
    left = np.zeros((n, n), dtype=complex)
    col = 0
    for s in secs:
        m = s.index.size
        right[np.ix_(s.index, np.arange(col, col + m))] = s.right
        left[np.ix_(np.arange(col, col + m), s.index)] = s.left
        col += m
    spectral = SpectralData(
        eigenvalues=vals[order],
        right=right[:, order],
        left=left[order, :],
        rho_ss=rho,
        n_zero=n_zero,
        sectors=secs,
        liouvillian=owner,
        solver=solver,
        exact_modes={int(position[j]): y for j, y in exact.items()},
    )
    spectral.drazin = drazin_inverse(spectral, cond_tol=0.0 if solver is not None else cond_tol)
    return spectral


def drazin_inverse(spectral: SpectralData, cond_tol: float = 1e-12) -> np.ndarray:
    """``sum over decaying modes of |x_i>> <<y_i| / lambda_i``, assembled sector-wise."""
    nonzero = spectral.eigenvalues[spectral.n_zero :]
    mags = np.abs(nonzero)
    if mags.size and mags.min() < cond_tol * mags.max():
        raise IllConditioned(
            f"smallest decaying |lambda|={mags.min():.3e} vs largest {mags.max():.3e}"
        )
    n = spectral.right.shape[0]
    out = np.zeros((n, n), dtype=complex)
    for s in spectral.sectors:
        keep = ~s.zero
        block = (s.right[:, keep] / s.eigenvalues[keep]) @ s.left[keep, :]
        out[np.ix_(s.index, s.index)] = block
    return out


def drazin_by_resolvent(M: np.ndarray, rho_ss: np.ndarray) -> np.ndarray:
    """Drazin inverse of a Liouvillian with a unique steady state, without eigenvectors.

    Uses ``L^D = (L + P)^{-1} - P`` with ``P = |rho_ss>> <<1|``.
    """
    one = trace_vector(rho_ss.shape[0])
    P = np.outer(vectorize(rho_ss), one)
    return np.linalg.inv(M + P) - P


# --- debug dump ------------------------------------------------------------

DUMP_MAGIC = b"QDLV1\n"


def write_dump(path: str | Path, liouvillian: Liouvillian, spectral: SpectralData | None = None) -> None:
    """Write the Liouvillian (and optionally its spectrum) to a binary file.

    Layout: ``QDLV1\\n``, one JSON header line, then the matrix in row-major
    order as little-endian (real, imag) float64 pairs, then the eigenvalues
    in the same encoding when present.
    """
    header = {
        "dim": int(liouvillian.matrix.shape[0]),
        "hilbert_dims": list(model.DIMS),
        "basis_order": "(m_C, m_H, g, s) lexicographic, s fastest",
        "vectorization": "column stacking, index i + 24*j for |i><j|",
        "n_eigenvalues": 0 if spectral is None else int(spectral.eigenvalues.size),
        "params": liouvillian.params.as_dict(),
    }
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(liouvillian.matrix, dtype="<c16").tobytes(order="C"))
        if spectral is not None:
            fh.write(np.ascontiguousarray(spectral.eigenvalues, dtype="<c16").tobytes())


def read_dump(path: str | Path) -> tuple[dict, np.ndarray, np.ndarray | None]:
    with open(path, "rb") as fh:
        if fh.readline() != DUMP_MAGIC:
            raise ValueError(f"{path}: not a Liouvillian dump")
        header = json.loads(fh.readline())
        n = header["dim"]
        matrix = np.frombuffer(fh.read(16 * n * n), dtype="<c16").reshape(n, n)
        k = header["n_eigenvalues"]
        eigs = np.frombuffer(fh.read(16 * k), dtype="<c16") if k else None
    return header, matrix, eigs
