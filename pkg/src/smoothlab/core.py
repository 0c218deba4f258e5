"""Discretized weighted L^2 spaces on a truncated line.

The continuum objects are the Hilbert space L^2(R), the weighted spaces
L^2_s with norm ||f||_{0,s}^2 = int <x>^{2s} |f|^2 dx, <x> = (1+x^2)^{1/2},
and operators between them.  Everything here lives on a uniform grid over
[-x_max, x_max]; integrals are spacing-weighted Riemann sums, which are
spectrally accurate for smooth decaying integrands.

Conventions fixed once for the whole package:

* grid nodes x_i = (i - n/2) * h, i = 0..n-1, h = 2 x_max / n;
* inner product (f, g) = h * sum f conj(g)  (linear in f);
* Fourier transform Ff(xi) = (2 pi)^{-1/2} int f(x) e^{-i xi x} dx,
  realized exactly on the grid by a shifted FFT (unitary);
* ``op_norm_weighted(rep, s_in, s_out)`` is the norm of ``rep`` as an
  operator L^2_{s_in} -> L^2_{s_out}, i.e. the plain operator norm of
  <x>^{s_out} rep <x>^{-s_in}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SpatialGrid",
    "GridFunction",
    "DenseMatrix",
    "FourierMultiplier",
    "RankKFactored",
    "IntegralKernel",
    "NonConvergenceError",
    "NotNonnegativeFormError",
    "weight",
    "weighted_norm",
    "inner",
    "fourier",
    "inverse_fourier",
    "fourier_at",
    "apply_operator",
    "adjoint_operator",
    "dual_norm_rank_k",
    "op_norm_weighted",
    "validate_decay",
]

DEFAULT_SEED = 0xC0FFEE


class NonConvergenceError(RuntimeError):
    """Power iteration failed to converge; carries the last gap."""

    def __init__(self, msg, gap=None, last=None):
        super().__init__(msg)
        self.gap = gap
        self.last = last


class NotNonnegativeFormError(ValueError):
    """Coefficient matrix of a factored operator is not PSD."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on [-x_max, x_max) with an even number of nodes.

    The dual (frequency) grid has the same node count with spacing
    pi / x_max, so that freq_spacing * spacing * n_points = 2 pi.
    """

    x_max: float
    n_points: int

    def __post_init__(self):
        if self.x_max <= 0:
            raise ValueError("x_max must be positive")
        if self.n_points <= 0 or self.n_points % 2 != 0:
            raise ValueError("n_points must be a positive even integer")

    @property
    def spacing(self) -> float:
        return 2.0 * self.x_max / self.n_points

    @cached_property
    def nodes(self) -> np.ndarray:
        n = self.n_points
        return (np.arange(n) - n // 2) * self.spacing

    @property
    def freq_spacing(self) -> float:
        return np.pi / self.x_max

    @cached_property
    def freq_nodes(self) -> np.ndarray:
        n = self.n_points
        return (np.arange(n) - n // 2) * self.freq_spacing

    def dual(self) -> "SpatialGrid":
        """Grid carrying Fourier transforms of functions on this grid."""
        return SpatialGrid(self.n_points * self.freq_spacing / 2.0, self.n_points)


@dataclass(frozen=True)
class GridFunction:
    """Complex-valued function sampled on a SpatialGrid."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.grid.n_points,):
            raise ValueError(
                f"values length {vals.shape} does not match grid ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    def norm(self, s: float = 0.0) -> float:
        return weighted_norm(self, s)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __add__(self, other):
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return GridFunction(self.grid, self.values - other.values)


def weight(x, s: float):
    """Japanese bracket weight <x>^s = (1 + x^2)^{s/2}."""
    return (1.0 + np.asarray(x) ** 2) ** (s / 2.0)


def weighted_norm(f: GridFunction, s: float = 0.0) -> float:
    """Discrete ||f||_{0,s} = (sum <x_i>^{2s} |f_i|^2 h)^{1/2}."""
    w = weight(f.grid.nodes, 2.0 * s)
    return float(np.sqrt(np.sum(w * np.abs(f.values) ** 2) * f.grid.spacing))


def inner(f: GridFunction, g: GridFunction) -> complex:
    """Grid L^2 pairing (f, g) = h sum f conj(g)."""
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    return complex(np.sum(f.values * np.conj(g.values)) * f.grid.spacing)


def fourier(f: GridFunction) -> GridFunction:
    """Unitary discrete Fourier transform with the (2 pi)^{-1/2} convention.

    Returns the transform sampled on the dual grid.  Composing with
    :func:`inverse_fourier` recovers the input to machine precision and
    Parseval holds exactly.
    """
    h = f.grid.spacing
    vals = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(f.values)))
    return GridFunction(f.grid.dual(), vals * h / np.sqrt(2.0 * np.pi))


def inverse_fourier(fhat: GridFunction) -> GridFunction:
    """Inverse of :func:`fourier`; input lives on the dual grid."""
    dual = fhat.grid.dual()
    h = dual.spacing
    vals = np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(fhat.values)))
    return GridFunction(dual, vals * np.sqrt(2.0 * np.pi) / h)


def fourier_at(f: GridFunction, freqs) -> np.ndarray:
    """Fourier transform of f at arbitrary frequencies (not grid-snapped).

    Direct oscillatory quadrature (2 pi)^{-1/2} h sum_i f_i e^{-i q x_i},
    vectorized over the requested frequencies.
    """
    q = np.atleast_1d(np.asarray(freqs, dtype=float))
    phase = np.exp(-1j * np.outer(q, f.grid.nodes))
    out = phase @ f.values * f.grid.spacing / np.sqrt(2.0 * np.pi)
    return out if np.ndim(freqs) else out[0]


def validate_decay(f: GridFunction, rel_tol: float = 1e-8, edge_frac: float = 0.05) -> None:
    """Reject functions whose mass reaches the grid boundary.

    Truncating the line biases integrals by the mass living near the edge;
    callers that model decaying states must stay under ``rel_tol``.
    """
    n = f.grid.n_points
    m = max(1, int(edge_frac * n))
    total = np.sum(np.abs(f.values) ** 2)
    if total == 0.0:
        return
    edge = np.sum(np.abs(f.values[:m]) ** 2) + np.sum(np.abs(f.values[-m:]) ** 2)
    if edge > rel_tol * total:
        raise ValueError(
            f"function mass reaches the grid boundary (edge fraction {edge / total:.3e}); "
            "increase x_max"
        )


# ---------------------------------------------------------------------------
# Operator representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseMatrix:
    """n x n matrix acting on grid values (no quadrature weight)."""

    matrix: np.ndarray
    self_adjoint: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        if self.self_adjoint:
            scale = max(np.abs(m).max(), 1.0)
            if np.abs(m - m.conj().T).max() > 1e-12 * scale:
                raise ValueError("matrix marked self-adjoint is not Hermitian to 1e-12")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class FourierMultiplier:
    """Real symbol m(xi) sampled on the frequency grid of ``grid``."""

    grid: SpatialGrid
    symbol: np.ndarray

    def __post_init__(self):
        sym = np.asarray(self.symbol)
        if sym.shape != (self.grid.n_points,):
            raise ValueError("symbol length must match grid")
        object.__setattr__(self, "symbol", sym)


@dataclass(frozen=True)
class RankKFactored:
    """Finite-rank operator f -> sum_{j,l} C_{jl} (f, u_l) u_j.

    ``factors`` are the u_j.  When ``left_factors`` is given the operator is
    the generalized form f -> sum C_{jl} (f, u_l) p_j, which is what
    perturbation chains produce; the symmetric form (left_factors None) is
    required wherever a nonnegative form is expected.
    """

    factors: tuple
    coeff: np.ndarray
    left_factors: tuple | None = None

    def __post_init__(self):
        c = np.asarray(self.coeff, dtype=complex)
        k = len(self.factors)
        if c.shape != (k, k):
            raise ValueError("coeff must be k x k")
        if self.left_factors is not None and len(self.left_factors) != k:
            raise ValueError("left_factors must match factors in length")
        object.__setattr__(self, "coeff", c)
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.left_factors is not None:
            object.__setattr__(self, "left_factors", tuple(self.left_factors))

    @property
    def grid(self) -> SpatialGrid:
        return self.factors[0].grid


@dataclass(frozen=True)
class IntegralKernel:
    """Kernel K(x, y) on grid x grid, applied with quadrature weight h."""

    grid: SpatialGrid
    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=complex)
        n = self.grid.n_points
        if k.shape != (n, n):
            raise ValueError("kernel must be n x n")
        object.__setattr__(self, "kernel", k)


def apply_operator(rep, f: GridFunction) -> GridFunction:
    """Apply an operator representation to a grid function."""
    if isinstance(rep, DenseMatrix):
        return GridFunction(f.grid, rep.matrix @ f.values)
    if isinstance(rep, FourierMultiplier):
        fhat = fourier(f)
        return inverse_fourier(GridFunction(fhat.grid, rep.symbol * fhat.values))
    if isinstance(rep, RankKFactored):
        coeffs = np.array([inner(f, u) for u in rep.factors])
        amps = rep.coeff @ coeffs
        left = rep.left_factors if rep.left_factors is not None else rep.factors
        vals = np.zeros(f.grid.n_points, dtype=complex)
        for a, p in zip(amps, left):
            vals += a * p.values
        return GridFunction(f.grid, vals)
    if isinstance(rep, IntegralKernel):
        return GridFunction(f.grid, rep.grid.spacing * (rep.kernel @ f.values))
    raise TypeError(f"unknown operator representation {type(rep)!r}")


def adjoint_operator(rep):
    """Adjoint with respect to the grid inner product."""
    if isinstance(rep, DenseMatrix):
        return DenseMatrix(rep.matrix.conj().T, rep.self_adjoint)
    if isinstance(rep, FourierMultiplier):
        if np.iscomplexobj(rep.symbol):
            return FourierMultiplier(rep.grid, np.conj(rep.symbol))
        return rep
    if isinstance(rep, RankKFactored):
        left = rep.left_factors if rep.left_factors is not None else rep.factors
        return RankKFactored(left, rep.coeff.conj().T, left_factors=rep.factors)
    if isinstance(rep, IntegralKernel):
        return IntegralKernel(rep.grid, rep.kernel.conj().T)
    raise TypeError(f"unknown operator representation {type(rep)!r}")


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(c)
    scale = max(evals.max(initial=0.0), 0.0)
    if evals.min(initial=0.0) < -1e-12 * max(scale, 1.0):
        raise NotNonnegativeFormError("not a nonnegative form: coefficient matrix has a negative eigenvalue")
    evals = np.clip(evals, 0.0, None)
    return (evecs * np.sqrt(evals)) @ evecs.conj().T


def dual_norm_rank_k(rep: RankKFactored, s: float) -> float:
    """sup over ||f||_{0,s} = 1 of the form (rep f, f), for PSD factored reps.

    This is the square of the X -> X* operator norm convention; callers that
    need the operator norm take the square root.  Computed through the k x k
    eigenproblem of C^{1/2} G C^{1/2} with the weighted Gram matrix
    G_{jl} = (w_l, w_j), w_j = <x>^{-s} u_j.
    """
    if rep.left_factors is not None:
        raise NotNonnegativeFormError("generalized factored operator is not a symmetric form")
    grid = rep.grid
    w = weight(grid.nodes, -s)
    wcols = np.stack([w * u.values for u in rep.factors], axis=1)
    gram = grid.spacing * (wcols.conj().T @ wcols)
    half = _psd_sqrt(rep.coeff)
    m = half @ gram @ half
    evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(max(evals.max(initial=0.0), 0.0))


def op_norm_weighted(
    rep,
    s_in: float,
    s_out: float,
    grid: SpatialGrid | None = None,
    rel_tol: float = 1e-8,
    max_iter: int = 10000,
    seed: int = DEFAULT_SEED,
) -> float:
    """Operator norm of ``rep`` as a map L^2_{s_in} -> L^2_{s_out}.

    Equals the plain L^2 operator norm of B = <x>^{s_out} rep <x>^{-s_in},
    estimated by power iteration on B* B with a seeded start vector.
    """
    if grid is None:
        grid = _rep_grid(rep)
    x = grid.nodes
    w_out = weight(x, s_out)
    w_in_inv = weight(x, -s_in)
    adj = adjoint_operator(rep)

    def b_apply(v):
        return w_out * apply_operator(rep, GridFunction(grid, w_in_inv * v)).values

    def b_adj_apply(u):
        return w_in_inv * apply_operator(adj, GridFunction(grid, w_out * u)).values

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
    v /= np.linalg.norm(v)
    prev = None
    mu = 0.0
    for _ in range(max_iter):
        bv = b_apply(v)
        mu = float(np.linalg.norm(bv) ** 2)  # (v, B*B v) for unit v
        btbv = b_adj_apply(bv)
        nrm = np.linalg.norm(btbv)
        if nrm == 0.0:
            return 0.0
        v = btbv / nrm
        if prev is not None:
            gap = abs(mu - prev)
            if gap <= rel_tol * max(mu, 1e-300):
                return float(np.sqrt(mu))
        prev = mu
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        gap=abs(mu - prev) if prev is not None else None,
        last=float(np.sqrt(mu)),
    )


def _rep_grid(rep) -> SpatialGrid:
    if isinstance(rep, (FourierMultiplier, IntegralKernel)):
        return rep.grid
    if isinstance(rep, RankKFactored):
        return rep.grid
    raise ValueError("grid must be passed explicitly for DenseMatrix representations")
