"""Concrete self-adjoint operator models and spectral-function data.

Four model kinds are supported:

* ``free``       -- the 1D free Laplacian -d^2/dx^2, diagonalized exactly by
                    the Fourier transform (multiplier xi^2);
* ``stark_fd``   -- central-difference Laplacian minus the linear potential
                    x, Dirichlet truncation, accessed through an
                    epsilon-smoothed spectral density;
* ``hermitian``  -- a caller-provided Hermitian matrix with precomputed
                    eigendecomposition;
* ``perturbed``  -- the free Laplacian plus a short-range potential, accessed
                    through resolvent boundary values (see perturbation.py).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    GridFunction,
    SpatialGrid,
    fourier,
    inverse_fourier,
    weight,
)

__all__ = [
    "OperatorModel",
    "SpectralFunction",
    "PotentialSpec",
    "build_model",
    "apply_function",
    "spectral_projector",
    "spectrum_sample",
    "mean_gap_near",
    "shortrange_check",
    "load_potential",
]


@dataclass(frozen=True)
class SpectralFunction:
    """The data (sigma, a, a') on an energy window J with breakpoints.

    ``a`` must be strictly increasing with positive derivative on each
    component of J minus the breakpoint set.  ``a_inverse`` may be supplied
    when known in closed form; otherwise it is computed by monotone
    interpolation plus Newton polishing.
    """

    sigma: object
    a: object
    a_prime: object
    window: tuple
    breakpoints: tuple = ()
    a_inverse: object | None = None
    name: str = ""

    def __post_init__(self):
        lo, hi = self.window
        if not lo < hi:
            raise ValueError("window must be a nonempty open interval")
        object.__setattr__(self, "breakpoints", tuple(sorted(self.breakpoints)))

    def smooth_components(self, delta: float = 1e-6):
        """Components of J with closed delta-neighborhoods of breakpoints removed."""
        lo, hi = self.window
        cuts = [b for b in self.breakpoints if lo < b < hi]
        pieces = []
        left = lo
        for b in cuts:
            pieces.append((left, b - delta))
            left = b + delta
        pieces.append((left, hi))
        return [(a, b) for (a, b) in pieces if b > a]

    def invert_a(self, eta, component):
        """Solve a(lambda) = eta on a smooth component (a strictly increasing)."""
        eta = np.asarray(eta, dtype=float)
        if self.a_inverse is not None:
            lam = np.asarray(self.a_inverse(eta), dtype=float)
            return np.clip(lam, component[0], component[1])
        lo, hi = component
        table = np.linspace(lo, hi, 16385)
        avals = np.asarray(self.a(table), dtype=float)
        if np.any(np.diff(avals) <= 0):
            raise ValueError("a is not strictly increasing on the component")
        lam = np.interp(eta, avals, table)
        for _ in range(2):
            lam = lam - (np.asarray(self.a(lam)) - eta) / np.asarray(self.a_prime(lam))
            lam = np.clip(lam, lo, hi)
        return lam

    def validate_on(self, lam_sample) -> None:
        lam = np.asarray(lam_sample, dtype=float)
        sig = np.asarray(self.sigma(lam), dtype=float)
        ap = np.asarray(self.a_prime(lam), dtype=float)
        if not np.all(np.isfinite(sig)):
            raise ValueError("sigma is not finite on the sample")
        if not (np.all(np.isfinite(ap)) and np.all(ap > 0)):
            raise ValueError("a' must be positive and finite away from breakpoints")


@dataclass(frozen=True)
class PotentialSpec:
    """Short-range potential: multiplicative samples or a factored
    pseudodifferential sandwich <x>^{-s} (I - Laplacian)^beta <x>^{-s}."""

    kind: str  # 'multiplicative' | 'factored_pseudo'
    values: np.ndarray | None = None
    beta: float | None = None
    s: float | None = None
    decay_epsilon: float = 1.0

    def __post_init__(self):
        if self.kind == "multiplicative":
            v = np.asarray(self.values, dtype=float)
            object.__setattr__(self, "values", v)
        elif self.kind == "factored_pseudo":
            if self.beta is None or self.s is None:
                raise ValueError("factored_pseudo requires beta and s")
            if not self.beta < 0.5:
                raise ValueError("factored_pseudo requires beta < 1/2")
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.decay_epsilon <= 0:
            raise ValueError("decay_epsilon must be positive")

    def sample_matrix(self, grid: SpatialGrid) -> np.ndarray:
        """Dense symmetric matrix of the potential acting on grid values."""
        if self.kind == "multiplicative":
            if len(self.values) != grid.n_points:
                raise ValueError("potential samples do not match the grid")
            return np.diag(self.values).astype(complex)
        # <x>^{-s} (I - d^2/dx^2)^beta <x>^{-s} via the grid Fourier transform
        w = weight(grid.nodes, -self.s)
        sym = (1.0 + grid.freq_nodes**2) ** self.beta
        n = grid.n_points
        cols = np.zeros((n, n), dtype=complex)
        eye = np.eye(n)
        for j in range(n):
            f = GridFunction(grid, w * eye[:, j])
            fhat = fourier(f)
            g = inverse_fourier(GridFunction(fhat.grid, sym * fhat.values))
            cols[:, j] = w * g.values
        return 0.5 * (cols + cols.conj().T)


@dataclass(frozen=True)
class OperatorModel:
    """A self-adjoint operator with a declared spectral access route."""

    kind: str  # 'free' | 'stark_fd' | 'hermitian' | 'perturbed'
    grid: SpatialGrid
    matrix: np.ndarray | None = None
    eigvals: np.ndarray | None = None
    eigvecs: np.ndarray | None = None
    potential: PotentialSpec | None = None
    spectral_route: str = "exact"  # 'exact' | 'epsilon'
    epsilon: float | None = None

    def with_epsilon(self, epsilon: float) -> "OperatorModel":
        return replace(self, epsilon=float(epsilon), spectral_route="epsilon")


def _check_hermitian(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.conj().T).max() > 1e-12 * scale:
        raise ValueError("matrix is not Hermitian to 1e-12")
    return 0.5 * (m + m.conj().T)


def _eigendecompose(matrix: np.ndarray):
    evals, evecs = np.linalg.eigh(matrix)
    recon = (evecs * evals) @ evecs.conj().T
    scale = max(np.abs(matrix).max(), 1.0)
    if np.abs(recon - matrix).max() > 1e-10 * scale:
        raise ValueError("eigendecomposition failed to reconstruct the matrix to 1e-10")
    return evals, evecs


def build_model(kind: str, grid: SpatialGrid, **params) -> OperatorModel:
    """Construct an operator model.

    Parameters by kind:

    * ``free``: none.
    * ``stark_fd``: optional ``epsilon`` (default: 10 mean gaps, resolved lazily).
    * ``hermitian``: ``matrix`` (n x n Hermitian), optional ``epsilon``;
      route is 'exact' unless ``epsilon`` is given.
    * ``perturbed``: ``potential`` (PotentialSpec or symmetric matrix).
    """
    if kind == "free":
        return OperatorModel(kind="free", grid=grid, spectral_route="exact")

    if kind == "stark_fd":
        n = grid.n_points
        h = grid.spacing
        lap = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h**2
        m = lap - np.diag(grid.nodes)
        m = _check_hermitian(m)
        evals, evecs = _eigendecompose(m)
        eps = params.get("epsilon")
        if eps is None:
            eps = 10.0 * float(np.mean(np.diff(evals)))
        return OperatorModel(
            kind="stark_fd", grid=grid, matrix=m, eigvals=evals, eigvecs=evecs,
            spectral_route="epsilon", epsilon=float(eps),
        )

    if kind == "hermitian":
        m = _check_hermitian(params["matrix"])
        if m.shape[0] != grid.n_points:
            raise ValueError("matrix size must equal n_points")
        evals, evecs = _eigendecompose(m)
        eps = params.get("epsilon")
        route = "epsilon" if eps is not None else "exact"
        return OperatorModel(
            kind="hermitian", grid=grid, matrix=m, eigvals=evals, eigvecs=evecs,
            spectral_route=route, epsilon=None if eps is None else float(eps),
        )

    if kind == "perturbed":
        pot = params["potential"]
        if not isinstance(pot, PotentialSpec):
            v = np.asarray(pot, dtype=float)
            if v.ndim != 1:
                raise ValueError("potential must be a PotentialSpec or 1D samples on the grid")
            pot = PotentialSpec(kind="multiplicative", values=v)
        if pot.kind == "multiplicative" and not np.all(np.isreal(pot.values)):
            raise ValueError("multiplicative potential must be real (symmetric)")
        return OperatorModel(kind="perturbed", grid=grid, potential=pot, spectral_route="exact")

    raise ValueError(f"unknown model kind {kind!r}")


def spectrum_sample(model: OperatorModel) -> np.ndarray:
    """Sample of the spectrum used for finiteness checks of calculus functions."""
    if model.kind == "free":
        return model.grid.freq_nodes**2
    return model.eigvals


def mean_gap_near(model: OperatorModel, lam: float, half_width_gaps: float = 20.0) -> float:
    """Mean eigenvalue gap in a window around lam (matrix models only)."""
    evals = model.eigvals
    if evals is None:
        raise ValueError("mean gap is defined for matrix models only")
    gap0 = float(np.mean(np.diff(evals)))
    width = half_width_gaps * gap0
    sel = evals[(evals >= lam - width) & (evals <= lam + width)]
    if len(sel) >= 3:
        return float(np.mean(np.diff(sel)))
    return gap0


def apply_function(model: OperatorModel, g, phi: GridFunction) -> GridFunction:
    """Functional calculus g(H) phi; complex-valued g is permitted."""
    sample = spectrum_sample(model)
    gs = np.asarray(g(sample))
    if not np.all(np.isfinite(gs)):
        raise ValueError("g is not finite on the spectrum sample")
    if model.kind == "free":
        fhat = fourier(phi)
        vals = np.asarray(g(fhat.grid.nodes**2)) * fhat.values
        return inverse_fourier(GridFunction(fhat.grid, vals))
    if model.eigvecs is None:
        raise ValueError(f"functional calculus unavailable for kind {model.kind!r}")
    coeff = model.eigvecs.conj().T @ phi.values
    vals = model.eigvecs @ (gs * coeff)
    return GridFunction(model.grid, vals)


def spectral_projector(model: OperatorModel, window, phi: GridFunction) -> GridFunction:
    """Apply the sharp spectral projection E(J) in the functional calculus."""
    lo, hi = window
    return apply_function(model, lambda lam: ((lam > lo) & (lam < hi)).astype(float), phi)


def shortrange_check(pot: PotentialSpec, grid: SpatialGrid) -> dict:
    """Check |V(x)| <= C <x>^{-1-eps} on the grid and fit the constant.

    Returns a dict with ``ok``, the fitted ``constant`` (sup of
    |V| <x>^{1+eps}), and the tail growth diagnostic: the windowed constant
    must not keep growing with radius.
    """
    if pot.kind == "factored_pseudo":
        return {"ok": True, "constant": None, "reason": "factored pseudodifferential class, beta < 1/2"}
    x = grid.nodes
    v = pot.values
    if len(v) != grid.n_points:
        raise ValueError("potential samples do not match the grid")
    scaled = np.abs(v) * weight(x, 1.0 + pot.decay_epsilon)
    c_all = float(scaled.max())
    if c_all == 0.0:
        return {"ok": True, "constant": 0.0, "tail_ratio": 0.0}
    # windowed sup at half and full radius; growth means the decay rate fails
    half = np.abs(x) <= grid.x_max / 2.0
    c_half = float(scaled[half].max()) if half.any() else c_all
    tail_ratio = c_all / max(c_half, 1e-300)
    ok = tail_ratio <= 1.0 + 1e-6
    return {"ok": bool(ok), "constant": c_all, "tail_ratio": float(tail_ratio)}


def load_potential(path, grid: SpatialGrid, decay_epsilon: float = 1.0) -> PotentialSpec:
    """Load two-column (x, V) text samples and interpolate onto the grid."""
    data = np.loadtxt(path)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError("potential file must have two columns (x, V)")
    xs, vs = data[:, 0], data[:, 1]
    order = np.argsort(xs)
    vals = np.interp(grid.nodes, xs[order], vs[order], left=0.0, right=0.0)
    return PotentialSpec(kind="multiplicative", values=vals, decay_epsilon=decay_epsilon)
