"""Spectral density A(lambda) = d/dlambda E(lambda) P_ac and resolvents.

Three realizations are provided:

* exact route (free model, lambda > 0): the density is the rank-2 factored
  operator with plane-wave factors at the two frequencies +-sqrt(lambda),
  evaluated by direct oscillatory quadrature (never grid-snapped);
* epsilon route (matrix models): the smoothed density
  (1/2 pi i)(R(lambda + i eps) - R(lambda - i eps)), a dense matrix;
* perturbed route: handled in perturbation.py through resolvent inversion.

The weighted norm ``density_norm`` returns the sup of the form
sup_{||f||_X = 1} (A f, f), i.e. the square of the X -> X* operator norm
convention.  Callers take square roots explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .core import (
    DenseMatrix,
    GridFunction,
    IntegralKernel,
    RankKFactored,
    SpatialGrid,
    apply_operator,
    dual_norm_rank_k,
    fourier_at,
    inner,
    op_norm_weighted,
)
from .models import OperatorModel, spectrum_sample

__all__ = [
    "DensityRep",
    "ResolventRep",
    "BreakpointError",
    "density_rep",
    "density_pairing",
    "density_apply",
    "density_norm",
    "resolvent",
    "weight_fourier",
    "FourierTable",
    "agmon_scan",
    "envelope_decay_scan",
    "window_mass",
    "adaptive_simpson",
]

BREAKPOINT_DELTA = 1e-6


class BreakpointError(ValueError):
    """lambda fell inside an excluded breakpoint neighborhood."""


@dataclass(frozen=True)
class DensityRep:
    """A(lambda) at a single energy, with its access route."""

    lam: float
    rep: object
    route: str  # 'exact' | 'epsilon'
    epsilon: float | None = None


@dataclass(frozen=True)
class ResolventRep:
    """R(lambda +- i eps) as an operator representation."""

    lam: float
    eps: float
    sign: int
    rep: object


def _plane_wave(grid: SpatialGrid, k: float) -> GridFunction:
    return GridFunction(grid, np.exp(1j * k * grid.nodes) / np.sqrt(2.0 * np.pi))


def _guard_lambda(model: OperatorModel, lam: float, breakpoints=(), delta=BREAKPOINT_DELTA):
    for b in breakpoints:
        if abs(lam - b) <= delta:
            raise BreakpointError(f"lambda={lam} within {delta} of breakpoint {b}")
    if model.kind == "free" and lam <= 0:
        raise ValueError("free-model density requires lambda > 0")


def _epsilon_density_matrix(model: OperatorModel, lam: float) -> np.ndarray:
    if model.epsilon is None:
        raise ValueError("model has no epsilon parameter for the smoothed route")
    eps = model.epsilon
    p = (eps / np.pi) / ((model.eigvals - lam) ** 2 + eps**2)
    return (model.eigvecs * p) @ model.eigvecs.conj().T


def density_rep(model: OperatorModel, lam: float, breakpoints=()) -> DensityRep:
    """Representation of A(lambda) for the model's spectral route."""
    _guard_lambda(model, lam, breakpoints)
    if model.kind == "free":
        k = np.sqrt(lam)
        e_plus = _plane_wave(model.grid, k)
        e_minus = _plane_wave(model.grid, -k)
        coeff = np.eye(2) / (2.0 * k)
        return DensityRep(lam, RankKFactored((e_plus, e_minus), coeff), "exact")
    if model.spectral_route == "epsilon":
        mat = _epsilon_density_matrix(model, lam)
        return DensityRep(lam, DenseMatrix(mat, self_adjoint=True), "epsilon", model.epsilon)
    raise ValueError(f"no density route for kind {model.kind!r} with route {model.spectral_route!r}")


def density_pairing(model: OperatorModel, lam: float, phi: GridFunction, psi: GridFunction,
                    breakpoints=()) -> complex:
    """The form <A(lambda) phi, psi>.

    Exact free route: (2 sqrt(lambda))^{-1} [phihat(k) conj(psihat(k)) +
    phihat(-k) conj(psihat(-k))] with k = sqrt(lambda), transforms taken by
    direct oscillatory quadrature.  Epsilon route: pairing against the
    smoothed density matrix.
    """
    _guard_lambda(model, lam, breakpoints)
    if model.kind == "free":
        k = np.sqrt(lam)
        ph = fourier_at(phi, [k, -k])
        ps = fourier_at(psi, [k, -k])
        return complex((ph[0] * np.conj(ps[0]) + ph[1] * np.conj(ps[1])) / (2.0 * k))
    if model.spectral_route == "epsilon":
        eps = model.epsilon
        c = model.eigvecs.conj().T @ phi.values
        d = model.eigvecs.conj().T @ psi.values
        p = (eps / np.pi) / ((model.eigvals - lam) ** 2 + eps**2)
        return complex(model.grid.spacing * np.sum(p * c * np.conj(d)))
    raise ValueError(f"no density route for kind {model.kind!r}")


def density_apply(model: OperatorModel, lam: float, phi: GridFunction,
                  breakpoints=()) -> GridFunction:
    """A(lambda) phi as a grid function (an X* representative)."""
    rep = density_rep(model, lam, breakpoints)
    return apply_operator(rep.rep, phi)


def density_norm(model: OperatorModel, lam: float, s: float, breakpoints=()) -> float:
    """sup over unit-X f of <A(lambda) f, f>  (the squared-norm convention).

    Free model: closed two-frequency Gram formula
    (2 sqrt(lambda))^{-1} (c(0) + |c(2 sqrt(lambda))|) / (2 pi) with the
    line integral c(q) = int <x>^{-2s} e^{iqx} dx; requires s > 1/2.
    Epsilon route: weighted operator norm of the smoothed density matrix.
    """
    _guard_lambda(model, lam, breakpoints)
    if model.kind == "free":
        if s <= 0.5:
            raise ValueError("weight too weak for LAP norm (need s > 1/2 on the free model)")
        k = np.sqrt(lam)
        c0 = weight_fourier(s, 0.0)
        c2 = weight_fourier(s, 2.0 * k)
        return float((c0 + abs(c2)) / (2.0 * np.pi) / (2.0 * k))
    if model.spectral_route == "epsilon":
        mat = DenseMatrix(_epsilon_density_matrix(model, lam), self_adjoint=True)
        return float(op_norm_weighted(mat, s, -s, grid=model.grid))
    raise ValueError(f"no density route for kind {model.kind!r}")


@lru_cache(maxsize=4096)
def _weight_fourier_cached(s: float, q: float) -> float:
    def f(x):
        return (1.0 + x * x) ** (-s)

    if q == 0.0:
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
    else:
        # oscillatory tail handled by the QUADPACK Fourier integrator
        val, _ = integrate.quad(f, 0.0, np.inf, weight="cos", wvar=q, limlst=200, limit=400)
    return 2.0 * val


def weight_fourier(s: float, q: float) -> float:
    """Line integral c(q) = int_R <x>^{-2s} e^{iqx} dx (real, even in q)."""
    if s <= 0.5:
        raise ValueError("c(q) diverges for s <= 1/2")
    return _weight_fourier_cached(float(s), abs(float(q)))


def resolvent(model: OperatorModel, lam: float, eps: float, sign: int) -> ResolventRep:
    """R(lambda + i sign eps) for matrix models (eps > 0) or the free-model
    boundary value (eps = 0), as an operator representation."""
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    if model.kind == "free":
        if eps != 0.0:
            raise ValueError("free-model resolvent is realized at eps = 0 via its kernel")
        from .perturbation import free_resolvent_kernel

        return ResolventRep(lam, 0.0, sign, free_resolvent_kernel(lam, sign, model.grid))
    if eps <= 0.0:
        raise ValueError("matrix-model resolvent requires eps > 0")
    z = lam + 1j * sign * eps
    n = model.matrix.shape[0]
    try:
        mat = np.linalg.solve(model.matrix - z * np.eye(n), np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular resolvent solve at z={z}") from exc
    return ResolventRep(lam, eps, sign, DenseMatrix(mat))


class FourierTable:
    """Spline table of the continuum transform of a grid function.

    Evaluating ``fourier_at`` for every node of a dense energy grid is
    quadratic; the transform is analytic in the frequency, so a cubic
    spline over a fine uniform table reproduces it to ~1e-12 at a fraction
    of the cost.  Used by the oscillatory-integral engine.
    """

    def __init__(self, f: GridFunction, q_max: float, oversample: int = 8):
        # spline step small against the x_max-rate oscillation of the transform
        dq = 1.0 / (oversample * max(f.grid.x_max, 1.0))
        n = max(int(np.ceil(2.0 * q_max / dq)) + 9, 64)
        qs = np.linspace(-q_max * 1.02 - 1e-9, q_max * 1.02 + 1e-9, n)
        vals = fourier_at(f, qs)
        self._re = CubicSpline(qs, vals.real)
        self._im = CubicSpline(qs, vals.imag)
        self.q_max = q_max

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return self._re(q) + 1j * self._im(q)


def agmon_scan(values_fn, lam_grid, abscissa=None) -> dict:
    """Least-squares log-log decay fit: values ~ C * lam^slope.

    ``values_fn`` maps a lambda array to positive values; ``abscissa``
    optionally remaps lambda before taking logs (e.g. 1 + |lambda|).
    """
    lam = np.asarray(lam_grid, dtype=float)
    if lam.size < 4:
        raise ValueError("need at least 4 grid points for a decay fit")
    vals = np.asarray(values_fn(lam), dtype=float)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("degenerate fit: values must be positive and finite")
    xs = np.log(lam if abscissa is None else abscissa(lam))
    ys = np.log(vals)
    if np.ptp(ys) < 1e-12:
        raise ValueError("degenerate fit: values are constant")
    slope, intercept = np.polyfit(xs, ys, 1)
    return {"slope": float(slope), "constant": float(np.exp(intercept)),
            "lam": lam, "values": vals}


def envelope_decay_scan(values_fn, lam_grid, window_width, abscissa=None) -> dict:
    """Upper-envelope decay fit over lambda windows of the given width.

    Finite matrix models produce oscillatory norm profiles; the qualitative
    decay rate is read off the windowed upper envelope.
    """
    lam = np.asarray(lam_grid, dtype=float)
    vals = np.asarray(values_fn(lam), dtype=float)
    lo, hi = lam.min(), lam.max()
    n_win = max(int(np.ceil((hi - lo) / window_width)), 4)
    centers, env = [], []
    for i in range(n_win):
        a = lo + i * (hi - lo) / n_win
        b = lo + (i + 1) * (hi - lo) / n_win
        sel = (lam >= a) & (lam <= b)
        if not sel.any():
            continue
        centers.append(0.5 * (a + b))
        env.append(vals[sel].max())
    centers = np.array(centers)
    env = np.array(env)
    if len(env) < 4:
        raise ValueError("too few envelope windows for a fit")
    xs = np.log(centers if abscissa is None else abscissa(centers))
    ys = np.log(env)
    slope, intercept = np.polyfit(xs, ys, 1)
    return {"slope": float(slope), "constant": float(np.exp(intercept)),
            "centers": centers, "envelope": env, "lam": lam, "values": vals}


def adaptive_simpson(f, a: float, b: float, abs_tol: float = 1e-6, max_depth: int = 30) -> float:
    """Adaptive Simpson quadrature (scalar integrand)."""

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, tol, depth):
        xm = 0.5 * (x0 + x2)
        xl = 0.5 * (x0 + xm)
        xr = 0.5 * (xm + x2)
        fl, fr = f(xl), f(xr)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(x0, xm, f0, fl, f1, left, tol / 2.0, depth - 1)
                + recurse(xm, x2, f1, fr, f2, right, tol / 2.0, depth - 1))

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, abs_tol, max_depth)


def window_mass(model: OperatorModel, sf_or_window, phi: GridFunction,
                delta: float = BREAKPOINT_DELTA, abs_tol: float = 1e-6) -> float:
    """int_J <A(lambda) phi, phi> dlambda over the window (spectral measure).

    For matrix models on the exact route this is the plain eigenvalue sum;
    otherwise the density is integrated by adaptive Simpson on each smooth
    component (free model in the k = sqrt(lambda) variable, which removes
    the endpoint Jacobian exactly).
    """
    if hasattr(sf_or_window, "smooth_components"):
        comps = sf_or_window.smooth_components(delta)
        window = sf_or_window.window
    else:
        window = tuple(sf_or_window)
        comps = [window]
    if model.kind in ("hermitian", "stark_fd") and model.spectral_route == "exact":
        lo, hi = window
        sel = (model.eigvals > lo) & (model.eigvals < hi)
        c = model.eigvecs.conj().T @ phi.values
        return float(model.grid.spacing * np.sum(np.abs(c[sel]) ** 2))
    total = 0.0
    for lo, hi in comps:
        if model.kind == "free":
            klo, khi = np.sqrt(max(lo, 0.0) + 1e-300), np.sqrt(hi)

            def g(k):
                return 2.0 * k * density_pairing(model, k * k, phi, phi).real

            total += adaptive_simpson(g, klo, khi, abs_tol)
        else:
            def g(lam):
                return density_pairing(model, lam, phi, phi).real

            total += adaptive_simpson(g, lo, hi, abs_tol)
    return float(total)
