"""Problem-defining couplings and final costs.

The solver core treats the coupled pair

    -u_t - a_ij u_{x_i x_j} + F(u, m, Du, Dm, x, t) = 0,
     m_t - c_ij m_{x_i x_j} + G(u, m, Du, Dm, D2u, x, t) = 0,

as abstract data: two source callables, two diffusions, declared growth
bounds, and a final-condition map m(T) -> u(T).  This module supplies that
data for the built-in problem families and provides the audits that check a
model against the structural assumptions the fixed-point argument rests on.

Three families are built here.

* Mean-field couplings derived from a Hamiltonian ``H(x, t, p, m)`` and a
  diffusion ``A``: F is H evaluated on the value gradient, and G collects
  the terms that turn the density equation into the transport equation
  ``m_t = d_ij (A_ij m) + div(m H_p)``.  Derivative callables are
  cross-checked against central differences before a model is returned.
* Congestion couplings ``F = m^alpha H1(Du / m^alpha) - f(x, t, m)`` with
  the matching transport terms; the effective drift weakens where the
  density is large.
* The linear backward-forward pair used by the eigenfunction solver
  (``F = 0``, ``G = -Lap u``) whose scaled-identity final condition is the
  canonical non-regularizing example.

Final conditions are represented by :class:`FinalCost`: the map itself plus
constants ``(L_h, C0)`` for the smoothing estimate

    |h[m1] - h[m2]|_C2 <= L_h |m1 - m2|_C1,        C0 = |h[0]|_C2,

and a ``regularizing`` flag.  The convolution cost derives its constants
from an explicit discrete Young/commutation argument (documented at
:func:`final_cost_convolution`), so they are honest bounds at the working
resolution rather than fitted numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .torus_grid import Field, TorusGrid, hessian_values, norm_C1, norm_C2

__all__ = [
    "CouplingModel",
    "FinalCost",
    "HamiltonianSpec",
    "build_mfg_coupling",
    "build_congestion_coupling",
    "decoupled_heat_model",
    "quadratic_mfg_model",
    "congestion_model",
    "linear_counterexample_model",
    "final_cost_convolution",
    "final_cost_constant",
    "final_cost_scaled_identity",
    "periodic_gaussian_kernel",
    "AssumptionReport",
    "validate_assumptions",
]


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CouplingModel:
    """A coupled backward-forward problem in source form.

    Attributes
    ----------
    F : callable
        Source of the backward equation, ``F(u, m, Du, Dm, x, t)``.  Array
        arguments carry a leading component axis where applicable (``Du``,
        ``Dm`` have shape ``(dim,) + spatial``); ``x`` is a tuple of
        coordinate arrays and ``t`` a float.
    G : callable
        Source of the forward equation, ``G(u, m, Du, Dm, D2u, x, t)`` with
        ``D2u`` of shape ``(dim, dim) + spatial``.  G must be affine in
        ``D2u`` for the splitting used by the audits and the solver.
    diffusion_u, diffusion_m : ndarray or callable
        Either a constant ``(dim, dim)`` matrix or a callable mapping a
        :class:`TorusGrid` to a coefficient array accepted by the stepper.
    L_F, L_G : callable
        Declared growth bounds: for arguments bounded by ``M`` (density in
        ``[1/M, M]``), ``|F| <= L_F(M)`` and ``|G| <= L_G(M) (1 + |D2u|)``,
        with the same constants bounding the Lipschitz ratios.
    optimal_drift : callable, optional
        Velocity ``b(u, m, Du, Dm, x, t)`` such that the forward equation
        is equivalent to ``m_t = d_ij (c_ij m) + div(m b)``; None when the
        model has no divergence form.
    """

    name: str
    dim: int
    F: Callable
    G: Callable
    diffusion_u: object
    diffusion_m: object
    L_F: Callable[[float], float]
    L_G: Callable[[float], float]
    optimal_drift: Optional[Callable] = None

    def diffusion_values(self, grid: TorusGrid, equation: str = "u") -> np.ndarray:
        """Coefficient array for the stepper (``equation`` is 'u' or 'm')."""
        if equation not in ("u", "m"):
            raise ValueError(f"equation must be 'u' or 'm', got {equation!r}")
        src = self.diffusion_u if equation == "u" else self.diffusion_m
        out = np.asarray(src(grid) if callable(src) else src, dtype=float)
        return out


def _eye_like(dim: int, spatial: tuple[int, ...]) -> np.ndarray:
    eye = np.eye(dim).reshape((dim, dim) + (1,) * len(spatial))
    return np.broadcast_to(eye, (dim, dim) + tuple(spatial))


def _constant_matrix(A, dim: int) -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.shape != (dim, dim):
        raise ValueError(f"diffusion must be scalar or ({dim}, {dim}), got {arr.shape}")
    return arr.copy()


# ---------------------------------------------------------------------------
# Hamiltonian-driven mean-field couplings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Callables defining ``H(x, t, p, m)`` and the diffusion ``A``.

    ``x`` is a tuple of coordinate arrays, ``p`` has a leading ``(dim,)``
    axis, and every callable is vectorized over the trailing shape.  The
    derivative fields are the ones the transport terms need:

    * ``H_p``  -> ``(dim,) + shape``   gradient in p,
    * ``H_pp`` -> ``(dim, dim) + shape`` Hessian in p,
    * ``H_mp`` -> ``(dim,) + shape``   mixed m,p derivative (None = 0),
    * ``H_xp_div`` -> ``shape``        the summed trace ``sum_i d^2 H / dx_i dp_i``
      (None = 0).

    ``A`` is a constant matrix (scalar, ``(dim, dim)`` array, or None for
    the identity) or a callable ``A(x, t) -> (dim, dim) + shape``.  For a
    spatially varying A the divergence callables ``A_div1(x, t) ->
    (dim,) + shape`` (``sum_i d_i A_ij``) and ``A_div2(x, t) -> shape``
    (``sum_ij d_i d_j A_ij``) must be supplied; all declared derivatives are
    checked against central differences when the model is built.
    """

    H: Callable
    H_p: Callable
    H_pp: Callable
    H_mp: Optional[Callable] = None
    H_xp_div: Optional[Callable] = None
    A: object = None
    A_div1: Optional[Callable] = None
    A_div2: Optional[Callable] = None


def _shift_x(x: Sequence[np.ndarray], axis: int, delta: float) -> tuple:
    out = list(x)
    out[axis] = out[axis] + delta
    return tuple(out)


def _assert_close(label: str, analytic, numeric, tol: float) -> None:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.shape != numeric.shape:
        raise ValueError(
            f"{label}: declared callable returned shape {analytic.shape}, "
            f"expected {numeric.shape}"
        )
    scale = max(1.0, float(np.max(np.abs(analytic))))
    err = float(np.max(np.abs(analytic - numeric)))
    if not math.isfinite(err) or err > tol * scale:
        raise ValueError(
            f"{label}: declared derivative differs from a central-difference "
            f"probe by {err:.3e} (allowed {tol * scale:.3e}); "
            "check the supplied callables"
        )


def _fd_validate_hamiltonian(
    spec: HamiltonianSpec,
    H_mp: Callable,
    H_xp_div: Callable,
    dim: int,
    seed: int,
    step: float = 1e-3,
    tol: float = 1e-4,
) -> None:
    """Probe every declared derivative against central differences."""
    rng = np.random.default_rng(seed)
    S = 24
    x = tuple(rng.uniform(0.0, 1.0, S) for _ in range(dim))
    p = rng.uniform(-2.0, 2.0, (dim, S))
    m = rng.uniform(0.6, 1.8, S)
    for t in (0.0, 0.37):
        Hp = np.asarray(spec.H_p(x, t, p, m), dtype=float)
        num_p = np.empty_like(Hp)
        num_pp = np.empty((dim, dim, S))
        for j in range(dim):
            dp = np.zeros_like(p)
            dp[j] = step
            num_p[j] = (spec.H(x, t, p + dp, m) - spec.H(x, t, p - dp, m)) / (2 * step)
            num_pp[:, j] = (
                np.asarray(spec.H_p(x, t, p + dp, m), dtype=float)
                - np.asarray(spec.H_p(x, t, p - dp, m), dtype=float)
            ) / (2 * step)
        _assert_close("H_p", Hp, num_p, tol)
        _assert_close("H_pp", spec.H_pp(x, t, p, m), num_pp, tol)
        num_mp = (
            np.asarray(spec.H_p(x, t, p, m + step), dtype=float)
            - np.asarray(spec.H_p(x, t, p, m - step), dtype=float)
        ) / (2 * step)
        _assert_close("H_mp", H_mp(x, t, p, m), num_mp, tol)
        num_xp = np.zeros(S)
        for i in range(dim):
            num_xp += (
                np.asarray(spec.H_p(_shift_x(x, i, step), t, p, m), dtype=float)[i]
                - np.asarray(spec.H_p(_shift_x(x, i, -step), t, p, m), dtype=float)[i]
            ) / (2 * step)
        _assert_close("H_xp_div", H_xp_div(x, t, p, m), num_xp, tol)


def _fd_validate_diffusion(
    A: Callable,
    A_div1: Callable,
    A_div2: Callable,
    dim: int,
    seed: int,
    step: float = 1e-3,
    tol: float = 1e-4,
) -> None:
    rng = np.random.default_rng(seed + 1)
    S = 24
    x = tuple(rng.uniform(0.0, 1.0, S) for _ in range(dim))
    for t in (0.0, 0.37):
        def Aat(xs):
            return np.asarray(A(xs, t), dtype=float)

        div1 = np.zeros((dim, S))
        for i in range(dim):
            dA = (Aat(_shift_x(x, i, step)) - Aat(_shift_x(x, i, -step))) / (2 * step)
            div1 += dA[i]
        _assert_close("A_div1", A_div1(x, t), div1, tol)
        div2 = np.zeros(S)
        base = Aat(x)
        for i in range(dim):
            d2 = (
                Aat(_shift_x(x, i, step)) - 2.0 * base + Aat(_shift_x(x, i, -step))
            ) / step**2
            div2 += d2[i, i]
        for i in range(dim):
            for j in range(dim):
                if i == j:
                    continue
                cross = (
                    Aat(_shift_x(_shift_x(x, i, step), j, step))
                    - Aat(_shift_x(_shift_x(x, i, step), j, -step))
                    - Aat(_shift_x(_shift_x(x, i, -step), j, step))
                    + Aat(_shift_x(_shift_x(x, i, -step), j, -step))
                ) / (4 * step**2)
                div2 += cross[i, j]
        _assert_close("A_div2", A_div2(x, t), div2, tol)


def build_mfg_coupling(
    spec: HamiltonianSpec,
    *,
    dim: int,
    L_F: Callable[[float], float],
    L_G: Callable[[float], float],
    name: str = "mfg-coupling",
    validate: bool = True,
    seed: int = 0,
) -> CouplingModel:
    """Assemble the coupled sources from a Hamiltonian.

    The backward source is ``F = H(x, t, Du, m)``; the forward source is

        G = -(sum_ij d_i d_j A_ij) m - 2 sum_j (sum_i d_i A_ij) Dm_j
            - H_p . Dm - m (H_xp_div + H_pp : D2u + H_mp . Dm),

    which is exactly ``c_ij m_ij - d_ij(A_ij m) - div(m H_p)``, so the
    forward equation transports the density along ``H_p``.  Both equations
    use ``A`` as diffusion.  With ``validate=True`` (the default) every
    declared derivative is probed against central differences on seeded
    sample points and the build fails loudly on disagreement.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    H_mp = spec.H_mp or (lambda x, t, p, m: np.zeros((dim,) + np.shape(m)))
    H_xp_div = spec.H_xp_div or (lambda x, t, p, m: np.zeros(np.shape(m)))
    A_is_callable = callable(spec.A)
    if not A_is_callable and (spec.A_div1 is not None or spec.A_div2 is not None):
        raise ValueError("divergence callables only make sense for a callable A")
    if A_is_callable and (spec.A_div1 is None) != (spec.A_div2 is None):
        raise ValueError("a callable A needs both A_div1 and A_div2 (or neither)")
    A_div1 = spec.A_div1 or (lambda x, t: np.zeros((dim,) + np.shape(x[0])))
    A_div2 = spec.A_div2 or (lambda x, t: np.zeros(np.shape(x[0])))

    if validate:
        _fd_validate_hamiltonian(spec, H_mp, H_xp_div, dim, seed)
        if A_is_callable:
            _fd_validate_diffusion(spec.A, A_div1, A_div2, dim, seed)

    def F(u, m, Du, Dm, x, t):
        return np.asarray(spec.H(x, t, Du, m), dtype=float)

    def G(u, m, Du, Dm, D2u, x, t):
        Hp = np.asarray(spec.H_p(x, t, Du, m), dtype=float)
        Hpp = np.asarray(spec.H_pp(x, t, Du, m), dtype=float)
        out = -np.sum(Hp * Dm, axis=0)
        div_term = (
            np.asarray(H_xp_div(x, t, Du, m), dtype=float)
            + np.sum(Hpp * D2u, axis=(0, 1))
            + np.sum(np.asarray(H_mp(x, t, Du, m), dtype=float) * Dm, axis=0)
        )
        out = out - m * div_term
        if A_is_callable:
            out = out - 2.0 * np.sum(np.asarray(A_div1(x, t), dtype=float) * Dm, axis=0)
            out = out - np.asarray(A_div2(x, t), dtype=float) * m
        return out

    def drift(u, m, Du, Dm, x, t):
        return np.asarray(spec.H_p(x, t, Du, m), dtype=float)

    if A_is_callable:
        def diffusion(grid: TorusGrid) -> np.ndarray:
            coords = grid.coordinates()
            return np.stack(
                [np.asarray(spec.A(coords, float(t)), dtype=float) for t in grid.times()]
            )
    else:
        diffusion = _constant_matrix(spec.A if spec.A is not None else 1.0, dim)

    return CouplingModel(
        name=name, dim=dim, F=F, G=G,
        diffusion_u=diffusion, diffusion_m=diffusion,
        L_F=L_F, L_G=L_G, optimal_drift=drift,
    )


# ---------------------------------------------------------------------------
# Congestion couplings
# ---------------------------------------------------------------------------


def build_congestion_coupling(
    alpha: float,
    *,
    dim: int = 1,
    A=1.0,
    H1: Optional[Callable] = None,
    H1_p: Optional[Callable] = None,
    H1_pp: Optional[Callable] = None,
    f: Optional[Callable] = None,
    L_F: Optional[Callable[[float], float]] = None,
    L_G: Optional[Callable[[float], float]] = None,
    name: str = "congestion",
    validate: bool = True,
    seed: int = 0,
) -> CouplingModel:
    """Congestion coupling ``F = m^alpha H1(Du / m^alpha) - f(x, t, m)``.

    With ``q = Du / m^alpha`` the forward source is

        G = -H1_p(q) . Dm - m^(1-alpha) (H1_pp(q) : D2u)
            + alpha m^(-alpha) (H1_pp(q) Du) . Dm,

    which equals ``-div(m H1_p(q))`` exactly, so mass is transported along
    the congestion-weakened drift ``H1_p(q)``.  At ``alpha = 0`` this
    reduces to the Hamiltonian coupling with ``H = H1(p) - f``; at
    ``alpha = 1`` with the default quadratic ``H1`` the drift terms cancel
    and ``G = -Lap u``.

    ``H1`` defaults to ``|q|^2 / 2`` (with exact derivatives) and ``f`` to
    the density itself; the sources raise on any nonpositive density, since
    ``m^alpha`` leaves its domain there.  Custom ``H1`` requires all of
    ``H1_p``/``H1_pp`` plus declared ``L_F``/``L_G``; the derivative pair is
    probed against central differences unless ``validate=False``.  A is a
    constant matrix (scalar or ``(dim, dim)``).
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if not alpha >= 0.0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    custom_H1 = H1 is not None
    if custom_H1 and (H1_p is None or H1_pp is None):
        raise ValueError("a custom H1 needs H1_p and H1_pp as well")
    if custom_H1 or f is not None:
        if L_F is None or L_G is None:
            raise ValueError(
                "custom congestion terms need declared growth bounds L_F and L_G"
            )
    if not custom_H1:
        H1 = lambda q: 0.5 * np.sum(q * q, axis=0)
        H1_p = lambda q: q
        H1_pp = lambda q: _eye_like(q.shape[0], q.shape[1:])
    if f is None:
        f = lambda x, t, m: m
    if L_F is None:
        L_F = lambda M: (1.0 + alpha) * M ** (3.0 + alpha) + M ** (2.0 + alpha) + M + 1.0
    if L_G is None:
        L_G = (
            lambda M: (1.0 + alpha)
            * (1.0 + abs(1.0 - alpha))
            * math.sqrt(dim)
            * (M + 1.0) ** (3.0 + alpha)
            + 1.0
        )

    if validate and custom_H1:
        rng = np.random.default_rng(seed)
        q = rng.uniform(-2.0, 2.0, (dim, 24))
        step, tol = 1e-3, 1e-4
        num_p = np.empty_like(q)
        num_pp = np.empty((dim, dim, q.shape[1]))
        for j in range(dim):
            dq = np.zeros_like(q)
            dq[j] = step
            num_p[j] = (H1(q + dq) - H1(q - dq)) / (2 * step)
            num_pp[:, j] = (
                np.asarray(H1_p(q + dq), dtype=float)
                - np.asarray(H1_p(q - dq), dtype=float)
            ) / (2 * step)
        _assert_close("H1_p", H1_p(q), num_p, tol)
        _assert_close("H1_pp", H1_pp(q), num_pp, tol)

    def _check_density(m):
        if np.any(np.asarray(m) <= 0.0):
            raise ValueError("congestion coupling needs a strictly positive density")

    def F(u, m, Du, Dm, x, t):
        _check_density(m)
        ma = np.power(m, alpha)
        return ma * H1(Du / ma) - np.asarray(f(x, t, m), dtype=float)

    def G(u, m, Du, Dm, D2u, x, t):
        _check_density(m)
        ma = np.power(m, alpha)
        q = Du / ma
        Hp = np.asarray(H1_p(q), dtype=float)
        Hpp = np.asarray(H1_pp(q), dtype=float)
        out = -np.sum(Hp * Dm, axis=0)
        out = out - np.power(m, 1.0 - alpha) * np.sum(Hpp * D2u, axis=(0, 1))
        hess_dot_du = np.sum(Hpp * Du[np.newaxis], axis=1)
        out = out + (alpha / ma) * np.sum(hess_dot_du * Dm, axis=0)
        return out

    def drift(u, m, Du, Dm, x, t):
        _check_density(m)
        return np.asarray(H1_p(Du / np.power(m, alpha)), dtype=float)

    diffusion = _constant_matrix(A, dim)
    return CouplingModel(
        name=name, dim=dim, F=F, G=G,
        diffusion_u=diffusion, diffusion_m=diffusion,
        L_F=L_F, L_G=L_G, optimal_drift=drift,
    )


# ---------------------------------------------------------------------------
# Prebuilt models
# ---------------------------------------------------------------------------


def decoupled_heat_model(dim: int = 1) -> CouplingModel:
    """Two independent heat equations: ``F = G = 0``, unit diffusion."""
    return CouplingModel(
        name="decoupled-heat", dim=dim,
        F=lambda u, m, Du, Dm, x, t: np.zeros(np.shape(u)),
        G=lambda u, m, Du, Dm, D2u, x, t: np.zeros(np.shape(u)),
        diffusion_u=np.eye(dim), diffusion_m=np.eye(dim),
        L_F=lambda M: 0.0, L_G=lambda M: 0.0,
        optimal_drift=lambda u, m, Du, Dm, x, t: np.zeros((dim,) + np.shape(u)),
    )


def quadratic_mfg_model(dim: int = 1) -> CouplingModel:
    """Quadratic Hamiltonian ``H = |p|^2 / 2 - m`` with diffusion ``I / 2``.

    The sources come out as ``F = |Du|^2 / 2 - m`` and
    ``G = -Du . Dm - m Lap u``.
    """
    spec = HamiltonianSpec(
        H=lambda x, t, p, m: 0.5 * np.sum(p * p, axis=0) - m,
        H_p=lambda x, t, p, m: p,
        H_pp=lambda x, t, p, m: _eye_like(p.shape[0], p.shape[1:]),
        A=0.5 * np.eye(dim),
    )
    return build_mfg_coupling(
        spec, dim=dim, name="quadratic-mfg",
        L_F=lambda M: 0.5 * M * M + M + 1.0,
        L_G=lambda M: math.sqrt(dim) * (M + 1.0) ** 2,
    )


def congestion_model(dim: int = 1, alpha: float = 1.0) -> CouplingModel:
    """Default congestion coupling (quadratic ``H1``, ``f = m``, unit A)."""
    return build_congestion_coupling(alpha, dim=dim)


def linear_counterexample_model(alpha: float = -3.0, dim: int = 1) -> CouplingModel:
    """The linear pair ``F = 0``, ``G = -Lap u`` with unit diffusions.

    Pair it with :func:`final_cost_scaled_identity` (same ``alpha``) to
    reproduce in the iteration what the eigenfunction solver predicts in
    closed form, including the loss of solvability past the critical
    horizon when ``alpha < -2``.
    """
    def G(u, m, Du, Dm, D2u, x, t):
        return -np.trace(D2u, axis1=0, axis2=1)

    return CouplingModel(
        name="linear-counterexample", dim=dim,
        F=lambda u, m, Du, Dm, x, t: np.zeros(np.shape(u)),
        G=G,
        diffusion_u=np.eye(dim), diffusion_m=np.eye(dim),
        L_F=lambda M: 0.0, L_G=lambda M: math.sqrt(dim),
        optimal_drift=None,
    )


# ---------------------------------------------------------------------------
# Final conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FinalCost:
    """Final-condition map ``m(T) -> u(T)`` with its smoothing constants."""

    fn: Callable[[Field], Field]
    L_h: float
    C0: float
    regularizing: bool
    label: str
    kernel: Optional[np.ndarray] = None

    def __call__(self, m: Field) -> Field:
        return self.fn(m)


def periodic_gaussian_kernel(
    grid: TorusGrid, sigma: Optional[float] = None, support_radius: int = 3
) -> np.ndarray:
    """Periodized Gaussian on the grid, normalized to exact unit mass.

    The periodization sums integer translates with ``|r| <= support_radius``
    (ample for any sigma a few grid cells wide); the discrete normalization
    makes ``sum psi h^dim = 1`` hold exactly, so convolution against the
    kernel preserves constants and total mass to rounding.  ``sigma`` is
    the Gaussian width in torus units and defaults to four grid cells;
    ``sigma = 0`` degenerates to the discrete delta (no smoothing).
    """
    if sigma is None:
        sigma = 4.0 * grid.h
    if sigma < 0.0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be finite and nonnegative, got {sigma}")
    if sigma == 0.0:
        kern = np.zeros(grid.shape)
        kern[(0,) * grid.dim] = 1.0 / grid.h**grid.dim
        return kern
    x = np.arange(grid.n) * grid.h
    profile = np.zeros(grid.n)
    for r in range(-support_radius, support_radius + 1):
        profile += np.exp(-0.5 * ((x + r) / sigma) ** 2)
    kern = profile if grid.dim == 1 else np.outer(profile, profile)
    kern = kern / (kern.sum() * grid.h**grid.dim)
    return kern


def final_cost_convolution(
    grid: TorusGrid,
    *,
    c0: float = 0.0,
    c1: float = 1.0,
    h0: Optional[Callable] = None,
    derivative_bounds: Optional[tuple[float, float, float]] = None,
    input_range: Optional[float] = None,
    sigma: Optional[float] = None,
    support_radius: int = 3,
    allow_degenerate: bool = False,
    label: str = "convolution",
) -> FinalCost:
    """Smoothing final condition ``h[m] = h0(m * psi)``.

    ``psi`` is the unit-mass periodized Gaussian of
    :func:`periodic_gaussian_kernel` and ``*`` the discrete periodic
    convolution with quadrature weight ``h^dim`` (computed by FFT).  The
    outer function is affine, ``h0(s) = c0 + c1 s``, unless a callable
    ``h0`` is given together with ``derivative_bounds = (b1, b2, b3)``
    (bounds on ``|h0'|, |h0''|, |h0'''|``) valid on ``|s| <= input_range``;
    in that case the constant below is proved for densities inside the C1
    ball ``|m|_C1 <= input_range``, and evaluation rejects arguments
    outside it.

    The Lipschitz constant is an explicit bound, derived in two steps for
    ``e = w * psi`` with ``w = m1 - m2``:

    * the difference stencils are shift-invariant, so they commute with
      the periodic convolution, and the kernel is nonnegative with unit
      mass: ``|e| <= |w|`` and ``|De| <= |Dw|`` pointwise;
    * for the second derivative both differences land on the kernel,
      ``(D2 e)_ik = w * (D2 psi)_ik``, and discrete Young gives
      ``|D2 e|_F <= A2 max|w|`` with
      ``A2 = (sum_ik |(D2 psi)_ik|_1^2)^(1/2)`` in quadrature-weighted l1
      norms of exactly the stencils the norms use.

    Hence for the affine case ``L_h = |c1| (1 + A2)`` satisfies
    ``|h[m1] - h[m2]|_C2 <= L_h |m1 - m2|_C1`` for arbitrary grid
    functions at this resolution, with no fitted constants.  For a general
    ``h0`` the chain rule on top of the same kernel bounds gives the
    (conservative) constant

        L_h = b1 (2 + A2) + b2 R (3 + A2) + b3 R^2,

    with ``R = input_range``: unit kernel mass propagates ``|m|_C1 <= R``
    to the smoothed field and its gradient, and ``A2`` covers its second
    derivative.  ``C0 = |h[0]|_C2`` is evaluated, not declared.  The delta
    kernel (``sigma = 0``) makes ``A2`` grow like ``1/h^2`` — the constant
    stays true at fixed resolution but certifies no smoothing, so it must
    be requested with ``allow_degenerate=True`` and is marked
    non-regularizing.
    """
    kernel = periodic_gaussian_kernel(grid, sigma=sigma, support_radius=support_radius)
    degenerate = sigma == 0.0
    if degenerate and not allow_degenerate:
        raise ValueError(
            "sigma = 0 gives the identity (no smoothing); pass allow_degenerate=True "
            "to build it anyway"
        )
    hess = hessian_values(kernel, grid.h, grid.dim)
    weight = grid.h**grid.dim
    A2 = math.sqrt(
        sum(
            float(np.sum(np.abs(hess[i, k])) * weight) ** 2
            for i in range(grid.dim)
            for k in range(grid.dim)
        )
    )
    if h0 is not None:
        if derivative_bounds is None or input_range is None:
            raise ValueError("a callable h0 needs derivative_bounds and input_range")
        b1, b2, b3 = (float(b) for b in derivative_bounds)
        if min(b1, b2, b3) < 0.0 or not input_range > 0.0:
            raise ValueError("derivative bounds must be nonnegative and input_range positive")
        L_h = (
            b1 * (2.0 + A2)
            + b2 * input_range * (3.0 + A2)
            + b3 * input_range**2
        )
    else:
        L_h = abs(c1) * (1.0 + A2)
    kernel_hat = np.fft.fftn(kernel)

    def smooth(values: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifftn(np.fft.fftn(values) * kernel_hat)) * weight

    def fn(m: Field) -> Field:
        if m.values.shape != kernel.shape:
            raise ValueError(
                f"density shape {m.values.shape} does not match the cost grid {kernel.shape}"
            )
        e = smooth(m.values)
        if h0 is None:
            out = c0 + c1 * e
        else:
            size = norm_C1(m)
            if size > input_range * (1.0 + 1e-12):
                raise ValueError(
                    f"density has C1 norm {size:.3g}, outside the declared "
                    f"range {input_range:.3g} of h0's derivative bounds"
                )
            out = np.asarray(h0(e), dtype=float)
        return Field(m.grid, out)

    C0 = norm_C2(fn(Field.zeros(grid)))
    return FinalCost(
        fn=fn, L_h=float(L_h), C0=float(C0),
        regularizing=not degenerate, label=label, kernel=kernel,
    )


def final_cost_constant(u_T: Field) -> FinalCost:
    """Final condition that ignores the density: ``h[m] = u_T``."""
    values = u_T.values.copy()

    def fn(m: Field) -> Field:
        if m.values.shape != values.shape:
            raise ValueError(
                f"density shape {m.values.shape} does not match the cost data {values.shape}"
            )
        return Field(m.grid, values.copy())

    return FinalCost(
        fn=fn, L_h=0.0, C0=norm_C2(u_T), regularizing=True, label="constant",
    )


def final_cost_scaled_identity(scale: float) -> FinalCost:
    """Pointwise final condition ``h[m] = scale * m`` — deliberately rough.

    The identity does not smooth: no constant lets ``|h[m]|_C2`` be
    controlled by ``|m|_C1`` uniformly in the resolution, which is exactly
    the mechanism behind the critical-horizon failure of the linear pair.
    The stored ``L_h = |scale|`` is only the zeroth/first-order Lipschitz
    constant (enough for the truncation-level bookkeeping); the cost is
    flagged ``regularizing=False`` and downstream users must treat it as
    outside the contraction theory.
    """
    scale = float(scale)

    def fn(m: Field) -> Field:
        return Field(m.grid, scale * m.values)

    return FinalCost(
        fn=fn, L_h=abs(scale), C0=0.0, regularizing=False, label="scaled-identity",
    )


# ---------------------------------------------------------------------------
# Assumption audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the sampled structural audit of a coupling model.

    Ratios are worst observed value over declared bound (so anything above
    one is a violation); the affinity defect is the worst midpoint error of
    G in its Hessian slot, normalized by the magnitude of G.  The audit
    reports, it does not raise: a flagged model is still usable, the flags
    say which declared constant its sources outgrew.
    """

    K: float
    samples: int
    bound_F_ratio: float
    lipschitz_F_ratio: float
    bound_G_ratio: float
    lipschitz_G_ratio: float
    affine_defect: float
    flags: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.flags

    def describe(self) -> str:
        lines = [
            f"structural audit at K = {self.K:g} ({self.samples} samples)",
            f"  |F| bound ratio        {self.bound_F_ratio:.3e}",
            f"  F Lipschitz ratio      {self.lipschitz_F_ratio:.3e}",
            f"  |G| bound ratio        {self.bound_G_ratio:.3e}",
            f"  G Lipschitz ratio      {self.lipschitz_G_ratio:.3e}",
            f"  G affinity defect      {self.affine_defect:.3e}",
        ]
        if self.flags:
            lines += [f"  FLAG: {f}" for f in self.flags]
        else:
            lines.append("  all declared bounds hold on the sample")
        return "\n".join(lines)


def _ratio(value: float, bound: float) -> float:
    if bound > 0.0:
        return value / bound
    return 0.0 if value <= 1e-12 else math.inf


def validate_assumptions(
    model: CouplingModel,
    K: float,
    *,
    samples: int = 200,
    seed: int = 0,
) -> AssumptionReport:
    """Sampled audit of the declared structure of ``model`` at level ``K``.

    Draws points with ``|u|, |Du|, |Dm| <= K`` and density in ``[1/K, K]``
    (plus unrestricted Hessian slots) and checks, per sample,

    * ``|F| <= L_F(K)`` and the F Lipschitz ratio against ``L_F(K)``,
    * ``|G| <= L_G(K) (1 + |D2u|_F)`` and the mixed G Lipschitz ratio
      ``|G(w1, P1) - G(w2, P2)|`` against
      ``L_G(K) [(1 + max|P|) |dw| + |dP|]``,
    * affinity of G in the Hessian slot (midpoint identity).

    At least 100 samples are required so the worst-ratio statistics mean
    something.  Results come back in an :class:`AssumptionReport`.
    """
    if samples < 100:
        raise ValueError(f"need at least 100 samples for the audit, got {samples}")
    M = float(K)
    if not M > 1.0:
        raise ValueError(f"K must exceed 1, got {K}")
    dim = model.dim
    rng = np.random.default_rng(seed)
    S = samples
    x = tuple(rng.uniform(0.0, 1.0, S) for _ in range(dim))

    def draw_args():
        u = rng.uniform(-M, M, S)
        m = rng.uniform(1.0 / M, M, S)
        Du = _clip_magnitude(rng.uniform(-M, M, (dim, S)), M)
        Dm = _clip_magnitude(rng.uniform(-M, M, (dim, S)), M)
        return u, m, Du, Dm

    def draw_hessian():
        P = rng.uniform(-2.0 * M, 2.0 * M, (dim, dim, S))
        return 0.5 * (P + np.swapaxes(P, 0, 1))

    LF, LG = float(model.L_F(M)), float(model.L_G(M))
    bound_F = lip_F = bound_G = lip_G = affine = 0.0
    for t in (0.0, 0.37):
        u1, m1, Du1, Dm1 = draw_args()
        u2, m2, Du2, Dm2 = draw_args()
        P1, P2 = draw_hessian(), draw_hessian()

        F1 = np.asarray(model.F(u1, m1, Du1, Dm1, x, t), dtype=float)
        F2 = np.asarray(model.F(u2, m2, Du2, Dm2, x, t), dtype=float)
        bound_F = max(bound_F, _ratio(float(np.max(np.abs(F1))), LF))
        dw = (
            np.abs(u1 - u2) + np.abs(m1 - m2)
            + _magnitude(Du1 - Du2) + _magnitude(Dm1 - Dm2)
        )
        mask = dw > 1e-12
        if np.any(mask):
            lip_F = max(
                lip_F, _ratio(float(np.max(np.abs(F1 - F2)[mask] / dw[mask])), LF)
            )

        G11 = np.asarray(model.G(u1, m1, Du1, Dm1, P1, x, t), dtype=float)
        G22 = np.asarray(model.G(u2, m2, Du2, Dm2, P2, x, t), dtype=float)
        P1_norm = _frobenius(P1)
        bound_G = max(
            bound_G, _ratio(float(np.max(np.abs(G11) / (1.0 + P1_norm))), LG)
        )
        denom = (1.0 + np.maximum(P1_norm, _frobenius(P2))) * dw + _frobenius(P1 - P2)
        mask = denom > 1e-12
        if np.any(mask):
            lip_G = max(
                lip_G, _ratio(float(np.max(np.abs(G11 - G22)[mask] / denom[mask])), LG)
            )

        G_mid = np.asarray(model.G(u1, m1, Du1, Dm1, 0.5 * (P1 + P2), x, t), dtype=float)
        G12 = np.asarray(model.G(u1, m1, Du1, Dm1, P2, x, t), dtype=float)
        scale = max(1.0, float(np.max(np.abs(G11))), float(np.max(np.abs(G12))))
        affine = max(affine, float(np.max(np.abs(G_mid - 0.5 * (G11 + G12)))) / scale)

    flags = []
    slack = 1.0 + 1e-9
    if bound_F > slack:
        flags.append(f"|F| exceeds declared L_F(K) by factor {bound_F:.3g}")
    if lip_F > slack:
        flags.append(f"F Lipschitz ratio exceeds declared L_F(K) by factor {lip_F:.3g}")
    if bound_G > slack:
        flags.append(f"|G| exceeds declared L_G(K)(1+|D2u|) by factor {bound_G:.3g}")
    if lip_G > slack:
        flags.append(f"G Lipschitz ratio exceeds declared L_G(K) by factor {lip_G:.3g}")
    if affine > 1e-8:
        flags.append(f"G is not affine in its Hessian slot (defect {affine:.3g})")
    return AssumptionReport(
        K=M, samples=samples,
        bound_F_ratio=bound_F, lipschitz_F_ratio=lip_F,
        bound_G_ratio=bound_G, lipschitz_G_ratio=lip_G,
        affine_defect=affine, flags=tuple(flags),
    )


def _magnitude(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(p * p, axis=0))


def _frobenius(P: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(P * P, axis=(0, 1)))


def _clip_magnitude(p: np.ndarray, M: float) -> np.ndarray:
    mag = _magnitude(p)
    factor = np.ones_like(mag)
    over = mag > M
    factor[over] = M / mag[over]
    return p * factor
