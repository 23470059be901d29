"""Implicit finite-difference solvers for linear parabolic problems on the torus.

The driver equations all reduce to linear problems of the form

    v_t - c_ij(x,t) v_{x_i x_j} + b_i(x,t) v_{x_i} + c0(x,t) v + g(x,t) = 0

marched forward in time from ``v(x, 0)``, or the backward-in-time variant

    -u_t - c_ij u_{x_i x_j} + ... + g = 0,     u(x, T) given,

which is solved by the substitution ``t -> T - t``: reverse the coefficient
and source slices, run the forward march, reverse the output.  That makes
the backward solver an exact mirror of the forward one (an index
bookkeeping identity, tested as such).

Time stepping is backward Euler: each step solves

    (I + dt * L_j) v_j = v_{j-1} - dt * g_j

with ``L_j`` the spatial operator sampled at the implicit level ``t_j``.
Spatial stencils are the second-order centered ones from
:mod:`fbmfg.torus_grid`, assembled into sparse matrices via periodic shift
operators.  Linear systems go through a direct sparse factorization in one
dimension and a preconditioned Krylov iteration (BiCGStab + ILU) in two;
either way the relative residual is verified against ``RESIDUAL_TOL``.

:func:`solve_fp_conservative` is the positivity/mass-preserving variant for
transport-diffusion of a density,

    m_t = d_ij (A_ij m) + div(m b),

discretized in conservative flux form with first-order upwinding of the
transport velocity ``-b``.  Its implicit system matrix is an M-matrix with
unit column sums, so densities stay nonnegative and the discrete total mass
is conserved exactly (up to the linear-solver residual); this path uses a
direct factorization in both dimensions because its purpose is the
mass-conservation audit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .torus_grid import Field, SpaceTimeField, TorusGrid

__all__ = [
    "SolverError",
    "ParabolicProblem",
    "step_implicit",
    "solve_forward",
    "solve_backward",
    "solve_fp_conservative",
    "constant_diffusion",
    "RESIDUAL_TOL",
]

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solve failed to converge, or a step produced non-finite values."""


# ---------------------------------------------------------------------------
# Periodic shift matrices (cached): S_s @ vec(v) == vec(np.roll(v, s, axis)).
# ---------------------------------------------------------------------------

_shift_cache: dict[tuple[int, int, int, int], sp.csr_matrix] = {}


def _shift_1d(n: int, s: int) -> sp.csr_matrix:
    rows = np.arange(n)
    cols = (rows - s) % n
    return sp.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n))


def _shift_matrix(n: int, dim: int, axis: int, s: int) -> sp.csr_matrix:
    key = (n, dim, axis, s)
    mat = _shift_cache.get(key)
    if mat is None:
        if dim == 1:
            mat = _shift_1d(n, s)
        else:
            eye = sp.identity(n, format="csr")
            s1 = _shift_1d(n, s)
            mat = sp.kron(s1, eye, format="csr") if axis == 0 else sp.kron(eye, s1, format="csr")
        _shift_cache[key] = mat
    return mat


def _second_diff(n: int, dim: int, axis: int, h: float) -> sp.csr_matrix:
    plus = _shift_matrix(n, dim, axis, -1)
    minus = _shift_matrix(n, dim, axis, 1)
    eye = sp.identity(n**dim, format="csr")
    return (plus + minus - 2.0 * eye) / (h * h)


def _first_diff(n: int, dim: int, axis: int, h: float) -> sp.csr_matrix:
    plus = _shift_matrix(n, dim, axis, -1)
    minus = _shift_matrix(n, dim, axis, 1)
    return (plus - minus) / (2.0 * h)


def _cross_diff(n: int, h: float) -> sp.csr_matrix:
    # 4-point cross stencil for the mixed second derivative in 2D.
    return (_first_diff(n, 2, 0, h) @ _first_diff(n, 2, 1, h)).tocsr()


def _diag(values: np.ndarray) -> sp.dia_matrix:
    return sp.diags(np.ravel(values))


# ---------------------------------------------------------------------------
# Problem definition
# ---------------------------------------------------------------------------


def constant_diffusion(dim: int, value: Union[float, np.ndarray]) -> np.ndarray:
    """Build a constant ``(dim, dim)`` diffusion matrix.

    A scalar means ``value * I``.
    """
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return np.eye(dim) * float(value)
    if value.shape != (dim, dim):
        raise ValueError(f"diffusion matrix must be ({dim}, {dim}), got {value.shape}")
    return value.copy()


@dataclass
class ParabolicProblem:
    """Linear parabolic problem data on a :class:`TorusGrid`.

    Parameters
    ----------
    grid : TorusGrid
    diffusion : ndarray
        Second-order coefficients ``c_ij``.  Accepted shapes:
        ``(dim, dim)`` (constant), ``(dim, dim) + spatial`` (x-dependent),
        or with a leading ``nt + 1`` axis for time dependence.
    source : SpaceTimeField or ndarray, optional
        The inhomogeneity ``g`` with our sign convention
        ``v_t - c_ij v_ij + g = 0``; zero when omitted.
    initial, final : Field, optional
        Data for the forward / backward march (whichever applies).
    first_order : ndarray, optional
        Nondivergence drift coefficients ``b_i``; shapes as for
        ``diffusion`` with one coefficient axis ``(dim,)``.
    zeroth_order : ndarray, optional
        Reaction coefficient; scalar/spatial/space-time shapes.
    positivity : bool
        Request the M-matrix-preserving treatment: mixed second-derivative
        terms move to the explicit side, subject to the time-step
        restriction ``dt <= h^2 / (8 max|c_offdiag|)``.
    ellipticity : float
        Declared lower bound for the smallest eigenvalue of ``(c_ij)``;
        validated at construction.
    """

    grid: TorusGrid
    diffusion: np.ndarray
    source: Optional[Union[SpaceTimeField, np.ndarray]] = None
    initial: Optional[Field] = None
    final: Optional[Field] = None
    first_order: Optional[np.ndarray] = None
    zeroth_order: Optional[np.ndarray] = None
    positivity: bool = False
    ellipticity: float = 1e-10

    def __post_init__(self) -> None:
        g = self.grid
        self.diffusion = self._normalize(np.asarray(self.diffusion, float), (g.dim, g.dim))
        if self.first_order is not None:
            self.first_order = self._normalize(np.asarray(self.first_order, float), (g.dim,))
        if self.zeroth_order is not None:
            self.zeroth_order = self._normalize(np.asarray(self.zeroth_order, float), ())
        if isinstance(self.source, SpaceTimeField):
            self.source = self.source.values
        if self.source is not None:
            self.source = np.asarray(self.source, float)
            if self.source.shape != (g.nt + 1, *g.shape):
                raise ValueError(
                    f"source shape {self.source.shape} does not match {(g.nt + 1, *g.shape)}"
                )
        self._validate_coefficients()

    # -- coefficient bookkeeping ------------------------------------------

    def _normalize(self, arr: np.ndarray, comp_shape: tuple[int, ...]) -> np.ndarray:
        """Bring a coefficient array to ``comp_shape`` or ``comp_shape + spatial``,
        optionally with a leading time axis; record time dependence."""
        g = self.grid
        ok_shapes = {
            comp_shape,
            comp_shape + g.shape,
            (g.nt + 1,) + comp_shape,
            (g.nt + 1,) + comp_shape + g.shape,
        }
        if arr.shape not in ok_shapes:
            raise ValueError(
                f"coefficient shape {arr.shape} not understood (expected one of {sorted(ok_shapes)})"
            )
        return arr

    def _is_time_dependent(self, arr: Optional[np.ndarray], comp_rank: int) -> bool:
        if arr is None:
            return False
        return arr.ndim in (1 + comp_rank, 1 + comp_rank + self.grid.dim) and arr.shape[0] == self.grid.nt + 1

    @property
    def time_dependent(self) -> bool:
        return (
            self._is_time_dependent(self.diffusion, 2)
            or self._is_time_dependent(self.first_order, 1)
            or self._is_time_dependent(self.zeroth_order, 0)
        )

    def coeff_slice(self, arr: Optional[np.ndarray], comp_rank: int, j: int) -> Optional[np.ndarray]:
        """Coefficient at slice ``j`` broadcast to ``comp_shape + spatial``."""
        if arr is None:
            return None
        g = self.grid
        if self._is_time_dependent(arr, comp_rank):
            arr = arr[j]
        target = arr.shape[:comp_rank] + g.shape
        if arr.ndim == comp_rank:
            arr = arr.reshape(arr.shape + (1,) * g.dim)
        return np.broadcast_to(arr, target)

    def source_slice(self, j: int) -> Optional[np.ndarray]:
        return None if self.source is None else self.source[j]

    # -- validation --------------------------------------------------------

    def _validate_coefficients(self) -> None:
        if not self.ellipticity > 0:
            raise ValueError("ellipticity floor must be positive")
        for arr in (self.diffusion, self.first_order, self.zeroth_order):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")
        c = self.diffusion
        if self.grid.dim == 1:
            min_eig = np.min(self._component(c, 0, 0))
        else:
            a = self._component(c, 0, 0)
            d = self._component(c, 1, 1)
            b = self._component(c, 0, 1)
            min_eig = np.min(0.5 * ((a + d) - np.sqrt((a - d) ** 2 + 4.0 * b * b)))
        if min_eig < self.ellipticity:
            raise ValueError(
                f"diffusion is not uniformly elliptic: min eigenvalue {min_eig} < {self.ellipticity}"
            )

    def _component(self, c: np.ndarray, i: int, j: int) -> np.ndarray:
        # component (i, j) of the diffusion array regardless of layout
        if c.ndim == 2 or (c.ndim == 2 + self.grid.dim and c.shape[0] == self.grid.dim):
            return c[i, j]
        return c[:, i, j]

    def max_offdiagonal(self) -> float:
        if self.grid.dim == 1:
            return 0.0
        return float(np.max(np.abs(self._component(self.diffusion, 0, 1))))

    def check_positivity_restriction(self) -> None:
        """Enforce the explicit-mixed-term step restriction when requested."""
        if not self.positivity:
            return
        off = self.max_offdiagonal()
        if off > 0.0:
            limit = self.grid.h**2 / (8.0 * off)
            if self.grid.dt > limit:
                raise ValueError(
                    f"positivity-preserving treatment needs dt <= {limit:.3e}, got {self.grid.dt:.3e}"
                )


# ---------------------------------------------------------------------------
# Matrix assembly and linear solves
# ---------------------------------------------------------------------------


def _spatial_operator(problem: ParabolicProblem, j: int, include_mixed: bool) -> sp.csr_matrix:
    """Assemble ``L_j`` with ``L v = -c_ij v_ij + b_i v_i + c0 v`` (nondivergence)."""
    g = problem.grid
    n, dim, h = g.n, g.dim, g.h
    c = problem.coeff_slice(problem.diffusion, 2, j)
    L = sp.csr_matrix((g.num_points, g.num_points))
    for i in range(dim):
        L = L - _diag(c[i, i]) @ _second_diff(n, dim, i, h)
    if dim == 2 and include_mixed:
        off = c[0, 1]
        if np.any(off != 0.0):
            L = L - 2.0 * _diag(off) @ _cross_diff(n, h)
    b = problem.coeff_slice(problem.first_order, 1, j)
    if b is not None:
        for i in range(dim):
            L = L + _diag(b[i]) @ _first_diff(n, dim, i, h)
    c0 = problem.coeff_slice(problem.zeroth_order, 0, j)
    if c0 is not None:
        L = L + _diag(c0)
    return L.tocsr()


class _DirectSolver:
    def __init__(self, A: sp.spmatrix):
        self.A = A.tocsr()
        self._lu = spla.splu(A.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs)


class _KrylovSolver:
    def __init__(self, A: sp.spmatrix):
        self.A = A.tocsr()
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-8, fill_factor=20.0)
        self._M = spla.LinearOperator(A.shape, ilu.solve)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = spla.bicgstab(self.A, rhs, M=self._M, rtol=1e-12, atol=0.0, maxiter=500)
        if info != 0:
            raise SolverError(f"Krylov solver failed to converge (info={info})")
        return x


def _make_solver(A: sp.spmatrix, dim: int, force_direct: bool = False):
    if dim == 1 or force_direct:
        return _DirectSolver(A)
    return _KrylovSolver(A)


def _check_residual(solver, x: np.ndarray, rhs: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite values produced at {context}")
    res = solver.A @ x - rhs
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    rel = float(np.linalg.norm(res)) / scale
    if rel > RESIDUAL_TOL:
        raise SolverError(f"linear solve residual {rel:.2e} exceeds {RESIDUAL_TOL} at {context}")


def _system_solver(problem: ParabolicProblem, j: int, force_direct: bool = False):
    g = problem.grid
    include_mixed = not problem.positivity
    L = _spatial_operator(problem, j, include_mixed)
    A = (sp.identity(g.num_points, format="csr") + g.dt * L).tocsr()
    return _make_solver(A, g.dim, force_direct)


def _explicit_mixed_term(problem: ParabolicProblem, j: int, v_prev_flat: np.ndarray) -> np.ndarray:
    """Mixed-derivative contribution evaluated on the previous slice."""
    g = problem.grid
    if g.dim != 2 or not problem.positivity:
        return np.zeros_like(v_prev_flat)
    c = problem.coeff_slice(problem.diffusion, 2, j)
    off = c[0, 1]
    if not np.any(off != 0.0):
        return np.zeros_like(v_prev_flat)
    cross = _cross_diff(g.n, g.h) @ v_prev_flat
    return 2.0 * np.ravel(off) * cross


def step_implicit(problem: ParabolicProblem, j: int, v_prev: Field) -> Field:
    """One backward-Euler step from slice ``j - 1`` to slice ``j``."""
    g = problem.grid
    if not (1 <= j <= g.nt):
        raise ValueError(f"slice index {j} out of range 1..{g.nt}")
    problem.check_positivity_restriction()
    solver = _system_solver(problem, j)
    vp = np.ravel(v_prev.values)
    rhs = vp + g.dt * _explicit_mixed_term(problem, j, vp)
    src = problem.source_slice(j)
    if src is not None:
        rhs = rhs - g.dt * np.ravel(src)
    x = solver.solve(rhs)
    _check_residual(solver, x, rhs, f"step {j}")
    return Field(g, x.reshape(g.shape))


def solve_forward(problem: ParabolicProblem, *, force_direct: bool = False) -> SpaceTimeField:
    """March the problem from its initial slice to ``T``."""
    g = problem.grid
    if problem.initial is None:
        raise ValueError("solve_forward needs an initial slice")
    if not problem.initial.is_finite():
        raise ValueError("initial slice contains non-finite values")
    problem.check_positivity_restriction()
    out = np.empty((g.nt + 1, *g.shape))
    out[0] = problem.initial.values
    solver = None if problem.time_dependent else _system_solver(problem, 0, force_direct)
    v = np.ravel(out[0]).copy()
    for j in range(1, g.nt + 1):
        step_solver = _system_solver(problem, j, force_direct) if problem.time_dependent else solver
        rhs = v + g.dt * _explicit_mixed_term(problem, j, v)
        src = problem.source_slice(j)
        if src is not None:
            rhs = rhs - g.dt * np.ravel(src)
        v = step_solver.solve(rhs)
        _check_residual(step_solver, v, rhs, f"slice {j}")
        out[j] = v.reshape(g.shape)
    return SpaceTimeField(g, out)


def _reverse_in_time(problem: ParabolicProblem) -> ParabolicProblem:
    def rev(arr: Optional[np.ndarray], comp_rank: int) -> Optional[np.ndarray]:
        if arr is None:
            return None
        if problem._is_time_dependent(arr, comp_rank):
            return np.ascontiguousarray(arr[::-1])
        return arr

    return replace(
        problem,
        diffusion=rev(problem.diffusion, 2),
        source=None if problem.source is None else np.ascontiguousarray(problem.source[::-1]),
        initial=problem.final,
        final=None,
        first_order=rev(problem.first_order, 1),
        zeroth_order=rev(problem.zeroth_order, 0),
    )


def solve_backward(problem: ParabolicProblem, *, force_direct: bool = False) -> SpaceTimeField:
    """Solve ``-u_t - c_ij u_ij + ... + g = 0`` down from the final slice.

    Implemented by time reversal: reverse every time-indexed input, run the
    forward march, reverse the output slices.  Slice ``nt`` of the result
    equals the supplied final slice exactly.
    """
    if problem.final is None:
        raise ValueError("solve_backward needs a final slice")
    reversed_problem = _reverse_in_time(problem)
    w = solve_forward(reversed_problem, force_direct=force_direct)
    return SpaceTimeField(problem.grid, np.ascontiguousarray(w.values[::-1]))


# ---------------------------------------------------------------------------
# Conservative transport-diffusion for densities
# ---------------------------------------------------------------------------


def _upwind_advection_matrix(grid: TorusGrid, velocity: np.ndarray) -> sp.csr_matrix:
    """Conservative upwind discretization of ``m -> -div(m v)``.

    ``velocity`` has shape ``(dim,) + spatial``.  Off-diagonal entries are
    nonnegative and every column sums to zero exactly, which is what makes
    the implicit update both positivity- and mass-preserving.
    """
    n, dim, h = grid.n, grid.dim, grid.h
    N = grid.num_points
    A = sp.csr_matrix((N, N))
    eye = sp.identity(N, format="csr")
    for ax in range(dim):
        v_ax = velocity[ax]
        vf = 0.5 * (v_ax + np.roll(v_ax, -1, axis=ax))  # value at the i+1/2 face
        vf_flat = np.ravel(vf)
        plus = np.maximum(vf_flat, 0.0)
        minus = np.minimum(vf_flat, 0.0)
        take_next = _shift_matrix(n, dim, ax, -1)
        shift_down = _shift_matrix(n, dim, ax, 1)
        flux = _diag(plus) + _diag(minus) @ take_next
        A = A - (1.0 / h) * ((eye - shift_down) @ flux)
    return A.tocsr()


def _conservative_diffusion_matrix(problem: ParabolicProblem, j: int) -> sp.csr_matrix:
    """Discretization of ``m -> d_ii (A_ii m)`` (diagonal part, flux form)."""
    g = problem.grid
    c = problem.coeff_slice(problem.diffusion, 2, j)
    D = sp.csr_matrix((g.num_points, g.num_points))
    for i in range(g.dim):
        D = D + _second_diff(g.n, g.dim, i, g.h) @ _diag(c[i, i])
    return D.tocsr()


def _conservative_cross_term(problem: ParabolicProblem, j: int, m_flat: np.ndarray) -> np.ndarray:
    g = problem.grid
    if g.dim != 2:
        return np.zeros_like(m_flat)
    c = problem.coeff_slice(problem.diffusion, 2, j)
    off = c[0, 1]
    if not np.any(off != 0.0):
        return np.zeros_like(m_flat)
    return 2.0 * (_cross_diff(g.n, g.h) @ (np.ravel(off) * m_flat))


def solve_fp_conservative(problem: ParabolicProblem, drift: np.ndarray) -> SpaceTimeField:
    """Solve ``m_t = d_ij (A_ij m) + div(m b)`` preserving mass and sign.

    Parameters
    ----------
    problem : ParabolicProblem
        Supplies the grid, the diffusion ``A_ij`` and the initial density;
        ``source``, ``first_order`` and ``zeroth_order`` are ignored here.
    drift : ndarray
        The divergence-form drift ``b`` with shape ``(nt+1, dim) + spatial``
        (the transport velocity of the density is ``-b``).

    Mixed diffusion entries are treated explicitly (they are the only terms
    that could break the M-matrix structure); when ``positivity`` is set the
    corresponding time-step restriction is enforced.
    """
    g = problem.grid
    if problem.initial is None:
        raise ValueError("solve_fp_conservative needs an initial density")
    drift = np.asarray(drift, dtype=float)
    if drift.shape != (g.nt + 1, g.dim, *g.shape):
        raise ValueError(
            f"drift shape {drift.shape} does not match {(g.nt + 1, g.dim, *g.shape)}"
        )
    if not np.all(np.isfinite(drift)):
        raise ValueError("drift contains non-finite values")
    problem.check_positivity_restriction()

    out = np.empty((g.nt + 1, *g.shape))
    out[0] = problem.initial.values
    eye = sp.identity(g.num_points, format="csr")
    m = np.ravel(out[0]).copy()
    diffusion_static = not problem._is_time_dependent(problem.diffusion, 2)
    D = _conservative_diffusion_matrix(problem, 0) if diffusion_static else None
    for j in range(1, g.nt + 1):
        Dj = D if diffusion_static else _conservative_diffusion_matrix(problem, j)
        adv = _upwind_advection_matrix(g, -drift[j])
        A = (eye - g.dt * (Dj + adv)).tocsr()
        solver = _DirectSolver(A)
        rhs = m + g.dt * _conservative_cross_term(problem, j, m)
        m = solver.solve(rhs)
        _check_residual(solver, m, rhs, f"fp slice {j}")
        out[j] = m.reshape(g.shape)
    return SpaceTimeField(g, out)
