"""Dense strictly convex QP solver, dual active-set method of Goldfarb and Idnani.

Solves::

    minimize    1/2 x'Hx + f'x
    subject to  A_eq x  = b_eq
                A_in x >= b_in

The solver keeps ``J = L^-T Q`` and the upper-triangular ``R`` of the
factorization ``J' N = [R; 0]`` of the active constraint normals ``N``.
Constraints enter through Householder reflections and leave through Givens
rotations, so each iteration costs O(d^2).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

REGULARIZATION = 1e-10
# fraction of a constraint normal (in the H^-1 metric) that must lie outside
# the span of the active normals for a primal step to exist
_DEPENDENCE_TOL = 1e-13


class QpError(RuntimeError):
    pass


class QpInfeasible(QpError):
    pass


class QpDegenerate(QpError):
    """Equality constraints are linearly dependent."""


class QpIterationLimit(QpError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.f = np.asarray(self.f, dtype=float).ravel()
        d = self.f.size
        if self.H.shape != (d, d):
            raise ValueError(f"H has shape {self.H.shape}, expected {(d, d)}")
        if not np.allclose(self.H, self.H.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")
        self.A_eq, self.b_eq = _pair(self.A_eq, self.b_eq, d, "equality")
        self.A_in, self.b_in = _pair(self.A_in, self.b_in, d, "inequality")

    @property
    def dim(self) -> int:
        return self.f.size

    @property
    def n_eq(self) -> int:
        return self.b_eq.size

    @property
    def n_in(self) -> int:
        return self.b_in.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def kkt_residuals(self, sol: "QpSolution") -> dict:
        x = sol.x
        stat = self.H @ x + self.f - self.A_eq.T @ sol.multipliers_eq - self.A_in.T @ sol.multipliers_in
        slack = self.A_in @ x - self.b_in
        return {
            "stationarity": float(np.abs(stat).max(initial=0.0)),
            "equality": float(np.abs(self.A_eq @ x - self.b_eq).max(initial=0.0)),
            "inequality": float(np.maximum(-slack, 0.0).max(initial=0.0)),
            "complementarity": float(np.abs(slack * sol.multipliers_in).max(initial=0.0)),
            "dual": float(np.maximum(-sol.multipliers_in, 0.0).max(initial=0.0)),
        }

    def dump(self, path) -> None:
        """Write the problem as labelled whitespace-separated matrices."""
        with open(Path(path), "w") as fh:
            for name in ("H", "f", "A_eq", "b_eq", "A_in", "b_in"):
                arr = np.atleast_2d(getattr(self, name))
                if name in ("f", "b_eq", "b_in"):
                    arr = arr.reshape(1, -1)
                fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
                if arr.size:
                    np.savetxt(fh, arr, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "QpProblem":
        blocks = {}
        with open(Path(path)) as fh:
            lines = fh.read().splitlines()
        i = 0
        while i < len(lines):
            _, name, rows, cols = lines[i].split()
            rows, cols = int(rows), int(cols)
            stored = rows if rows and cols else 0
            data = [np.array(l.split(), dtype=float) for l in lines[i + 1:i + 1 + stored]]
            blocks[name] = np.array(data).reshape(rows, cols)
            i += 1 + stored
        return cls(blocks["H"], blocks["f"].ravel(), blocks["A_eq"], blocks["b_eq"].ravel(),
                   blocks["A_in"], blocks["b_in"].ravel())


def _pair(A, b, d, kind):
    if A is None or (np.size(A) == 0 and (b is None or np.size(b) == 0)):
        return np.zeros((0, d)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, d):
        raise ValueError(f"{kind} constraints have shape {A.shape} and {b.shape}, expected (m, {d})")
    return A, b


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    active: np.ndarray              # indices of active inequality rows
    multipliers_eq: np.ndarray
    multipliers_in: np.ndarray      # full length, zero for inactive rows
    iterations: int
    status: str = "optimal"
    regularization: float = 0.0
    solve_time: float = field(default=0.0, repr=False)


def solve(problem: QpProblem, tol: float = 1e-8, warm_start=None,
          max_iter: int | None = None) -> QpSolution:
    """Minimize the QP; raises a ``QpError`` subclass on failure.

    ``warm_start`` is a collection of inequality indices that are tried first
    whenever they are violated. It changes the order of the active-set
    changes, never the minimizer.
    """
    t_start = time.perf_counter()
    H, f = problem.H, problem.f
    d = problem.dim
    m_eq, m_in = problem.n_eq, problem.n_in
    if max_iter is None:
        max_iter = 10 * (d + m_eq + m_in)

    reg = 0.0
    if d and np.linalg.eigvalsh(H)[0] < REGULARIZATION:
        reg = REGULARIZATION
        H = H + reg * np.eye(d)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise QpError(f"Hessian is not positive definite: {exc}") from exc

    J = solve_triangular(L, np.eye(d), lower=True).T.copy()   # L^-T
    x = -(J @ (J.T @ f))
    R = np.zeros((d, d))
    q = 0
    act = np.empty(d, dtype=int)        # constraint ids; equalities are -1 - i
    u = np.zeros(d)                      # multipliers of active constraints
    is_eq = np.zeros(d, dtype=bool)
    normals = np.empty((d, d))           # signed normals of the active set

    A_in, b_in = problem.A_in, problem.b_in
    inactive = np.ones(m_in, dtype=bool)
    warm = np.zeros(m_in, dtype=bool)
    if warm_start is not None:
        warm[np.asarray(list(warm_start), dtype=int)] = True
    iterations = 0

    def drop(l):
        nonlocal q
        if not is_eq[l] and act[l] >= 0:
            inactive[act[l]] = True
        R[:q, l:q - 1] = R[:q, l + 1:q]
        for j in range(l, q - 1):
            a, b = R[j, j], R[j + 1, j]
            h = np.hypot(a, b)
            if h == 0.0:
                continue
            c, s = a / h, b / h
            rj = R[j, j:q - 1].copy()
            R[j, j:q - 1] = c * rj + s * R[j + 1, j:q - 1]
            R[j + 1, j:q - 1] = -s * rj + c * R[j + 1, j:q - 1]
            Jj = J[:, j].copy()
            J[:, j] = c * Jj + s * J[:, j + 1]
            J[:, j + 1] = -s * Jj + c * J[:, j + 1]
        R[:, q - 1] = 0.0
        R[q - 1, :] = 0.0
        act[l:q - 1] = act[l + 1:q]
        u[l:q - 1] = u[l + 1:q]
        is_eq[l:q - 1] = is_eq[l + 1:q]
        normals[l:q - 1] = normals[l + 1:q]
        q -= 1

    def add_constraint(cid, n_p, b_p, equality):
        """Make constraint ``n_p . x >= b_p`` (or ``=``) active."""
        nonlocal x, q, iterations
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise QpIterationLimit(f"no convergence within {max_iter} iterations")
            dv = J.T @ n_p
            z = J[:, q:] @ dv[q:]
            if q:
                r = solve_triangular(R[:q, :q], dv[:q], lower=False, check_finite=False)
            else:
                r = np.zeros(0)
            # largest dual step keeping inequality multipliers nonnegative
            t1, l = np.inf, -1
            if q:
                cand = (~is_eq[:q]) & (r > 0.0)
                if cand.any():
                    ratios = np.full(q, np.inf)
                    ratios[cand] = u[:q][cand] / r[cand]
                    l = int(np.argmin(ratios))
                    t1 = ratios[l]
            ztn = float(z @ n_p)
            s = float(n_p @ x - b_p)
            if ztn > _DEPENDENCE_TOL * float(dv @ dv):
                t2 = max(-s / ztn, 0.0)
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                if equality:
                    raise QpDegenerate("equality constraints are linearly dependent")
                raise QpInfeasible("constraints are infeasible")
            if np.isinf(t2):
                u[:q] -= t * r
                u_p += t
                drop(l)
                continue
            x = x + t * z
            u[:q] -= t * r
            u_p += t
            if t2 <= t1:
                v = dv[q:].copy()
                nv = np.linalg.norm(v)
                alpha = -np.copysign(nv, v[0]) if v[0] != 0.0 else -nv
                v[0] -= alpha
                beta = float(v @ v)
                if beta > 0.0:
                    J[:, q:] -= np.outer(J[:, q:] @ v, v * (2.0 / beta))
                R[:q, q] = dv[:q]
                R[q, q] = alpha
                act[q] = cid
                u[q] = u_p
                is_eq[q] = equality
                normals[q] = n_p
                q += 1
                return
            drop(l)

    # equalities first, in order
    eq_sign = np.ones(m_eq)
    for i in range(m_eq):
        a, b = problem.A_eq[i], problem.b_eq[i]
        if a @ x - b > 0:
            eq_sign[i] = -1.0
        add_constraint(-1 - i, eq_sign[i] * a, eq_sign[i] * b, True)

    while m_in:
        slack = A_in @ x - b_in
        viol = inactive & (slack < -tol)
        if not viol.any():
            break
        pool = viol & warm if (viol & warm).any() else viol
        p = int(np.flatnonzero(pool)[np.argmin(slack[pool])])
        inactive[p] = False
        add_constraint(p, A_in[p], b_in[p], False)

    mult_eq = np.zeros(m_eq)
    mult_in = np.zeros(m_in)
    for j in range(q):
        if act[j] < 0:
            i = -1 - act[j]
            mult_eq[i] = eq_sign[i] * u[j]
        else:
            mult_in[act[j]] = u[j]
    active = np.sort(act[:q][act[:q] >= 0])
    return QpSolution(x, problem.objective(x), active, mult_eq, mult_in, iterations,
                      "optimal", reg, time.perf_counter() - t_start)


@dataclass
class ReducedProblem:
    problem: QpProblem
    free: np.ndarray
    fixed_values: np.ndarray   # full-length vector with the fixed entries set
    kept_rows: np.ndarray      # inequality rows of the original problem kept

    def expand(self, x_red) -> np.ndarray:
        x = self.fixed_values.copy()
        x[self.free] = x_red
        return x


def eliminate_fixed_variables(problem: QpProblem, tol: float = 1e-8) -> ReducedProblem:
    """Substitute out variables pinned by single-entry equality rows.

    Equality rows touching more than one variable are kept. Inequality rows
    left without free variables are checked and dropped.
    """
    d = problem.dim
    A_eq, b_eq = problem.A_eq, problem.b_eq
    nnz = np.count_nonzero(A_eq, axis=1)
    single = nnz == 1
    fixed = np.zeros(d, dtype=bool)
    values = np.zeros(d)
    for i in np.flatnonzero(single):
        j = int(np.flatnonzero(A_eq[i])[0])
        v = b_eq[i] / A_eq[i, j]
        if fixed[j] and abs(values[j] - v) > tol:
            raise QpInfeasible(f"variable {j} pinned to two different values")
        fixed[j] = True
        values[j] = v
    free = np.flatnonzero(~fixed)
    fx = np.flatnonzero(fixed)
    H = problem.H[np.ix_(free, free)]
    f = problem.f[free] + problem.H[np.ix_(free, fx)] @ values[fx]
    keep_eq = ~single
    A_eq_r = A_eq[keep_eq][:, free]
    b_eq_r = b_eq[keep_eq] - A_eq[keep_eq][:, fx] @ values[fx]
    A_in_r = problem.A_in[:, free]
    b_in_r = problem.b_in - problem.A_in[:, fx] @ values[fx]
    touches = np.any(A_in_r != 0.0, axis=1)
    if np.any(b_in_r[~touches] > tol):
        raise QpInfeasible("fixed variables violate an inequality")
    kept = np.flatnonzero(touches)
    reduced = QpProblem(H, f, A_eq_r, b_eq_r, A_in_r[kept], b_in_r[kept])
    return ReducedProblem(reduced, free, values, kept)
