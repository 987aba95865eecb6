"""Krylov solvers, the lumped-mass Schur complement preconditioner, Newton and Picard drivers."""

from dataclasses import dataclass, replace
import logging

import numpy as np

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """A linear or nonlinear solve did not meet its tolerance."""


class MaxIterationsError(SolverError):
    pass


class StagnationError(SolverError):
    pass


class NewtonDivergenceError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-12
    atol: float = 1e-14
    max_iter: int = 1000
    restart: int = 30
    verbose: bool = False

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class NewtonReport:
    iterations: int
    residual_norm: float
    converged: bool
    linear_iterations: int = 0


def as_operator(A):
    """Return a matvec callable for a matrix, sparse matrix or callable."""
    if A is None:
        return lambda x: x
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda x: A @ x


def _tol(b_norm, cfg: SolverConfig) -> float:
    return max(cfg.rtol * b_norm, cfg.atol)


def cg(A, b, config: SolverConfig | None = None, x0=None, precond=None, history=None):
    """Preconditioned conjugate gradients for SPD ``A``.

    Stops once ``||b - A x|| <= max(rtol ||b||, atol)``. Residual norms are
    appended to ``history`` when a list is given.
    """
    cfg = config or SolverConfig()
    Av = as_operator(A)
    Pv = as_operator(precond)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    tol = _tol(np.linalg.norm(b), cfg)
    r = b - Av(x) if x0 is not None else b.copy()
    rn = np.linalg.norm(r)
    if history is not None:
        history.append(rn)
    if rn <= tol:
        return x
    z = Pv(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, cfg.max_iter + 1):
        Ap = Av(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError(f"cg: operator not positive definite (p.Ap = {pAp:.3e})")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rn = np.linalg.norm(r)
        if history is not None:
            history.append(rn)
        if rn <= tol:
            # guard against drift of the recursive residual
            r = b - Av(x)
            rn = np.linalg.norm(r)
            if rn <= tol:
                if cfg.verbose:
                    log.info("cg converged in %d iterations, |r| = %.3e", it, rn)
                return x
        z = Pv(r)
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise MaxIterationsError(f"cg: no convergence in {cfg.max_iter} iterations (|r| = {rn:.3e}, tol {tol:.3e})")


def gmres(A, b, precond=None, config: SolverConfig | None = None, x0=None, history=None):
    """Restarted GMRES with right preconditioning.

    Right preconditioning keeps the monitored residual equal to the true one.
    Raises :class:`StagnationError` when a whole restart cycle makes no
    progress and :class:`MaxIterationsError` when the iteration budget runs out.
    """
    cfg = config or SolverConfig()
    Av = as_operator(A)
    Pv = as_operator(precond)
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    tol = _tol(np.linalg.norm(b), cfg)
    r = b - Av(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    if history is not None:
        history.append(beta)
    if beta <= tol:
        return x
    total = 0
    m = cfg.restart
    while total < cfg.max_iter:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        Hm = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        beta_start = beta
        k_used = 0
        for k in range(m):
            Z[k] = Pv(V[k])
            w = Av(Z[k])
            for i in range(k + 1):
                Hm[i, k] = w @ V[i]
                w = w - Hm[i, k] * V[i]
            # one reorthogonalisation pass keeps the basis orthonormal at tight tolerances
            for i in range(k + 1):
                c = w @ V[i]
                Hm[i, k] += c
                w = w - c * V[i]
            Hm[k + 1, k] = np.linalg.norm(w)
            happy = Hm[k + 1, k] == 0
            if not happy:
                V[k + 1] = w / Hm[k + 1, k]
            for i in range(k):
                t = cs[i] * Hm[i, k] + sn[i] * Hm[i + 1, k]
                Hm[i + 1, k] = -sn[i] * Hm[i, k] + cs[i] * Hm[i + 1, k]
                Hm[i, k] = t
            den = np.hypot(Hm[k, k], Hm[k + 1, k])
            if den == 0:
                raise SolverError("gmres: breakdown with singular Hessenberg matrix")
            cs[k] = Hm[k, k] / den
            sn[k] = Hm[k + 1, k] / den
            Hm[k, k] = den
            Hm[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            if history is not None:
                history.append(abs(g[k + 1]))
            if abs(g[k + 1]) <= tol or happy or total >= cfg.max_iter:
                break
        y = np.linalg.solve(np.triu(Hm[:k_used, :k_used]), g[:k_used])
        x = x + y @ Z[:k_used]
        r = b - Av(x)
        beta = np.linalg.norm(r)
        if beta <= tol:
            if cfg.verbose:
                log.info("gmres converged in %d iterations, |r| = %.3e", total, beta)
            return x
        if beta >= beta_start * (1 - 1e-10):
            raise StagnationError(
                f"gmres: stagnated after {total} iterations (|r| = {beta:.3e}, tol {tol:.3e})"
            )
    raise MaxIterationsError(f"gmres: no convergence in {cfg.max_iter} iterations (|r| = {beta:.3e}, tol {tol:.3e})")


class SchurPreconditioner:
    """Approximate inverse of the rest-state linearised shallow water block system.

    The system, for ``a = dt/2``, is::

        [ M1 + a*f*W    -a*g*B^T ] [u]   [r_u]
        [ a*H*B          M2      ] [h] = [r_h]

    with ``B = M2 Div``. The preconditioner drops the Coriolis block, replaces
    M1 by its row-sum lumping ``L``, solves the Helmholtz problem
    ``(M2 + a^2 g H B L^-1 B^T) h = r_h - a H B L^-1 r_u`` with CG and
    back-substitutes ``u = L^-1 (r_u + a g B^T h)``.
    """

    def __init__(self, ops, g: float, H: float, dt: float, inner: SolverConfig | None = None):
        self.L = ops.lumped_M1
        if np.any(self.L <= 0):
            raise SolverError("lumped velocity mass has non-positive entries")
        self.B = ops.div_pairing
        self.M2 = ops.M2
        self.a = 0.5 * dt
        self.g = g
        self.H = H
        self.nu = self.L.size
        Linv = 1.0 / self.L
        self.S = self.M2 + (self.a**2 * g * H) * (self.B.multiply(Linv[None, :]) @ self.B.T)
        self.S = self.S.tocsr()
        self.S_diag = self.S.diagonal()
        self.inner = inner or SolverConfig(rtol=1e-13, atol=1e-300, max_iter=5000)

    def __call__(self, r):
        ru, rh = r[: self.nu], r[self.nu :]
        Linv = 1.0 / self.L
        rhs = rh - self.a * self.H * (self.B @ (Linv * ru))
        h = cg(self.S, rhs, self.inner, precond=lambda v: v / self.S_diag)
        u = Linv * (ru + self.a * self.g * (self.B.T @ h))
        return np.concatenate([u, h])

    matvec = __call__


def schur_precondition(ops, g, H, dt, inner=None) -> SchurPreconditioner:
    return SchurPreconditioner(ops, g, H, dt, inner)


def newton(residual, jacobian, x0, config: SolverConfig | None = None,
           linear_solver=None, max_iter: int = 50):
    """Newton iteration for ``residual(x) = 0``.

    ``jacobian(x)`` returns something :func:`as_operator` accepts.
    ``linear_solver(J, rhs, x, tol)`` solves the correction equation; the
    default is unpreconditioned GMRES. Convergence means
    ``||F|| <= max(rtol ||F(x0)||, atol)``. A Newton step that changes ``x``
    only at round-off level is also accepted, since the residual cannot be
    driven further down in floating point.
    """
    cfg = config or SolverConfig()
    x = np.array(x0, dtype=float)
    F = residual(x)
    r0 = np.linalg.norm(F)
    tol = _tol(r0, cfg)
    rn = r0
    lin_its = 0
    if not np.isfinite(rn):
        raise NewtonDivergenceError("newton: non-finite initial residual")
    for it in range(max_iter + 1):
        if rn <= tol:
            return x, NewtonReport(it, rn, True, lin_its)
        if it == max_iter:
            break
        J = jacobian(x)
        # solve the correction a little below the Newton tolerance
        lin_tol = max(min(0.1 * tol, 1e-3 * rn), 1e-300)
        if linear_solver is None:
            hist = []
            dx = gmres(J, -F, None, SolverConfig(rtol=lin_tol / rn, atol=1e-300,
                                                  max_iter=2000, restart=60), history=hist)
            lin_its += len(hist) - 1
        else:
            dx, k = linear_solver(J, -F, x, lin_tol)
            lin_its += k
        x = x + dx
        F = residual(x)
        rn_new = np.linalg.norm(F)
        if not np.isfinite(rn_new) or rn_new > 1e6 * max(r0, tol):
            raise NewtonDivergenceError(f"newton: residual grew to {rn_new:.3e} (initial {r0:.3e})")
        if cfg.verbose:
            log.info("newton it %d: |F| = %.3e", it + 1, rn_new)
        if np.linalg.norm(dx) <= 8 * EPS * max(np.linalg.norm(x), 1e-300) and rn_new <= 1e3 * tol:
            return x, NewtonReport(it + 1, rn_new, True, lin_its)
        rn = rn_new
    raise MaxIterationsError(f"newton: no convergence in {max_iter} iterations (|F| = {rn:.3e}, tol {tol:.3e})")


def picard(update, x0, k_max: int):
    """Apply ``update`` exactly ``k_max`` times and return the last iterate."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    x = x0
    for _ in range(k_max):
        x = update(x)
    return x
