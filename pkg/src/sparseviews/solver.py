"""Alternating reweighted least squares for joint view/modality weighting.

For one object descriptor ``o`` and views ``X`` (n x d) the solver minimizes

    ||X^T w - o||^2 + ||X u - w||^2 + lam1 * ||w||_1 + lam2 * sum_i ||u^i||_2

over the view weights ``w`` (length n) and the modality weights ``u``
(length d, split into blocks ``u^i`` by a :class:`ModalityLayout`).

Each iteration majorizes the two non-smooth norms at the current point,
with ``|t|`` replaced by ``sqrt(t^2 + eps^2)``, and solves the resulting
quadratic problems for ``w`` and then ``u`` in closed form. Every step is a
majorize-minimize step on the eps-smoothed objective, so the smoothed
objective never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConfigurationError, InvalidInputError, NumericalError
from .layout import ModalityLayout

U_SOLVERS = ("auto", "dense", "woodbury")
STOP_RULES = ("dual", "strict")


@dataclass(frozen=True)
class ProblemInstance:
    X: np.ndarray
    o: np.ndarray
    layout: ModalityLayout

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        o = np.asarray(self.o, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"X must be a non-empty n x d matrix, got {X.shape}")
        if o.shape != (X.shape[1],):
            raise InvalidInputError(f"o has length {o.size}, X has d={X.shape[1]}")
        if self.layout.d != X.shape[1]:
            raise InvalidInputError(f"layout d={self.layout.d} but X has d={X.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(o))):
            raise InvalidInputError("X and o must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "o", o)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters and stopping rule.

    ``eps`` smooths the norms in the reweighting step and ``delta`` is a
    ridge added to both linear systems (needed when ``lam2 == 0`` and
    ``d > n``). ``u_solver`` picks how the d x d system for ``u`` is solved:
    ``"dense"`` factorizes it directly, ``"woodbury"`` works through an
    n x n system instead, and ``"auto"`` takes the cheaper one.

    ``stop_rule="dual"`` stops on a small relative change of ``(w, u)`` or of
    the smoothed objective. ``"strict"`` instead requires every coordinate of
    ``w`` and every block of ``u`` to have settled relative to its own
    magnitude (floored at ``eps``), which certifies a stationary point of the
    smoothed objective but typically needs several hundred iterations.
    """

    lam1: float = 0.1
    lam2: float = 0.1
    eps: float = 1e-8
    delta: float = 1e-10
    tol: float = 1e-6
    max_iter: int = 100
    u_solver: str = "auto"
    stop_rule: str = "dual"

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ConfigurationError("lam1 and lam2 must be non-negative")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if self.delta < 0:
            raise ConfigurationError("delta must be non-negative")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigurationError("max_iter must be a positive integer")
        if self.u_solver not in U_SOLVERS:
            raise ConfigurationError(f"u_solver must be one of {U_SOLVERS}")
        if self.stop_rule not in STOP_RULES:
            raise ConfigurationError(f"stop_rule must be one of {STOP_RULES}")

    def replace(self, **changes) -> "SolverConfig":
        params = {**self.__dict__, **changes}
        return SolverConfig(**params)


@dataclass
class SolverResult:
    w: np.ndarray
    u: np.ndarray
    objective: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _check_wu(inst: ProblemInstance, w, u):
    w = np.asarray(w, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if w.shape != (inst.n,) or u.shape != (inst.d,):
        raise InvalidInputError(
            f"w/u have lengths {w.size}/{u.size}, instance needs {inst.n}/{inst.d}"
        )
    return w, u


def objective(inst: ProblemInstance, w, u, lam1: float, lam2: float) -> float:
    """Exact (unsmoothed) objective value."""
    w, u = _check_wu(inst, w, u)
    fit = inst.X.T @ w - inst.o
    coupling = inst.X @ u - w
    return float(
        fit @ fit
        + coupling @ coupling
        + lam1 * np.abs(w).sum()
        + lam2 * inst.layout.block_norms(u).sum()
    )


def smoothed_objective(inst: ProblemInstance, w, u, lam1: float, lam2: float, eps: float) -> float:
    w, u = _check_wu(inst, w, u)
    fit = inst.X.T @ w - inst.o
    coupling = inst.X @ u - w
    blocks = inst.layout.block_norms(u)
    return float(
        fit @ fit
        + coupling @ coupling
        + lam1 * np.sqrt(w**2 + eps**2).sum()
        + lam2 * np.sqrt(blocks**2 + eps**2).sum()
    )


def smoothed_gradient(inst: ProblemInstance, w, u, lam1: float, lam2: float, eps: float):
    """Analytic gradient ``(d/dw, d/du)`` of :func:`smoothed_objective`."""
    w, u = _check_wu(inst, w, u)
    X = inst.X
    fit = X.T @ w - inst.o
    coupling = X @ u - w
    gw = 2 * X @ fit - 2 * coupling + lam1 * w / np.sqrt(w**2 + eps**2)
    scale = 1.0 / np.sqrt(inst.layout.block_norms(u) ** 2 + eps**2)
    gu = 2 * X.T @ coupling + lam2 * u * scale[inst.layout.block_index()]
    return gw, gu


def compute_dw(w, eps: float) -> np.ndarray:
    """Diagonal of the l1 reweighting matrix, ``1 / (2 sqrt(w_i^2 + eps^2))``."""
    w = np.asarray(w, dtype=float)
    return 0.5 / np.sqrt(w**2 + eps**2)


def compute_du(u, layout: ModalityLayout, eps: float) -> np.ndarray:
    """One scalar per modality block, ``1 / (2 sqrt(||u^i||^2 + eps^2))``."""
    return 0.5 / np.sqrt(layout.block_norms(u) ** 2 + eps**2)


def _solve_spd(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        factor, lower = cho_factor(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} could not be factorized: {exc}") from exc
    assert np.all(np.diag(factor) > 0), f"{what}: non-positive pivot"
    return cho_solve((factor, lower), b, check_finite=False)


class _Workspace:
    """Per-solve cache of the products of X that do not change between iterations."""

    def __init__(self, inst: ProblemInstance, u_solver: str = "auto"):
        if u_solver not in U_SOLVERS:
            raise ConfigurationError(f"u_solver must be one of {U_SOLVERS}")
        self.inst = inst
        self.blocks = inst.layout.block_index()
        self.XXt = inst.X @ inst.X.T
        self.Xo = inst.X @ inst.o
        if u_solver == "auto":
            u_solver = "woodbury" if inst.d > inst.n else "dense"
        self.u_solver = u_solver

    @cached_property
    def block_grams(self) -> np.ndarray:
        X = self.inst.X
        return np.stack([X[:, s] @ X[:, s].T for s in self.inst.layout.slices()])

    @cached_property
    def XtX(self) -> np.ndarray:
        return self.inst.X.T @ self.inst.X

    def solve_w(self, u, dw, lam1: float, delta: float) -> np.ndarray:
        A = self.XXt + lam1 * np.diag(dw)
        A[np.diag_indices_from(A)] += 1.0 + delta
        return _solve_spd(A, self.Xo + self.inst.X @ u, "w-system")

    def solve_u(self, w, block_diag) -> np.ndarray:
        """Solve ``(X^T X + diag(c)) u = X^T w`` with ``c`` constant on each block."""
        X = self.inst.X
        c = np.asarray(block_diag, dtype=float)
        if self.u_solver == "dense":
            A = self.XtX.copy()
            A[np.diag_indices_from(A)] += c[self.blocks]
            try:
                return _solve_spd(A, X.T @ w, "u-system")
            except NumericalError as exc:
                raise NumericalError(f"{exc}; use delta > 0 when lam2 == 0") from None
        if np.any(c <= 0):
            raise NumericalError("u-system is singular with lam2 == 0 and delta == 0; use delta > 0")
        # (X^T X + C)^-1 X^T = C^-1 X^T (I + X C^-1 X^T)^-1
        M = np.tensordot(1.0 / c, self.block_grams, axes=1)
        M[np.diag_indices_from(M)] += 1.0
        y = _solve_spd(M, w, "u-system (n x n form)")
        return (X.T @ y) / c[self.blocks]


def update_w(inst: ProblemInstance, u, dw, lam1: float, delta: float = 0.0) -> np.ndarray:
    """Solve ``(X X^T + I + lam1 D^w + delta I) w = X (o + u)``."""
    u = np.asarray(u, dtype=float)
    dw = np.asarray(dw, dtype=float)
    if u.shape != (inst.d,) or dw.shape != (inst.n,):
        raise InvalidInputError("u or dw has the wrong length")
    return _Workspace(inst).solve_w(u, dw, lam1, delta)


def update_u(
    inst: ProblemInstance, w, du, lam2: float, delta: float = 0.0, method: str = "auto"
) -> np.ndarray:
    """Solve ``(X^T X + lam2 D^u + delta I) u = X^T w``; ``du`` holds one value per block."""
    w = np.asarray(w, dtype=float)
    du = np.asarray(du, dtype=float)
    if w.shape != (inst.n,) or du.shape != (inst.layout.m,):
        raise InvalidInputError("w or du has the wrong length")
    return _Workspace(inst, method).solve_u(w, lam2 * du + delta)


def _init(ws: _Workspace, delta: float):
    A = ws.XXt.copy()
    A[np.diag_indices_from(A)] += delta
    try:
        w0 = _solve_spd(A, ws.Xo, "initial w-system")
    except NumericalError as exc:
        raise NumericalError(f"{exc}; use delta > 0 for rank-deficient X") from None
    u0 = ws.solve_u(w0, np.full(ws.inst.layout.m, delta))
    return w0, u0


def init_weights(inst: ProblemInstance, delta: float = 1e-10, method: str = "auto"):
    """Least-squares start: ``w0`` fits ``o`` from the views, ``u0`` fits ``w0``."""
    return _init(_Workspace(inst, method), delta)


def _relative_change(new, old) -> float:
    scale = max(np.linalg.norm(new), np.linalg.norm(old), np.finfo(float).tiny)
    return float(np.linalg.norm(new - old) / scale)


def _settled(change, new_size, old_size, eps: float) -> float:
    """Largest change of an entry relative to its own size, floored at ``eps``."""
    return float(np.max(change / np.sqrt(np.maximum(new_size, old_size) ** 2 + eps**2)))


def solve(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolverResult:
    """Run the alternating updates from the least-squares start until convergence.

    With the default ``dual`` rule, stops when the largest relative change of
    ``w`` and ``u`` drops below ``cfg.tol``, or when the relative change of
    the smoothed objective does. Hitting ``max_iter`` is not an error;
    ``converged`` is then False.
    """
    cfg = cfg or SolverConfig()
    ws = _Workspace(inst, cfg.u_solver)
    lam1, lam2, eps = cfg.lam1, cfg.lam2, cfg.eps

    w, u = _init(ws, cfg.delta)
    f = smoothed_objective(inst, w, u, lam1, lam2, eps)
    trace = [f]
    converged = False
    iterations = 0
    for iterations in range(1, int(cfg.max_iter) + 1):
        dw = compute_dw(w, eps)
        du = compute_du(u, inst.layout, eps)
        w_new = ws.solve_w(u, dw, lam1, cfg.delta)
        u_new = ws.solve_u(w_new, lam2 * du + cfg.delta)
        f_new = smoothed_objective(inst, w_new, u_new, lam1, lam2, eps)
        trace.append(f_new)

        if cfg.stop_rule == "dual":
            step = max(_relative_change(w_new, w), _relative_change(u_new, u))
            f_change = abs(f - f_new) / max(abs(f), np.finfo(float).tiny)
            done = step < cfg.tol or f_change < cfg.tol
        else:
            norms = inst.layout.block_norms
            w_moved = _settled(np.abs(w_new - w), np.abs(w_new), np.abs(w), eps)
            u_moved = _settled(norms(u_new - u), norms(u_new), norms(u), eps)
            done = max(w_moved, u_moved) < cfg.tol
        w, u, f = w_new, u_new, f_new
        if done:
            converged = True
            break

    return SolverResult(
        w=w,
        u=u,
        objective=objective(inst, w, u, lam1, lam2),
        trace=trace,
        iterations=iterations,
        converged=converged,
    )
