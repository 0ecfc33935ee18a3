"""Dense convex QP solver using operator splitting (ADMM).

Solves

    minimize    0.5 x'Px + q'x
    subject to  lower <= A x <= upper        (one-sided via +-inf)

with a fixed-penalty ADMM iteration, over-relaxation, periodic residual
balancing of the penalty, warm starting, and a primal-infeasibility
certificate built from the divergence of the dual iterates. Everything is
dense; the MPC problems this serves are 45 variables and a few hundred rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit


class QpStatus(enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass
class QuadProgram:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.lower = np.ascontiguousarray(self.lower, dtype=np.float64)
        self.upper = np.ascontiguousarray(self.upper, dtype=np.float64)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P shape {self.P.shape} does not match q length {n}")
        if self.A.ndim != 2 or self.A.shape[1] != n:
            raise ValueError(f"A shape {self.A.shape} does not match {n} variables")
        m = self.A.shape[0]
        if self.lower.shape != (m,) or self.upper.shape != (m,):
            raise ValueError("bound vectors must match the constraint row count")
        if not np.allclose(self.P, self.P.T, atol=1e-12, rtol=0.0):
            raise ValueError("P must be symmetric within 1e-12")
        if np.any(self.lower > self.upper):
            raise ValueError("lower must be elementwise <= upper")
        if np.any(np.isnan(self.P)) or np.any(np.isnan(self.q)) or np.any(np.isnan(self.A)):
            raise ValueError("non-finite problem data")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSettings:
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    eps_infeasible: float = 1e-4
    max_iter: int = 4000
    check_every: int = 25
    balance_every: int = 100


@dataclass
class QpResult:
    status: QpStatus
    x: np.ndarray
    y: np.ndarray
    primal_residual: float
    dual_residual: float
    iterations: int
    residual_history: np.ndarray | None = field(default=None, repr=False)

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED


@njit(cache=True)
def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L') x = b given a lower-triangular Cholesky factor."""
    n = L.shape[0]
    x = b.copy()
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= L[i, j] * x[j]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _admm_iterate(
    P, q, A, lower, upper, rho0, rho_eq_scale, sigma, alpha,
    eps_abs, eps_rel, eps_inf, max_iter, check_every, balance_every,
    x0, y0, track,
):
    n = q.shape[0]
    m = A.shape[0]

    rho = np.empty(m)
    for i in range(m):
        if upper[i] - lower[i] < 1e-12:
            rho[i] = rho0 * rho_eq_scale
        else:
            rho[i] = rho0

    def _factor(rho_vec):
        M = P.copy()
        for i in range(n):
            M[i, i] += sigma
        for k in range(m):
            rk = rho_vec[k]
            for i in range(n):
                aki = A[k, i]
                if aki != 0.0:
                    for j in range(n):
                        M[i, j] += rk * aki * A[k, j]
        return np.linalg.cholesky(M)

    L = _factor(rho)

    x = x0.copy()
    y = y0.copy()
    z = np.empty(m)
    zv = A @ x
    for i in range(m):
        z[i] = min(max(zv[i], lower[i]), upper[i])

    n_checks = max_iter // check_every + 2
    hist = np.full((n_checks if track else 1, 3), np.nan)
    hist_len = 0

    y_at_last_check = y.copy()
    status = 1  # max_iter unless decided otherwise
    r_prim = np.inf
    r_dual = np.inf
    it = 0

    while it < max_iter:
        it += 1
        # x-update: (P + sigma I + A' diag(rho) A) xt = sigma x - q + A'(rho z - y)
        rhs = sigma * x - q
        for k in range(m):
            w = rho[k] * z[k] - y[k]
            if w != 0.0:
                for j in range(n):
                    rhs[j] += A[k, j] * w
        xt = _chol_solve(L, rhs)
        zt = A @ xt

        for j in range(n):
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j]
        for k in range(m):
            zr = alpha * zt[k] + (1.0 - alpha) * z[k]
            znew = zr + y[k] / rho[k]
            if znew < lower[k]:
                znew = lower[k]
            elif znew > upper[k]:
                znew = upper[k]
            y[k] = y[k] + rho[k] * (zr - znew)
            z[k] = znew

        if it % check_every == 0 or it == max_iter:
            ax = A @ x
            px = P @ x
            aty = A.T @ y if m > 0 else np.zeros(n)

            r_prim = 0.0
            ax_norm = 0.0
            z_norm = 0.0
            for k in range(m):
                r = abs(ax[k] - z[k])
                if r > r_prim:
                    r_prim = r
                a = abs(ax[k])
                if a > ax_norm:
                    ax_norm = a
                a = abs(z[k])
                if a > z_norm:
                    z_norm = a
            r_dual = 0.0
            px_norm = 0.0
            aty_norm = 0.0
            q_norm = 0.0
            for j in range(n):
                r = abs(px[j] + q[j] + aty[j])
                if r > r_dual:
                    r_dual = r
                a = abs(px[j])
                if a > px_norm:
                    px_norm = a
                a = abs(aty[j])
                if a > aty_norm:
                    aty_norm = a
                a = abs(q[j])
                if a > q_norm:
                    q_norm = a

            eps_prim = eps_abs + eps_rel * max(ax_norm, z_norm)
            eps_dual = eps_abs + eps_rel * max(px_norm, max(aty_norm, q_norm))

            if track:
                hist[hist_len, 0] = float(it)
                hist[hist_len, 1] = r_prim
                hist[hist_len, 2] = r_dual
                hist_len += 1

            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = 0
                break

            # Primal infeasibility: the dual step direction acts as a
            # divergence certificate when it lies in A's left null space and
            # pushes the bounds apart.
            if m > 0:
                dy_norm = 0.0
                for k in range(m):
                    a = abs(y[k] - y_at_last_check[k])
                    if a > dy_norm:
                        dy_norm = a
                if dy_norm > 1e-12:
                    at_dy = 0.0
                    support = 0.0
                    certifiable = True
                    for j in range(n):
                        s = 0.0
                        for k in range(m):
                            s += A[k, j] * (y[k] - y_at_last_check[k])
                        a = abs(s)
                        if a > at_dy:
                            at_dy = a
                    for k in range(m):
                        dyk = y[k] - y_at_last_check[k]
                        if dyk > eps_inf * dy_norm:
                            if np.isinf(upper[k]):
                                certifiable = False
                                break
                            support += upper[k] * dyk
                        elif dyk < -eps_inf * dy_norm:
                            if np.isinf(lower[k]):
                                certifiable = False
                                break
                            support += lower[k] * dyk
                    if (
                        certifiable
                        and at_dy <= eps_inf * dy_norm
                        and support <= -eps_inf * dy_norm
                    ):
                        status = 2
                        break
                for k in range(m):
                    y_at_last_check[k] = y[k]

            # Residual balancing: rescale rho toward equal normalized
            # residuals, refactoring only on a material change.
            if balance_every > 0 and it % balance_every == 0 and m > 0:
                denom_p = max(ax_norm, z_norm)
                denom_d = max(px_norm, max(aty_norm, q_norm))
                if denom_p > 1e-30 and denom_d > 1e-30 and r_dual > 1e-30:
                    ratio = np.sqrt((r_prim / denom_p) / (r_dual / denom_d))
                    if ratio > 5.0 or ratio < 0.2:
                        scale = min(max(ratio, 1e-6), 1e6)
                        for k in range(m):
                            rho[k] = min(max(rho[k] * scale, 1e-6), 1e6)
                        L = _factor(rho)

    return x, y, z, status, it, r_prim, r_dual, hist[:hist_len]


def solve_qp(
    prob: QuadProgram,
    warm_x: np.ndarray | None = None,
    warm_y: np.ndarray | None = None,
    settings: QpSettings | None = None,
    track_residuals: bool = False,
) -> QpResult:
    """Solve a QuadProgram; deterministic for identical inputs and settings."""
    cfg = settings or QpSettings()
    x0 = np.zeros(prob.n) if warm_x is None else np.asarray(warm_x, dtype=np.float64).copy()
    y0 = np.zeros(prob.m) if warm_y is None else np.asarray(warm_y, dtype=np.float64).copy()
    if x0.shape != (prob.n,) or y0.shape != (prob.m,):
        raise ValueError("warm-start vectors have wrong shape")

    x, y, z, status, it, r_prim, r_dual, hist = _admm_iterate(
        prob.P, prob.q, prob.A, prob.lower, prob.upper,
        cfg.rho, cfg.rho_eq_scale, cfg.sigma, cfg.alpha,
        cfg.eps_abs, cfg.eps_rel, cfg.eps_infeasible,
        cfg.max_iter, cfg.check_every, cfg.balance_every,
        x0, y0, track_residuals,
    )
    return QpResult(
        status=(QpStatus.SOLVED, QpStatus.MAX_ITER, QpStatus.INFEASIBLE)[status],
        x=x,
        y=y,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        iterations=int(it),
        residual_history=hist if track_residuals else None,
    )


def save_problem(prob: QuadProgram, path) -> None:
    """Write a QuadProgram as a plain-text golden file (one matrix per block)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"qp {prob.n} {prob.m}\n")
        for name, mat in (("P", prob.P), ("A", prob.A)):
            f.write(f"{name}\n")
            for row in mat:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")
        for name, vec in (("q", prob.q), ("lower", prob.lower), ("upper", prob.upper)):
            f.write(f"{name}\n")
            f.write(" ".join(repr(float(v)) for v in vec) + "\n")


def load_problem(path) -> QuadProgram:
    with open(path, encoding="utf-8") as f:
        tokens = f.read().split("\n")
    head = tokens[0].split()
    n, m = int(head[1]), int(head[2])
    idx = 1
    blocks: dict[str, np.ndarray] = {}
    rows_for = {"P": n, "A": m, "q": 1, "lower": 1, "upper": 1}
    while idx < len(tokens):
        name = tokens[idx].strip()
        if not name:
            idx += 1
            continue
        nrows = rows_for[name]
        data = [
            [float(v) for v in tokens[idx + 1 + r].split()] for r in range(nrows)
        ]
        arr = np.array(data)
        blocks[name] = arr if name in ("P", "A") else arr[0]
        idx += 1 + nrows
    if blocks["A"].size == 0:
        blocks["A"] = blocks["A"].reshape(m, n)
    return QuadProgram(blocks["P"], blocks["q"], blocks["A"], blocks["lower"], blocks["upper"])
