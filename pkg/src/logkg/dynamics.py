"""Radial time evolution of ``u_tt - Lap u + u = |u|^(p-1) u ln|u|^2``.

The Laplacian is discretised through ``w = r u`` (``Lap u = w''/r`` for
radial u on R^3), which gives a stencil symmetric in the ``r^2``-weighted
inner product, with ``w(0) = 0`` and Dirichlet ``u(R) = 0``. The potential
``W(u) = u^2/2 + G(|u|)`` enters through the discrete gradient

    (u+ - 2u + u-)/dt^2 = Lap_h u - (W(u+) - W(u-)) / (u+ - u-),

solved node by node. The scheme conserves

    E = 4 pi [ 1/2 sum m_i ((u+ - u)/dt)^2 + 1/2 sum (w+_{j+1} - w+_j)(w_{j+1} - w_j)/dr
               + 1/2 sum m_i (W(u+) + W(u)) ],     m_i = r_i^2 dr,

up to the tolerance of the pointwise solve.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .functionals import (
    ModelParams,
    eval_JK,
    log_abs_sq,
    nonlinearity_df,
    nonlinearity_f,
    potential_G,
)
from .radial import FOUR_PI, RadialField, RadialGrid, strauss_ratio, _same_grid

log = logging.getLogger(__name__)

DIAGNOSTIC_COLUMNS = ("t", "E", "J0", "K0", "l2", "h1", "sup_abs_u", "strauss_ratio")


class EvolutionError(RuntimeError):
    pass


class BlowUp(EvolutionError):
    """Amplitude passed the cap, or the step can no longer resolve the focusing."""

    def __init__(self, msg, t, sup):
        super().__init__(msg)
        self.t, self.sup = t, sup


class RootLost(BlowUp):
    """The implicit step has no root near the predictor: focusing outran ``dt``."""


class SolverFailure(EvolutionError):
    pass


class Termination(str, enum.Enum):
    COMPLETED = "completed"
    BLOWUP = "blowup"
    SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class EvolveConfig:
    dt: float
    T: float
    bc: str = "dirichlet_zero"
    blowup_cap: float = 1e6
    newton_tol: float = 1e-13
    newton_max: int = 30
    sample_every: int = 10
    cfl_limit: float = 0.9
    nonlinear: bool = True      # False drops f, leaving the linear Klein-Gordon equation
    min_dt_fraction: float = 2.0 ** -40   # floor for local step refinement near blow-up
    stiffness_limit: float = 0.05   # refine once dt^2 * max|W''(u)| exceeds this

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.bc != "dirichlet_zero":
            raise ValueError(f"unsupported boundary condition {self.bc!r}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def check_cfl(self, grid: RadialGrid) -> None:
        if self.dt > self.cfl_limit * grid.dr * (1 + 1e-12):
            raise ValueError(
                f"CFL violation: dt={self.dt:g} > {self.cfl_limit:g}*dr = "
                f"{self.cfl_limit * grid.dr:g}")


@dataclass(frozen=True)
class State:
    """``(u, u_t)`` at time ``t``; ``u_prev`` is the previous time level once stepping."""

    u: RadialField
    v: RadialField
    t: float = 0.0
    u_prev: RadialField | None = field(default=None, repr=False)

    def __post_init__(self):
        _same_grid(self.u, self.v)

    @property
    def grid(self) -> RadialGrid:
        return self.u.grid


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    E: float
    J0: float
    K0: float
    l2: float
    h1: float
    sup_abs_u: float
    strauss_ratio: float

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in DIAGNOSTIC_COLUMNS)


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    termination: Termination
    final: State | None
    message: str = ""
    steps: int = 0
    wall_time: float = 0.0
    refined_at: float | None = None   # time of the first step refinement, if any


# -- spatial operator and energy --------------------------------------------

class _Operator:
    def __init__(self, grid: RadialGrid, params: ModelParams, nonlinear: bool):
        self.grid, self.params, self.nonlinear = grid, params, nonlinear
        self.r = grid.r
        self.dr = grid.dr
        self.m = self.r ** 2 * self.dr      # nodal masses (÷ 4 pi)
        self.m[0] = self.m[-1] = 0.0

    def lap(self, u: np.ndarray) -> np.ndarray:
        """``(1/r) d^2(r u)/dr^2`` on interior nodes; zeros at 0 and R."""
        w = self.r * u
        out = np.zeros_like(u)
        out[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / (self.dr ** 2 * self.r[1:-1])
        return out

    def G(self, u):
        return potential_G(u, self.params) if self.nonlinear else np.zeros_like(u)

    def dG(self, u):
        return -nonlinearity_f(u, self.params) if self.nonlinear else np.zeros_like(u)

    def d2G(self, u):
        return -nonlinearity_df(u, self.params) if self.nonlinear else np.zeros_like(u)

    def W(self, u):
        return 0.5 * u * u + self.G(u)

    def dW(self, u):
        return u + self.dG(u)

    def energy(self, u_old: np.ndarray, u_new: np.ndarray, dt: float) -> float:
        kin = 0.5 * float(self.m @ ((u_new - u_old) / dt) ** 2)
        w0, w1 = self.r * u_old, self.r * u_new
        grad = 0.5 * float(np.diff(w1) @ np.diff(w0)) / self.dr
        pot = 0.5 * float(self.m @ (self.W(u_new) + self.W(u_old)))
        return FOUR_PI * (kin + grad + pot)

    @staticmethod
    def fill_origin(u: np.ndarray) -> None:
        # even extension, second order: u(0) = (4 u(dr) - u(2 dr)) / 3
        u[0] = (4 * u[1] - u[2]) / 3.0


def _d3G(u, params: ModelParams):
    """``G'''(u) = -f''(u) = -sgn(u) |u|^(p-2) ((p-1)(p ln u^2 + 2) + 2p)``."""
    p = params.p
    return -np.sign(u) * np.abs(u) ** (p - 2) * ((p - 1) * (p * log_abs_sq(u) + 2) + 2 * p)


class _Quotient:
    """``q(x) = (G(x) - G(y)) / (x - y)`` for fixed ``y``, free of cancellation.

    Close to ``y`` the midpoint expansion ``G'(m) + (x-y)^2 G'''(m)/24`` is
    used; its truncation error is far below rounding at the switch-over.
    """

    def __init__(self, op: "_Operator", y: np.ndarray):
        self.op, self.y, self.Gy = op, y, op.G(y)

    def _split(self, x):
        d = x - self.y
        m = 0.5 * (x + self.y)
        return d, m, np.abs(d) <= 1e-4 * (1.0 + np.abs(m))

    def value(self, x):
        op = self.op
        d, m, near = self._split(x)
        q = np.empty_like(x)
        far = ~near
        q[far] = (op.G(x[far]) - self.Gy[far]) / d[far]
        dn, mn = d[near], m[near]
        q[near] = op.dG(mn) + dn * dn * _d3G(mn, op.params) / 24.0
        return q

    def slope(self, x):
        op = self.op
        d, m, near = self._split(x)
        dq = np.empty_like(x)
        far = ~near
        xf, df = x[far], d[far]
        dq[far] = (op.dG(xf) * df - (op.G(xf) - self.Gy[far])) / df ** 2
        dn, mn = d[near], m[near]
        dq[near] = 0.5 * op.d2G(mn) + dn * _d3G(mn, op.params) / 12.0
        return dq


def _solve_pointwise(op: _Operator, c: np.ndarray, y: np.ndarray, x0: np.ndarray,
                     dt: float, cfg: EvolveConfig, t: float, r: np.ndarray) -> np.ndarray:
    """Solve ``x + dt^2 (W(x) - W(y))/(x - y) = c`` node by node.

    Newton from the explicit predictor ``x0``; nodes it does not settle go to
    a bracketing bisection on the increasing branch through the predictor.
    """
    k = dt * dt
    a = 1.0 + 0.5 * k        # the quadratic part of W has the exact quotient (x+y)/2
    rhs = c - 0.5 * k * y
    if not op.nonlinear:
        return rhs / a
    quot = _Quotient(op, y)

    def resid(x):
        return a * x + k * quot.value(x) - rhs

    x = x0.copy()
    active = np.arange(x.size)
    with np.errstate(all="ignore"):
        for _ in range(cfg.newton_max):
            if active.size == 0:
                break
            sub = _Quotient(op, y[active])
            xa = x[active]
            g = a * xa + k * sub.value(xa) - rhs[active]
            gp = a + k * sub.slope(xa)
            step = g / gp
            ok = np.isfinite(step) & (gp > 0)
            x[active] = np.where(ok, xa - step, np.nan)
            conv = ~ok | (np.abs(step) <= cfg.newton_tol * (1.0 + np.abs(xa)))
            active = active[~conv]
    failed = ~np.isfinite(x)
    failed[active] = True
    if failed.any():
        idx = np.flatnonzero(failed)
        x[idx] = _bisect_nodes(resid, x0, idx, y, cfg, t, r)
    return x


def _bisect_nodes(resid, x0, idx, y, cfg, t, r):
    """Bracket the root around the predictor by doubling, then bisect.

    If the residual stays on one side however far the bracket grows, the
    root branch has been lost through a fold: the local focusing is faster
    than the time step can follow. In the focusing regime (``|u| > 1``) that
    is reported as blow-up.
    """
    n = x0.size
    sel = np.zeros(n, dtype=bool)
    sel[idx] = True
    xp = x0.copy()
    width = 1e-6 * (1.0 + np.abs(xp))
    lo, hi = xp.copy(), xp.copy()
    found = np.zeros(n, dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(80):
            grow = sel & ~found
            lo[grow] = xp[grow] - width[grow]
            hi[grow] = xp[grow] + width[grow]
            glo, ghi = resid(lo), resid(hi)
            found = sel & (glo < 0) & (ghi > 0)
            if found[idx].all():
                break
            width = np.where(found, width, 2.0 * width)
        if not found[idx].all():
            bad = idx[~found[idx]]
            j = bad[np.argmax(np.abs(y[bad]))]
            sup = float(np.max(np.abs(y)))
            if max(abs(y[j]), abs(x0[j])) > 1.0:
                raise RootLost(
                    f"implicit step lost its root at r={r[j]:.4g} (|u|={abs(y[j]):.4g}): "
                    "focusing faster than the time step resolves", t, sup)
            raise SolverFailure(f"pointwise solve failed at r={r[j]:.4g}, t={t:.6g}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            neg = resid(mid) < 0
            lo = np.where(sel & neg, mid, lo)
            hi = np.where(sel & ~neg, mid, hi)
            if np.all(hi[idx] - lo[idx] <= cfg.newton_tol * (1 + np.abs(mid[idx]))):
                break
    return 0.5 * (lo[idx] + hi[idx])


# -- stepping ---------------------------------------------------------------

class _Stepper:
    def __init__(self, grid: RadialGrid, params: ModelParams, cfg: EvolveConfig):
        cfg.check_cfl(grid)
        self.grid, self.params, self.cfg = grid, params, cfg
        self.op = _Operator(grid, params, cfg.nonlinear)

    def accel(self, u):
        return self.op.lap(u) - self.op.dW(u)

    def stiffness(self, u, dt: float) -> float:
        """``dt^2 max |W''(u)|``: the local oscillation / growth rate per step, squared."""
        if not self.op.nonlinear:
            return dt * dt
        return dt * dt * float(np.max(np.abs(1.0 + self.op.d2G(u))))

    def start(self, u0: np.ndarray, v0: np.ndarray, dt: float) -> np.ndarray:
        """Second-order Taylor start ``u^1 = u^0 + dt v^0 + dt^2/2 u_tt(0)``."""
        u1 = u0 + dt * v0 + 0.5 * dt * dt * self.accel(u0)
        return self._finish(u1, u0)

    def advance(self, u_prev: np.ndarray, u: np.ndarray, t: float, dt: float) -> np.ndarray:
        lap = self.op.lap(u)
        c = 2 * u - u_prev + dt * dt * lap
        pred = c - dt * dt * self.op.dW(u)   # explicit leapfrog predictor
        inner = slice(1, -1)
        new = np.zeros_like(u)
        new[inner] = _solve_pointwise(self.op, c[inner], u_prev[inner], pred[inner],
                                      dt, self.cfg, t, self.op.r[inner])
        return self._finish(new, u)

    def _finish(self, new: np.ndarray, old: np.ndarray) -> np.ndarray:
        new[-1] = 0.0
        _Operator.fill_origin(new)
        sup = float(np.max(np.abs(new)))
        if not math.isfinite(sup):
            raise SolverFailure("non-finite values after step")
        if sup > self.cfg.blowup_cap:
            raise BlowUp(f"sup|u| = {sup:.4g} exceeded cap {self.cfg.blowup_cap:g}", 0.0, sup)
        return new


def _check_state(s: State) -> None:
    if not (np.all(np.isfinite(s.u.values)) and np.all(np.isfinite(s.v.values))):
        raise ValueError("state contains non-finite values")


def step(s: State, params: ModelParams, cfg: EvolveConfig) -> State:
    """Advance one time step.

    Without history (``u_prev is None``) the Taylor start is used; otherwise
    the three-level discrete-gradient update. The returned velocity is the
    second-order estimate ``(u^{n+1} - u^n)/dt + dt/2 * u_tt^{n+1}``.
    """
    _check_state(s)
    st = _Stepper(s.grid, params, cfg)
    u = s.u.values
    t_new = s.t + cfg.dt
    try:
        if s.u_prev is None:
            new = st.start(u, s.v.values, cfg.dt)
        else:
            new = st.advance(s.u_prev.values, u, s.t, cfg.dt)
    except BlowUp as exc:
        exc.t = t_new
        raise
    v = (new - u) / cfg.dt + 0.5 * cfg.dt * st.accel(new)
    g = s.grid
    return State(g.field(new), g.field(v), t_new, u_prev=g.field(u))


def discrete_energy(s: State, params: ModelParams, cfg: EvolveConfig) -> float:
    """The conserved quantity of the scheme for the pair ``(u_prev, u)``."""
    if s.u_prev is None:
        raise ValueError("discrete energy needs two time levels")
    op = _Operator(s.grid, params, cfg.nonlinear)
    return op.energy(s.u_prev.values, s.u.values, cfg.dt)


def diagnostics(t: float, u: RadialField, E: float, params: ModelParams) -> DiagnosticsRecord:
    J0, K0, grad = eval_JK(u, params.at_rest())
    l2 = float(u.grid.volume_weights @ u.values ** 2)
    h1 = math.sqrt(l2 + grad)
    sr = strauss_ratio(u) if h1 > 0 else 0.0
    return DiagnosticsRecord(t=t, E=E, J0=J0, K0=K0, l2=math.sqrt(l2), h1=h1,
                             sup_abs_u=float(np.max(np.abs(u.values))), strauss_ratio=sr)


def run(s0: State, params: ModelParams, cfg: EvolveConfig, callback=None) -> RunResult:
    """Evolve to ``t0 + cfg.T`` sampling every ``cfg.sample_every`` steps.

    Sample ``n`` is written once ``u^{n+1}`` exists so that it can carry the
    centred velocity and the conserved energy ``E^{n+1/2}``.

    When ``dt^2 max|W''(u)|`` passes ``stiffness_limit`` (the solution starts
    to focus faster than ``dt`` can follow), or the implicit step loses its
    root, the step is halved and the scheme restarted from the current
    ``(u, u_t)``. The conserved discrete energy differs from the continuum
    one by ``O(dt^2 W'' u_t^2)``, so each restart shifts the ``E`` column;
    ``refined_at`` marks where the fixed-step phase ended. Blow-up is
    declared at ``blowup_cap`` or once ``dt`` would drop below
    ``min_dt_fraction * cfg.dt``. On blow-up or solver failure the last
    finite state is recorded and kept.
    """
    _check_state(s0)
    t_start = time.perf_counter()
    grid = s0.grid
    st = _Stepper(grid, params, cfg)
    dt = cfg.dt
    t_end = s0.t + cfg.T
    records: list[DiagnosticsRecord] = []
    u_prev = None if s0.u_prev is None else s0.u_prev.values
    u = s0.u.values.copy()
    v_start = s0.v.values
    anchor, k = s0.t, 0          # t = anchor + k*dt, re-anchored on refinement
    steps, refinements = 0, 0
    refined_at = None
    termination, message = Termination.COMPLETED, ""
    final = None
    last_sampled = None

    def emit(t, u_now, E):
        nonlocal last_sampled
        rec = diagnostics(t, grid.field(u_now), E, params)
        records.append(rec)
        last_sampled = t
        if callback is not None:
            callback(rec)

    t = anchor
    try:
        while True:
            t = anchor + k * dt
            if (u_prev is not None and st.stiffness(u, dt) > cfg.stiffness_limit
                    and 0.5 * dt >= cfg.min_dt_fraction * cfg.dt):
                # the nonlinearity is about to outpace dt: restart at half the
                # step while (u, u_t) can still be estimated to second order
                v_start = (u - u_prev) / dt + 0.5 * dt * st.accel(u)
                u_prev, anchor, k = None, t, 0
                dt *= 0.5
                refinements += 1
                refined_at = t if refined_at is None else refined_at
                log.debug("refining dt to %.3g at t=%.6g", dt, t)
                continue
            try:
                if u_prev is None:
                    u_next = st.start(u, v_start, dt)
                    v = v_start
                else:
                    u_next = st.advance(u_prev, u, t, dt)
                    v = (u_next - u_prev) / (2 * dt)
            except RootLost:
                if u_prev is None or 0.5 * dt < cfg.min_dt_fraction * cfg.dt:
                    raise
                v_start = (u - u_prev) / dt + 0.5 * dt * st.accel(u)
                u_prev, anchor, k = None, t, 0
                dt *= 0.5
                refinements += 1
                refined_at = t if refined_at is None else refined_at
                log.debug("refining dt to %.3g at t=%.6g", dt, t)
                continue
            done = t >= t_end - 0.5 * dt
            if steps % cfg.sample_every == 0 or done:
                emit(t, u, st.op.energy(u, u_next, dt))
            if done:
                final = State(grid.field(u), grid.field(v), t, u_prev=None)
                break
            u_prev, u = u, u_next
            k += 1
            steps += 1
    except BlowUp as exc:
        termination, message = Termination.BLOWUP, str(exc)
        log.info("blow-up near t=%.6g: %s", t + dt, exc)
    except SolverFailure as exc:
        termination, message = Termination.SOLVER_FAILURE, str(exc)
        log.warning("solver failure at t=%.6g: %s", t, exc)
    if final is None:
        v = v_start if u_prev is None else (u - u_prev) / dt
        final = State(grid.field(u), grid.field(v), t, u_prev=None)
        if last_sampled != t and u_prev is not None:
            emit(t, u, st.op.energy(u_prev, u, dt))
    if refinements:
        message = (message + f" ({refinements} step refinements, final dt={dt:.3g})").strip()
    return RunResult(records=records, termination=termination, final=final,
                     message=message, steps=steps, wall_time=time.perf_counter() - t_start,
                     refined_at=refined_at)
