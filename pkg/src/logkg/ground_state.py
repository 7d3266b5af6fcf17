"""Ground states of ``-Lap phi + (1-w^2) phi = |phi|^(p-1) phi ln|phi|^2``.

Two independent routes:

* radial shooting on ``phi(0) = s`` with bisection between undershoot
  (trajectory turns back up before reaching 0) and overshoot (crosses 0);
* minimisation of ``1/3 int |grad psi|^2`` over the dilation-projected set
  ``K = 0`` by H^1-preconditioned gradient descent.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .functionals import (
    ModelParams,
    NotProjectableError,
    eval_JK,
    nonlinearity_f,
    potential_G,
    project_to_nehari,
    residual_norm,
    scaling_coefficients,
)
from .radial import FOUR_PI, RadialField, RadialGrid, h1_norm_sq

log = logging.getLogger(__name__)


class GroundStateError(RuntimeError):
    """A ground-state solve failed; ``best`` holds the last iterate if any."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class Shot(enum.Enum):
    CROSSES_ZERO = "crosses_zero"
    DIVERGES = "diverges"
    CONVERGED_TAIL = "converged_tail"


class Method(str, enum.Enum):
    SHOOTING = "shooting"
    NEHARI_MIN = "nehari_min"


@dataclass(frozen=True)
class ShootingConfig:
    s_lo: float = 1.0
    s_hi: float = 10.0
    tol_s: float = 1e-12
    blowup_cap: float = 1e6
    # relative to s; double-precision shots leave the decaying branch near 1e-8*s
    tail_threshold: float = 1e-6
    R: float = 20.0
    n: int = 4000
    max_iter: int = 200
    rtol: float = 1e-11
    atol: float = 1e-14
    start_offset: float = 1e-4
    # relative lo/hi separation beyond which the exponential tail is used
    split_tol: float = 1e-5

    def __post_init__(self):
        if not self.s_lo < self.s_hi:
            raise ValueError(f"invalid bracket: need s_lo < s_hi, got [{self.s_lo}, {self.s_hi}]")
        if not self.tol_s > 0:
            raise ValueError("tol_s must be positive")

    @property
    def grid(self) -> RadialGrid:
        return RadialGrid(self.R, self.n)


@dataclass
class GroundState:
    phi: RadialField
    d_omega: float
    residual_norm: float
    K_value: float
    method: Method
    params: ModelParams
    info: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return self.phi.grid

    @property
    def grad_sq(self) -> float:
        return self.info["grad_sq"]

    def checks(self, k_tol: float = 1e-4, action_tol: float = 1e-4) -> dict[str, bool]:
        """Pass/fail flags for the certification conditions."""
        v = self.phi.values
        h1 = h1_norm_sq(self.phi)
        return {
            "nehari": abs(self.K_value) <= k_tol * h1,
            "action_identity": abs(self.d_omega - self.grad_sq / 3) <= action_tol * self.d_omega,
            "positive": bool(np.all(v[:-1] > 0)),
            "monotone": bool(np.all(np.diff(v) <= 0)),
        }

    def certified(self, **tols) -> bool:
        return all(self.checks(**tols).values())


def certify_profile(phi: RadialField, params: ModelParams, method: Method,
                    info: dict | None = None) -> GroundState:
    """Wrap a profile as a :class:`GroundState`, evaluating ``J``, ``K`` and the residual."""
    J, K, grad = eval_JK(phi, params)
    info = dict(info or {}, grad_sq=grad, h1_sq=h1_norm_sq(phi))
    return GroundState(phi=phi, d_omega=J, residual_norm=residual_norm(phi, params),
                       K_value=K, method=method, params=params, info=info)


# -- shooting ---------------------------------------------------------------

def _rhs(params: ModelParams):
    m, p = params.mass, params.p

    def rhs(r, y):
        u = y[0]
        a = abs(u)
        f = a ** (p - 1) * u * 2.0 * math.log(a) if a > 0 else 0.0
        return [y[1], -2.0 * y[1] / r + m * u - f]

    return rhs


@dataclass
class _Trajectory:
    shot: Shot
    overshoot: bool
    r_end: float
    sol: object
    s: float
    curvature0: float


def _shoot(s: float, params: ModelParams, cfg: ShootingConfig, dense: bool = False) -> _Trajectory:
    if not s > 0:
        raise ValueError(f"shooting amplitude must be positive, got {s}")
    h = cfg.start_offset
    # phi''(0) = RHS(s)/3 since Lap phi(0) = 3 phi''(0)
    a0 = (params.mass * s - nonlinearity_f(s, params)) / 3.0
    if s >= cfg.blowup_cap or a0 >= 0:
        return _Trajectory(Shot.DIVERGES, False, 0.0, None, s, a0)

    cap = cfg.blowup_cap

    def hit_zero(r, y):
        return y[0]
    hit_zero.terminal, hit_zero.direction = True, -1

    def turn_up(r, y):
        return y[1]
    turn_up.terminal, turn_up.direction = True, 1

    def over_cap(r, y):
        return abs(y[0]) - cap
    over_cap.terminal, over_cap.direction = True, 1

    y0 = [s + 0.5 * a0 * h * h, a0 * h]
    sol = solve_ivp(_rhs(params), (h, cfg.R), y0, method="RK45", rtol=cfg.rtol,
                    atol=cfg.atol, events=[hit_zero, turn_up, over_cap],
                    dense_output=dense)
    if sol.status < 0:
        raise GroundStateError(f"shooting integrator failed at r={sol.t[-1]:.6g}: {sol.message}")
    r_end = float(sol.t[-1])
    tail = abs(sol.y[0, -1]) + abs(sol.y[1, -1]) <= cfg.tail_threshold * s
    if sol.t_events[0].size:
        overshoot = True
    elif sol.t_events[1].size or sol.t_events[2].size:
        overshoot = False
    else:
        # reached R still decaying: count as the upper side only if it is tiny
        overshoot = bool(sol.y[1, -1] < 0)
        tail = tail or abs(sol.y[0, -1]) <= cfg.tail_threshold * s
    if tail:
        shot = Shot.CONVERGED_TAIL
    else:
        shot = Shot.CROSSES_ZERO if overshoot else Shot.DIVERGES
    return _Trajectory(shot, overshoot, r_end, sol if dense else None, s, a0)


def shoot_classify(s: float, params: ModelParams, cfg: ShootingConfig = ShootingConfig()) -> Shot:
    """Classify the radial trajectory started at ``phi(0) = s, phi'(0) = 0``.

    ``CROSSES_ZERO``: reaches ``phi = 0`` at finite radius (amplitude too large).
    ``DIVERGES``: turns upward at a positive minimum or passes ``blowup_cap``
    (amplitude too small). ``CONVERGED_TAIL``: ``|phi| + |phi'|`` is below
    ``tail_threshold * s`` when the trajectory leaves the decaying branch.
    """
    return _shoot(s, params, cfg).shot


def _profile(lo: _Trajectory, hi: _Trajectory, params: ModelParams, grid: RadialGrid,
             split_tol: float) -> tuple[np.ndarray, float]:
    """Sample the bracketed solution on ``grid``; exponential tail past the split."""
    r = grid.r
    r_max = min(lo.r_end, hi.r_end)
    inside = (r > 0) & (r <= r_max)
    ri = r[inside]
    h = lo.sol.t[0]
    phi_lo = lo.sol.sol(np.maximum(ri, h))[0]
    phi_hi = hi.sol.sol(np.maximum(ri, h))[0]
    mid = 0.5 * (phi_lo + phi_hi)
    bad = np.abs(phi_lo - phi_hi) > split_tol * np.abs(mid)
    bad |= mid <= 0
    if bad.any():
        k = int(np.argmax(bad))
        if k == 0:
            raise GroundStateError("bracket trajectories separate immediately; tighten tol_s")
    else:
        k = ri.size
    s = 0.5 * (lo.s + hi.s)
    a0 = 0.5 * (lo.curvature0 + hi.curvature0)
    phi = np.zeros_like(r)
    phi[0] = s
    near = ri < h
    mid[near] = s + 0.5 * a0 * ri[near] ** 2
    idx = np.flatnonzero(inside)
    phi[idx[:k]] = mid[:k]
    last = idx[k - 1]
    r_split = float(r[last])
    if last < grid.n:
        kappa = math.sqrt(params.mass)
        rt = r[last + 1:]
        phi[last + 1:] = phi[last] * (r_split / rt) * np.exp(-kappa * (rt - r_split))
    return phi, r_split


def find_ground_state(params: ModelParams, cfg: ShootingConfig = ShootingConfig()) -> GroundState:
    """Bisection on the central amplitude, then sampling on ``cfg.grid``."""
    lo_t = _shoot(cfg.s_lo, params, cfg)
    hi_t = _shoot(cfg.s_hi, params, cfg)
    if lo_t.overshoot or not hi_t.overshoot:
        raise GroundStateError(
            f"bracket does not straddle: s_lo={cfg.s_lo} -> {lo_t.shot.value}, "
            f"s_hi={cfg.s_hi} -> {hi_t.shot.value}")
    lo, hi = cfg.s_lo, cfg.s_hi
    tails = []
    for it in range(cfg.max_iter):
        if hi - lo <= cfg.tol_s:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        t = _shoot(mid, params, cfg)
        if t.shot is Shot.CONVERGED_TAIL:
            tails.append(mid)
        if t.overshoot:
            hi = mid
        else:
            lo = mid
    else:
        raise GroundStateError(
            f"bisection did not reach tol_s={cfg.tol_s} in {cfg.max_iter} iterations "
            f"(bracket width {hi - lo:.3g})")
    lo_t = _shoot(lo, params, cfg, dense=True)
    hi_t = _shoot(hi, params, cfg, dense=True)
    phi, r_split = _profile(lo_t, hi_t, params, cfg.grid, cfg.split_tol)
    info = {"amplitude": 0.5 * (lo + hi), "bracket": [lo, hi], "iterations": it,
            "r_split": r_split, "tail_amplitudes": len(tails)}
    log.debug("shooting converged: %s", info)
    return certify_profile(cfg.grid.field(phi), params, Method.SHOOTING, info)


# -- Nehari-constrained minimisation ----------------------------------------

class _DiscreteAction:
    """Compact-stencil action on nodes ``0..n-1`` with ``phi_n = 0``.

    ``A = 2 pi sum r_{i+1/2}^2 (phi_{i+1}-phi_i)^2 / dr`` has no odd-even null
    mode, which the centred stencil would leave free for the descent.
    """

    def __init__(self, grid: RadialGrid, params: ModelParams):
        self.grid, self.params = grid, params
        h, n = grid.dr, grid.n
        rh = (np.arange(n) + 0.5) * h
        self.c = rh ** 2 / h                  # flux coefficients at half nodes
        edges = np.concatenate(([0.0], rh))
        self.vol = np.diff(edges ** 3) / 3.0   # cells of nodes 0..n-1
        # H^1 Gram matrix (stiffness + mass) in banded form
        diag = np.zeros(n)
        diag[:-1] += self.c[:-1]
        diag[1:] += self.c[:-1]
        diag[-1] += self.c[-1]           # coupling to the pinned node n
        off = -self.c[:-1]
        self.gram = np.zeros((3, n))
        self.gram[0, 1:] = off
        self.gram[1] = diag + self.vol
        self.gram[2, :-1] = off
        self.gram *= FOUR_PI

    def parts(self, x: np.ndarray):
        dx = np.diff(np.append(x, 0.0))
        A = 2 * math.pi * float(self.c @ dx ** 2)
        P = FOUR_PI * float(self.vol @ (0.5 * self.params.mass * x ** 2
                                        + potential_G(x, self.params)))
        return A, P

    def grads(self, x: np.ndarray):
        dx = np.diff(np.append(x, 0.0))
        flux = self.c * dx
        gA = np.zeros_like(x)
        gA -= flux
        gA[1:] += flux[:-1]
        gA *= FOUR_PI
        gP = FOUR_PI * self.vol * (self.params.mass * x - nonlinearity_f(x, self.params))
        return gA, gP

    def riesz(self, v: np.ndarray) -> np.ndarray:
        """H^1 representative of a Euclidean gradient."""
        return solve_banded((1, 1), self.gram, v)

    def K_scaled(self, x: np.ndarray, t: float) -> float:
        """Discrete ``K(t x)``; amplitude scaling needs no interpolation."""
        A, P = self.parts(t * x)
        return A + 3 * P

    def retract(self, x: np.ndarray) -> np.ndarray:
        """Rescale ``x`` by the amplitude factor ``t > 0`` with ``K(t x) = 0``.

        ``K(t x)/t^2`` starts at the positive quadratic part and tends to
        -infinity (the ``-|u|^(p+1) ln|u|^2`` term), so the root is unique.
        """
        lo, hi = 0.5, 2.0
        for _ in range(200):
            if self.K_scaled(x, lo) > 0:
                break
            lo *= 0.5
        else:
            raise NotProjectableError("amplitude scaling never reaches K > 0")
        for _ in range(200):
            if self.K_scaled(x, hi) < 0:
                break
            hi *= 2.0
        else:
            raise NotProjectableError("amplitude scaling never reaches K < 0")
        t = brentq(lambda t: self.K_scaled(x, t), lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        return t * x

    def constrained_gradient(self, x: np.ndarray):
        """Euclidean gradient of ``J`` and the H^1 steepest-descent direction
        tangent to ``K = 0``."""
        gA, gP = self.grads(x)
        dJ, dK = gA + gP, gA + 3 * gP
        rJ, rK = self.riesz(dJ), self.riesz(dK)
        g = rJ - (float(dJ @ rK) / float(dK @ rK)) * rK
        return dJ, g


@dataclass(frozen=True)
class NehariConfig:
    max_iter: int = 500
    gtol: float = 1e-8       # H^1 gradient norm relative to the objective
    stall_iters: int = 20
    armijo: float = 1e-4


def minimize_nehari(params: ModelParams, grid: RadialGrid, seed: RadialField,
                    cfg: NehariConfig = NehariConfig()) -> GroundState:
    """Minimise the action on the constraint ``K = 0``.

    The seed is dilated onto ``K = 0``. The descent then runs on a compact
    stencil discretisation of ``J`` and ``K``: each step follows the H^1
    gradient of ``J`` with its component along the H^1 gradient of ``K``
    removed, and is pulled back onto the discrete ``K = 0`` by rescaling the
    amplitude. Keeping the iterate on the constraint pins its spatial scale
    (the continuum problem is dilation invariant off the constraint and the
    discretisation would otherwise drift toward grid-scale profiles); the
    amplitude pull-back avoids re-sampling the profile. Armijo backtracking
    controls the step. A final dilation places the result on ``K = 0`` for
    the reference functionals.
    """
    if seed.grid != grid:
        seed = grid.field(np.interp(grid.r, seed.r, seed.values, right=0.0))
    if seed.is_zero():
        raise NotProjectableError("seed is the zero field, which is excluded from the constraint set")
    disc = _DiscreteAction(grid, params)

    def J(x):
        A, P = disc.parts(x)
        return A + P

    def best():
        return grid.field(np.append(x, 0.0))

    _, start = project_to_nehari(seed, params)
    x = disc.retract(start.values[:-1].copy())
    F = J(x)
    history = [F]
    tau = 1.0
    best_F, stalled = F, 0
    gnorm = math.inf
    it = 0
    for it in range(cfg.max_iter + 1):
        dJ, g = disc.constrained_gradient(x)
        slope = float(dJ @ g)
        gnorm = math.sqrt(max(slope, 0.0)) / F
        if gnorm <= cfg.gtol:
            break
        if it == cfg.max_iter:
            raise GroundStateError(
                f"Nehari descent did not converge in {cfg.max_iter} iterations "
                f"(relative gradient {gnorm:.3g})", best=best())
        while True:
            trial = disc.retract(x - tau * g)
            Ft = J(trial)
            if Ft <= F - cfg.armijo * tau * slope:
                break
            tau *= 0.5
            if tau < 1e-12:
                raise GroundStateError(
                    f"Nehari line search failed at relative gradient {gnorm:.3g}", best=best())
        x, F = trial, Ft
        history.append(F)
        tau = min(2.0 * tau, 1.0)
        if F < best_F * (1 - 1e-14):
            best_F, stalled = F, 0
        else:
            stalled += 1
            if stalled >= cfg.stall_iters:
                raise GroundStateError(
                    f"Nehari descent stalled at relative gradient {gnorm:.3g}", best=best())
    # the compact-stencil constraint differs from K_omega at O(dr^2)
    final_beta, phi = project_to_nehari(best(), params)
    info = {"iterations": it, "objective": F, "objective_history": history,
            "final_beta": final_beta, "relative_gradient": gnorm}
    return certify_profile(phi, params, Method.NEHARI_MIN, info)


def default_seed(grid: RadialGrid, amplitude: float = 3.0, params: ModelParams | None = None,
                 max_tries: int = 20) -> RadialField:
    """Gaussian ``amplitude * exp(-r^2/2)``.

    With ``params`` given, the amplitude is raised by factors of 1.5 until the
    seed's dilation orbit meets ``K = 0`` (smaller ``p`` needs taller seeds to
    reach the focusing regime).
    """
    seed = grid.sample(lambda r: amplitude * np.exp(-r ** 2 / 2))
    if params is None:
        return seed
    for _ in range(max_tries):
        if scaling_coefficients(seed, params).B < 0:
            return seed
        seed = seed * 1.5
    raise NotProjectableError(f"no projectable Gaussian seed up to amplitude {seed.values[0]:.3g}")


def equilibrium_amplitude(params: ModelParams) -> float:
    """Positive constant solution ``c^(p-1) ln c^2 = 1 - w^2`` (always > 1)."""
    return brentq(lambda c: c ** (params.p - 1) * 2 * math.log(c) - params.mass, 1.0, 100.0)
