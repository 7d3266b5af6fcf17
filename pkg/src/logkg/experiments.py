"""Scripted experiments around the ground state and the invariant set.

* the equivalence / ground-state verification suite for one ``(p, omega)``;
* membership of ``(u0, u1)`` in ``R1 = {E < d(0), K_0 < 0, u != 0}``;
* monitoring that a trajectory started in R1 stays there;
* the instability protocol: start from ``phi_0(x / lambda)``, ``lambda > 1``,
  and watch for H^1 growth or blow-up.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import DiagnosticsRecord, EvolveConfig, State, Termination, run
from .functionals import (
    ModelParams,
    eval_energy,
    eval_K,
    scaling_coefficients,
)
from .ground_state import (
    GroundState,
    GroundStateError,
    ShootingConfig,
    default_seed,
    find_ground_state,
    minimize_nehari,
)
from .radial import (
    RadialGrid,
    dilate,
    grad_l2_norm_sq,
    h1_norm_sq,
    l2_norm_sq,
)

log = logging.getLogger(__name__)


# -- R1 membership ----------------------------------------------------------

@dataclass(frozen=True)
class R1Report:
    energy_E: float
    d0: float
    K0_u0: float
    grad_third: float
    is_member: bool
    margins: dict = field(default_factory=dict)
    lam: float | None = None
    predicted: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require_rest_state(gs: GroundState) -> None:
    if gs.params.omega != 0:
        raise ValueError("R1 is defined through d(0); pass a ground state computed at omega = 0")


def make_perturbed_data(gs: GroundState, lam: float) -> State:
    """``u0 = phi_0(x / lam)``, ``u1 = 0``.

    The instability statement needs ``lam > 1``; other positive values are
    accepted with a warning.
    """
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    if lam <= 1:
        warnings.warn(f"lambda={lam} <= 1 lies outside the instability setting", stacklevel=2)
    u0 = dilate(gs.phi, lam)
    return State(u0, gs.grid.zeros(), 0.0)


def check_R1_membership(s: State, gs: GroundState, params: ModelParams | None = None,
                        lam: float | None = None) -> R1Report:
    """Evaluate ``E(u0, u1) < d(0)``, ``K_0(u0) < 0`` and ``u0 != 0``.

    With ``lam`` given, the closed forms for dilated ground-state data are
    added for comparison: ``E = d(0)(3 lam - lam^3)/2``,
    ``K_0 = lam (1 - lam^2) * 1/2 ||grad phi_0||^2`` and
    ``1/3 ||grad u0||^2 = lam d(0)``.
    """
    _require_rest_state(gs)
    rest = (params or gs.params).at_rest()
    d0 = gs.d_omega
    u = s.u
    E = eval_energy(u, s.v, rest)
    K0 = eval_K(u, rest)
    grad_third = grad_l2_norm_sq(u) / 3.0
    nonzero = not u.is_zero()
    member = bool(E < d0 and K0 < 0 and nonzero)
    margins = {"energy": d0 - E, "K0": -K0, "nonzero": math.sqrt(h1_norm_sq(u)),
               "gradient": grad_third - d0}
    predicted = {}
    if lam is not None:
        half_grad = 0.5 * gs.grad_sq
        predicted = {
            "E": d0 * (3 * lam - lam ** 3) / 2,
            "K0": lam * (1 - lam ** 2) * half_grad,
            "grad_third": lam * d0,
            "E_over_d0": E / d0,
            "grad_third_over_d0": grad_third / d0,
            "K0_over_half_grad": K0 / half_grad,
        }
    return R1Report(energy_E=E, d0=d0, K0_u0=K0, grad_third=grad_third, is_member=member,
                    margins=margins, lam=lam, predicted=predicted)


# -- invariance monitor -----------------------------------------------------

@dataclass(frozen=True)
class MonitorReport:
    status: str                    # "ok", "violation" or "skipped"
    samples: int = 0
    first_violation: int | None = None
    t_violation: float | None = None
    reason: str = ""


def monitor_invariance(records: Sequence[DiagnosticsRecord], d0: float,
                       r1_member: bool = True, energy_until: float | None = None) -> MonitorReport:
    """Check ``K0 < 0`` and ``E < d0`` at every sample; report the first failure.

    ``energy_until`` limits the energy test to samples before that time: after
    a step refinement the conserved discrete energy is a different
    ``O(dt^2)`` modification of the continuum one, and near a collapse that
    modification is not small.
    """
    if not r1_member:
        return MonitorReport("skipped", len(records), reason="initial data not in R1")
    for i, rec in enumerate(records):
        if not rec.K0 < 0:
            return MonitorReport("violation", len(records), i, rec.t, f"K0 = {rec.K0:.6g} >= 0")
        if (energy_until is None or rec.t < energy_until) and not rec.E < d0:
            return MonitorReport("violation", len(records), i, rec.t,
                                 f"E = {rec.E:.6g} >= d0 = {d0:.6g}")
    return MonitorReport("ok", len(records))


# -- instability protocol ---------------------------------------------------

@dataclass(frozen=True)
class InstabilityConfig:
    lambdas: tuple[float, ...] = (1.05, 1.1, 1.2, 1.5)
    growth_target: float = 3.0
    T_max: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if not self.lambdas:
            raise ValueError("need at least one dilation factor")
        if any(not lam > 1 for lam in self.lambdas):
            raise ValueError(f"all dilation factors must exceed 1, got {self.lambdas}")
        if not self.growth_target > 1:
            raise ValueError(f"growth_target must exceed 1, got {self.growth_target}")
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")


@dataclass
class InstabilityOutcome:
    lam: float
    r1: R1Report
    outcome: str                   # h1_growth_reached | blowup | inconclusive | skipped | solver_failure
    t_star: float | None = None
    final_h1: float | None = None
    termination: str | None = None
    monitor: MonitorReport | None = None
    records: list = field(default_factory=list, repr=False)
    records_path: str | None = None
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "r1_report": self.r1.as_dict(),
            "outcome": self.outcome,
            "t_star": self.t_star,
            "final_h1": self.final_h1,
            "termination": self.termination,
            "monitor": None if self.monitor is None else dataclasses.asdict(self.monitor),
            "records_path": self.records_path,
            "message": self.message,
        }


def run_instability(gs: GroundState, params: ModelParams, cfg: InstabilityConfig,
                    ecfg: EvolveConfig, records_dir=None) -> list[InstabilityOutcome]:
    """Evolve ``(phi_0(x / lam), 0)`` for each ``lam`` up to ``T_max``.

    Outcome per ``lam``: ``h1_growth_reached`` at the first sample with
    ``||u||_{H^1} >= growth_target * ||u0||_{H^1}``, otherwise ``blowup`` if
    the run hit the amplitude cap, otherwise ``inconclusive``. Norm growth
    is only guaranteed along some sequence of times, so inconclusive is a
    legitimate result.
    """
    from .cli_io import write_diagnostics_csv  # local import: cli_io depends on this module

    _require_rest_state(gs)
    rest = params.at_rest()
    ecfg = dataclasses.replace(ecfg, T=cfg.T_max)
    out = []
    for lam in cfg.lambdas:
        s0 = make_perturbed_data(gs, lam)
        r1 = check_R1_membership(s0, gs, rest, lam=lam)
        if not r1.is_member:
            out.append(InstabilityOutcome(lam, r1, "skipped", message="R1 certification failed"))
            continue
        res = run(s0, rest, ecfg)
        recs = res.records
        h1_0 = recs[0].h1
        t_star = next((r.t for r in recs if r.h1 >= cfg.growth_target * h1_0), None)
        if t_star is not None:
            outcome = "h1_growth_reached"
        elif res.termination is Termination.BLOWUP:
            outcome, t_star = "blowup", recs[-1].t
        elif res.termination is Termination.SOLVER_FAILURE:
            outcome = "solver_failure"
        else:
            outcome = "inconclusive"
        path = None
        if records_dir is not None:
            path = str(write_diagnostics_csv(Path(records_dir) / f"lambda_{lam:g}.csv", recs))
        out.append(InstabilityOutcome(
            lam=lam, r1=r1, outcome=outcome, t_star=t_star, final_h1=recs[-1].h1,
            termination=res.termination.value,
            monitor=monitor_invariance(recs, gs.d_omega, energy_until=res.refined_at),
            records=recs, records_path=path, message=res.message))
        log.info("lambda=%g: %s (t*=%s)", lam, outcome, t_star)
    return out


# -- ground-state verification suite ------------------------------------------

GAUSSIAN_AMPLITUDES = (0.5, 1.0, 2.0, 4.0, 8.0)
GAUSSIAN_WIDTHS = (0.5, 1.0, 1.5, 2.0, 3.0)


@dataclass
class EquivalenceReport:
    d: float
    d_tilde: float | None
    attained: float
    trials: list
    skipped: list
    passed: bool
    tol: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def constrained_action(phi, params: ModelParams) -> float:
    """``1/3 ||grad psi||^2`` for ``psi`` the dilation of ``phi`` onto ``K = 0``.

    Evaluated from the dilation law, ``(2/3) A^{3/2} (-B)^{-1/2}``, so strongly
    compressed or stretched trial fields are not re-sampled on the grid.
    """
    c = scaling_coefficients(phi, params)
    beta = c.root()
    return c.J_at(beta)


def verify_equivalence(params: ModelParams, gs: GroundState, tol: float = 1e-2,
                       amplitudes=GAUSSIAN_AMPLITUDES, widths=GAUSSIAN_WIDTHS,
                       attain_tol: float = 1e-4) -> EquivalenceReport:
    """No projected trial ``c exp(-r^2 / (2 sigma^2))`` beats ``d`` by more than ``tol``.

    Trials whose dilation orbit misses ``K = 0`` (``B >= 0``) are skipped and
    listed. The ground state itself must attain ``d`` within ``attain_tol``.
    """
    from .functionals import NotProjectableError

    grid = gs.grid
    trials, skipped = [], []
    for c in amplitudes:
        for sigma in widths:
            phi = grid.sample(lambda r: c * np.exp(-r ** 2 / (2 * sigma ** 2)))
            try:
                trials.append({"c": c, "sigma": sigma, "value": constrained_action(phi, params)})
            except NotProjectableError as exc:
                skipped.append({"c": c, "sigma": sigma, "reason": str(exc)})
    d = gs.d_omega
    attained = gs.grad_sq / 3.0
    d_tilde = min((t["value"] for t in trials), default=None)
    ok_trials = d_tilde is None or d_tilde >= d * (1 - tol)
    ok_attain = abs(attained - d) <= attain_tol * d
    return EquivalenceReport(d=d, d_tilde=d_tilde, attained=attained, trials=trials,
                             skipped=skipped, passed=bool(ok_trials and ok_attain), tol=tol)


@dataclass
class SuiteReport:
    params: ModelParams
    checks: dict
    details: dict
    passed: bool
    first_failure: str | None

    def as_dict(self) -> dict:
        return {"params": dataclasses.asdict(self.params), "checks": self.checks,
                "details": self.details, "passed": self.passed,
                "first_failure": self.first_failure}


def _hard_case(params: ModelParams) -> bool:
    return params.p > 3.5 or params.omega > 0.6


def _residual_scale(gs: GroundState) -> float:
    """``||Lap^2 phi||`` with ``Lap phi`` replaced by ``m phi - f(phi)`` (exact at a solution)."""
    from .functionals import nonlinearity_f
    from .radial import radial_laplacian

    phi = gs.phi
    lap1 = gs.params.mass * phi.values - nonlinearity_f(phi.values, gs.params)
    lap2 = radial_laplacian(phi.grid.field(lap1))
    return math.sqrt(float(phi.grid.volume_weights @ lap2 ** 2))


def residual_study(params: ModelParams, R: float = 20.0, ns=(2000, 4000, 8000),
                   cfg: ShootingConfig | None = None) -> dict:
    """Residual norm of the shooting profile on successively halved grids."""
    base = cfg or ShootingConfig()
    norms, bounds = [], []
    for n in ns:
        gs = find_ground_state(params, dataclasses.replace(base, R=R, n=n))
        norms.append(gs.residual_norm)
        bounds.append(10 * gs.grid.dr ** 2 * _residual_scale(gs))
    ratios = [norms[i] / norms[i + 1] for i in range(len(norms) - 1)]
    return {"n": list(ns), "residual_norms": norms, "bounds": bounds, "ratios": ratios}


def verify_theorem21_suite(params: ModelParams, cfg: ShootingConfig | None = None,
                           cross_tol: float | None = None, profile_tol: float = 0.02,
                           convergence: bool = False) -> SuiteReport:
    """Ground state by both methods, certification, identities and equivalence.

    ``cross_tol`` defaults to 1% and 2% for the harder corner
    (``p > 3.5`` or ``omega > 0.6``). With ``convergence=True`` the residual
    refinement study (three shooting solves) is included.
    """
    cfg = cfg or ShootingConfig()
    tol = cross_tol if cross_tol is not None else (0.02 if _hard_case(params) else 0.01)
    checks, details = {}, {"cross_tol": tol}
    try:
        shoot = find_ground_state(params, cfg)
    except GroundStateError as exc:
        return SuiteReport(params, {"shooting": False}, {"error": str(exc)}, False, "shooting")
    try:
        neh = minimize_nehari(params, cfg.grid, default_seed(cfg.grid, params=params))
    except (GroundStateError, ValueError) as exc:
        checks["nehari"] = False
        details["nehari_error"] = str(exc)
        neh = None
    for name, gs in (("shooting", shoot), ("nehari", neh)):
        if gs is None:
            continue
        for key, ok in gs.checks().items():
            checks[f"{name}.{key}"] = ok
        bound = 10 * gs.grid.dr ** 2 * _residual_scale(gs)
        checks[f"{name}.residual"] = gs.residual_norm <= bound
        details[name] = {"d_omega": gs.d_omega, "K_value": gs.K_value,
                         "residual_norm": gs.residual_norm, "residual_bound": bound,
                         "amplitude": float(gs.phi.values[0])}
    if neh is not None:
        rel_d = abs(shoot.d_omega - neh.d_omega) / shoot.d_omega
        diff = math.sqrt(l2_norm_sq(shoot.phi - neh.phi) / l2_norm_sq(shoot.phi))
        checks["cross.d_omega"] = rel_d <= tol
        checks["cross.profile"] = diff <= profile_tol
        details["cross"] = {"d_rel": rel_d, "profile_rel_l2": diff}
    eq = verify_equivalence(params, shoot, tol=tol)
    checks["equivalence"] = eq.passed
    details["equivalence"] = {"d": eq.d, "d_tilde": eq.d_tilde, "attained": eq.attained,
                              "n_trials": len(eq.trials), "n_skipped": len(eq.skipped)}
    if convergence:
        study = residual_study(params, R=cfg.R, cfg=cfg)
        checks["residual_order"] = all(3.5 <= q <= 4.5 for q in study["ratios"])
        details["residual_study"] = study
    first = next((k for k, ok in checks.items() if not ok), None)
    return SuiteReport(params, checks, details, first is None, first)


def identity_suite(params: ModelParams, grid: RadialGrid | None = None, n_fields: int = 20,
                   seed: int = 0) -> SuiteReport:
    """Functional identities on random smooth fields.

    Coefficient identity ``J - K/3 = 1/3 ||grad phi||^2``, the dilation law
    for ``K``, and exactness of the Nehari projection.
    """
    from .functionals import eval_J, NotProjectableError, project_to_nehari

    grid = grid or RadialGrid(20.0, 4000)
    rng = np.random.default_rng(seed)
    worst = {"coefficient": 0.0, "dilation": 0.0, "projection": 0.0}
    for _ in range(n_fields):
        phi = random_smooth_field(grid, rng)
        J, K = eval_J(phi, params), eval_K(phi, params)
        g3 = grad_l2_norm_sq(phi) / 3
        worst["coefficient"] = max(worst["coefficient"], abs(J - K / 3 - g3) / max(abs(J), g3))
        c = scaling_coefficients(phi, params)
        for beta in (0.5, 0.8, 1.25, 2.0):
            k = eval_K(dilate(phi, beta), params)
            scale = beta * abs(c.A) + beta ** 3 * abs(c.B)
            worst["dilation"] = max(worst["dilation"], abs(k - c.K_at(beta)) / scale)
        try:
            _, psi = project_to_nehari(phi, params)
        except NotProjectableError:
            continue
        worst["projection"] = max(worst["projection"], abs(eval_K(psi, params)) / h1_norm_sq(psi))
    checks = {"coefficient": worst["coefficient"] <= 1e-12,
              "dilation": worst["dilation"] <= 1e-3,
              "projection": worst["projection"] <= 1e-8}
    first = next((k for k, ok in checks.items() if not ok), None)
    return SuiteReport(params, checks, {"worst": worst, "n_fields": n_fields}, first is None, first)


def random_smooth_field(grid: RadialGrid, rng: np.random.Generator):
    """Sum of two or three Gaussian bumps with random amplitude, width and centre.

    Amplitudes range over (1, 6) so both signs of ``B`` occur; bumps are
    centred within ``R/4`` and narrow enough to vanish at ``R``.
    """
    r = grid.r
    vals = np.zeros_like(r)
    for _ in range(rng.integers(2, 4)):
        a = rng.uniform(1.0, 6.0)
        w = rng.uniform(0.5, 2.0)
        c = rng.uniform(0.0, grid.R / 4)
        vals += a * (np.exp(-(r - c) ** 2 / (2 * w * w)) + np.exp(-(r + c) ** 2 / (2 * w * w)))
    return grid.field(vals)


__all__ = [
    "R1Report", "MonitorReport", "InstabilityConfig", "InstabilityOutcome",
    "EquivalenceReport", "SuiteReport", "make_perturbed_data", "check_R1_membership",
    "monitor_invariance", "run_instability", "verify_equivalence", "verify_theorem21_suite",
    "identity_suite", "residual_study", "constrained_action", "random_smooth_field",
]
