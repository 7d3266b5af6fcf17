"""Nonlinearity, potential and the action / constraint / energy functionals.

With ``A = 1/2 int |grad phi|^2`` and the zero-derivative part

    P = (1-w^2)/2 int phi^2 + int G(|phi|),

the action is ``J = A + P`` and the dilation constraint is ``K = A + 3P``.
All functionals are assembled from the same two numbers, so identities such
as ``J - K/3 = (2/3) A`` hold to rounding error on every field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .radial import (
    RadialField,
    FieldError,
    dilate,
    grad_l2_norm_sq,
    h1_norm_sq,
    integrate_volume,
    radial_laplacian,
    _same_grid,
)


class ParameterError(ValueError):
    """Model parameters outside the supported range."""


class NotProjectableError(ValueError):
    """The dilation orbit of a field never meets ``K = 0``."""


@dataclass(frozen=True)
class ModelParams:
    """Exponent ``p`` in (2, 4) and frequency ``omega`` in [0, 1)."""

    p: float
    omega: float = 0.0

    def __post_init__(self):
        if not (2 < self.p < 4):
            raise ParameterError(f"exponent p={self.p} outside the range 2 < p < 4")
        if not (0 <= self.omega < 1):
            raise ParameterError(
                f"frequency omega={self.omega} outside 0 <= omega < 1 "
                "(omega = 1 makes the mass term degenerate)")

    @property
    def mass(self) -> float:
        """The coefficient ``1 - omega^2``."""
        return 1.0 - self.omega ** 2

    def at_rest(self) -> "ModelParams":
        return ModelParams(self.p, 0.0)


def _as_array(u):
    return np.asarray(u, dtype=float)


def log_abs_sq(u):
    """``ln |u|^2`` with 0 where ``u = 0`` (only ever multiplied by |u|^q, q > 2)."""
    u = _as_array(u)
    a = np.abs(u)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = 2.0 * np.log(a[nz])
    return out


def nonlinearity_f(u, params: ModelParams):
    """``f(u) = |u|^(p-1) u ln|u|^2``, extended by ``f(0) = 0``."""
    u = _as_array(u)
    out = np.abs(u) ** (params.p - 1) * u * log_abs_sq(u)
    return out if out.ndim else float(out)


def nonlinearity_df(u, params: ModelParams):
    """``f'(u) = |u|^(p-1) (p ln|u|^2 + 2)``; 0 at the origin."""
    u = _as_array(u)
    a = np.abs(u)
    out = a ** (params.p - 1) * (params.p * log_abs_sq(u) + 2.0)
    return out if out.ndim else float(out)


def potential_G(u, params: ModelParams):
    """``G(|u|) = 2/(p+1)^2 |u|^(p+1) - 1/(p+1) |u|^(p+1) ln|u|^2``.

    ``dG/du = -f(u)``, so ``W(u) = u^2/2 + G(|u|)`` satisfies
    ``W'(u) = u - f(u)``.
    """
    u = _as_array(u)
    q = params.p + 1
    a = np.abs(u) ** q
    out = a * (2.0 / q**2 - log_abs_sq(u) / q)
    return out if out.ndim else float(out)


def potential_W(u, params: ModelParams):
    """Full potential ``u^2/2 + G(|u|)`` of the time-dependent equation."""
    u = _as_array(u)
    return 0.5 * u * u + potential_G(u, params)


# -- functionals ------------------------------------------------------------

@dataclass(frozen=True)
class _Parts:
    grad: float   # int |grad phi|^2
    mass: float   # int phi^2
    pot: float    # int G(|phi|)


def _parts(phi: RadialField, params: ModelParams) -> _Parts:
    return _Parts(
        grad=grad_l2_norm_sq(phi),
        mass=integrate_volume(phi.grid.field(phi.values ** 2)),
        pot=integrate_volume(phi.grid.field(potential_G(phi.values, params))),
    )


def _zero_order(parts: _Parts, params: ModelParams) -> float:
    return 0.5 * params.mass * parts.mass + parts.pot


def eval_J(phi: RadialField, params: ModelParams) -> float:
    """Action ``J_omega``."""
    parts = _parts(phi, params)
    return 0.5 * parts.grad + _zero_order(parts, params)


def eval_K(phi: RadialField, params: ModelParams) -> float:
    """Dilation constraint ``K_omega = d/dbeta J_omega(phi(./beta)) at beta = 1``."""
    parts = _parts(phi, params)
    return 0.5 * parts.grad + 3.0 * _zero_order(parts, params)


def eval_JK(phi: RadialField, params: ModelParams) -> tuple[float, float, float]:
    """``(J, K, int |grad phi|^2)`` from one set of integrals."""
    parts = _parts(phi, params)
    P = _zero_order(parts, params)
    return 0.5 * parts.grad + P, 0.5 * parts.grad + 3.0 * P, parts.grad


def eval_energy(u: RadialField, v: RadialField, params: ModelParams) -> float:
    """``E(u, u_t) = 1/2 int u_t^2 + J_0(u)``."""
    _same_grid(u, v)
    kinetic = integrate_volume(v.grid.field(v.values ** 2))
    return 0.5 * kinetic + eval_J(u, params.at_rest())


@dataclass(frozen=True)
class ScalingCoefficients:
    """``K(phi(./beta)) = beta*A + beta^3*B``."""

    A: float
    B: float

    def K_at(self, beta: float) -> float:
        return beta * self.A + beta ** 3 * self.B

    def J_at(self, beta: float) -> float:
        """``J(phi(./beta)) = beta*A + beta^3*B/3``."""
        return beta * self.A + beta ** 3 * self.B / 3.0

    def root(self) -> float:
        if not self.B < 0:
            raise NotProjectableError(
                f"not projectable: B={self.B:.6g} >= 0, so K(phi(./beta)) > 0 for all beta")
        return math.sqrt(-self.A / self.B)


def scaling_coefficients(phi: RadialField, params: ModelParams) -> ScalingCoefficients:
    if phi.is_zero():
        raise FieldError("scaling coefficients undefined for the zero field")
    parts = _parts(phi, params)
    return ScalingCoefficients(A=0.5 * parts.grad, B=3.0 * _zero_order(parts, params))


def project_to_nehari(phi: RadialField, params: ModelParams,
                      rtol: float = 1e-13) -> tuple[float, RadialField]:
    """Dilate ``phi`` onto ``K = 0``; returns ``(beta_star, phi(./beta_star))``.

    Requires ``B < 0``. When ``K(phi) < 0`` the root lies in (0, 1).

    The closed-form root ``sqrt(-A/B)`` is exact for the continuum dilation
    law; on the grid, interpolation perturbs that law at the 1e-3 level, so
    the root is polished by bracketing ``K(phi(./beta))`` itself until
    ``|K| <= rtol * ||psi||_{H^1}^2``.
    """
    coeffs = scaling_coefficients(phi, params)
    beta0 = coeffs.root()
    if abs(coeffs.A + coeffs.B) <= rtol * h1_norm_sq(phi):
        return 1.0, dilate(phi, 1.0)

    def k_rel(beta):
        psi = dilate(phi, beta)
        return eval_K(psi, params) / h1_norm_sq(psi)

    # K(phi(./beta)) > 0 for small beta and < 0 for large beta
    lo, hi = beta0 / 1.05, beta0 * 1.05
    for _ in range(40):
        if k_rel(lo) > 0:
            break
        lo /= 1.5
    for _ in range(40):
        if k_rel(hi) < 0:
            break
        hi *= 1.5
    beta = brentq(k_rel, lo, hi, xtol=1e-15 * beta0, rtol=4 * np.finfo(float).eps)
    return beta, dilate(phi, beta)


def ode_residual(phi: RadialField, params: ModelParams) -> RadialField:
    """Nodal ``-Lap phi + (1-w^2) phi - f(phi)``."""
    res = -radial_laplacian(phi) + params.mass * phi.values - nonlinearity_f(phi.values, params)
    return phi.grid.field(res)


def residual_norm(phi: RadialField, params: ModelParams) -> float:
    """Volume-weighted L^2 norm of :func:`ode_residual`."""
    res = ode_residual(phi, params)
    return math.sqrt(integrate_volume(phi.grid.field(res.values ** 2)))


def relative_K(phi: RadialField, params: ModelParams) -> float:
    return abs(eval_K(phi, params)) / h1_norm_sq(phi)
