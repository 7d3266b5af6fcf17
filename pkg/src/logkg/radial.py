"""Radial grids and fields on [0, R] for radially symmetric functions on R^3.

Every volume integral is realised as ``4*pi * int_0^R f(r) r^2 dr`` with
composite Simpson weights, and radial derivatives use centred differences
with the symmetry closure ``u'(0) = 0`` and a one-sided stencil at ``r = R``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

FOUR_PI = 4.0 * math.pi

# sharp constant in r|u(r)| <= C ||u||_{H^1} for radial u on R^3
STRAUSS_CONSTANT = 1.0 / math.sqrt(FOUR_PI)


class FieldError(ValueError):
    """Raised for malformed grids or fields."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform mesh ``r_i = i*dr`` for ``i = 0..n`` on ``[0, R]``."""

    R: float
    n: int

    def __post_init__(self):
        if not (self.R > 0 and math.isfinite(self.R)):
            raise FieldError(f"truncation radius must be positive, got R={self.R}")
        if int(self.n) != self.n or self.n < 16:
            raise FieldError(f"need an integer n >= 16 intervals, got n={self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dr(self) -> float:
        return self.R / self.n

    @cached_property
    def r(self) -> np.ndarray:
        r = np.arange(self.n + 1) * self.dr
        r[-1] = self.R
        r.setflags(write=False)
        return r

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for ``int_0^R g(r) dr``.

        Composite Simpson; for odd ``n`` the last three intervals use the
        3/8 rule so the order is kept.
        """
        n, h = self.n, self.dr
        w = np.zeros(n + 1)
        m = n if n % 2 == 0 else n - 3
        w[0:m + 1:2] = 2.0
        w[1:m:2] = 4.0
        w[0] = w[m] = 1.0
        w[:m + 1] *= h / 3.0
        if m < n:
            w[m:] += np.array([1.0, 3.0, 3.0, 1.0]) * (3.0 * h / 8.0)
        w.setflags(write=False)
        return w

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Weights realising ``int_{R^3} f dx = sum_i vw_i f(r_i)``."""
        vw = FOUR_PI * self.weights * self.r**2
        vw.setflags(write=False)
        return vw

    def field(self, values) -> "RadialField":
        return RadialField(self, values)

    def sample(self, fn) -> "RadialField":
        return RadialField(self, fn(self.r))

    def zeros(self) -> "RadialField":
        return RadialField(self, np.zeros(self.n + 1))

    @classmethod
    def from_nodes(cls, r, rtol: float = 1e-9) -> "RadialGrid":
        """Infer a grid from a node column; it must start at 0 and be uniform."""
        r = np.asarray(r, dtype=float)
        if r.ndim != 1 or r.size < 17:
            raise FieldError("need at least 17 radial nodes")
        if r[0] != 0.0:
            raise FieldError(f"first node must be r=0, got {r[0]!r}")
        n = r.size - 1
        grid = cls(float(r[-1]), n)
        if not np.allclose(r, grid.r, rtol=0.0, atol=rtol * grid.R):
            raise FieldError("radial nodes are not uniformly spaced")
        return grid


@dataclass(frozen=True, eq=False)
class RadialField:
    """Real samples ``u_i = u(r_i)`` of a radial function."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)
    blown_up: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n + 1,):
            raise FieldError(
                f"expected {self.grid.n + 1} values, got shape {vals.shape}")
        if not self.blown_up and not np.all(np.isfinite(vals)):
            raise FieldError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    def __len__(self):
        return self.values.size

    def __mul__(self, c: float) -> "RadialField":
        return RadialField(self.grid, c * self.values)

    __rmul__ = __mul__

    def __add__(self, other: "RadialField") -> "RadialField":
        _same_grid(self, other)
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other: "RadialField") -> "RadialField":
        _same_grid(self, other)
        return RadialField(self.grid, self.values - other.values)

    def __neg__(self) -> "RadialField":
        return RadialField(self.grid, -self.values)

    def is_zero(self) -> bool:
        return not np.any(self.values)


def _same_grid(a: RadialField, b: RadialField) -> None:
    if a.grid != b.grid:
        raise FieldError(f"grid mismatch: {a.grid} vs {b.grid}")


def _finite(u: RadialField) -> np.ndarray:
    if not np.all(np.isfinite(u.values)):
        raise FieldError("field contains non-finite values")
    return u.values


# -- quadrature and norms ---------------------------------------------------

def integrate_volume(f: RadialField) -> float:
    """``4*pi * int_0^R f(r) r^2 dr`` by composite Simpson."""
    return float(f.grid.volume_weights @ _finite(f))


def radial_derivative(u: RadialField) -> np.ndarray:
    """Nodal ``u'(r_i)``: centred inside, ``u'(0) = 0``, one-sided at ``R``."""
    v = _finite(u)
    h = u.grid.dr
    du = np.empty_like(v)
    du[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    du[0] = 0.0
    du[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return du


def radial_laplacian(u: RadialField) -> np.ndarray:
    """Nodal ``u'' + (2/r) u'``, with the limit ``3 u''(0)`` at the origin."""
    v = _finite(u)
    h = u.grid.dr
    r = u.grid.r
    lap = np.empty_like(v)
    lap[1:-1] = ((v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
                 + (v[2:] - v[:-2]) / (h * r[1:-1]))
    # ghost symmetry u(-h) = u(h)
    lap[0] = 3 * 2 * (v[1] - v[0]) / h**2
    d2 = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    d1 = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    lap[-1] = d2 + 2 * d1 / r[-1]
    return lap


def l2_norm_sq(u: RadialField) -> float:
    v = _finite(u)
    return float(u.grid.volume_weights @ (v * v))


def grad_l2_norm_sq(u: RadialField) -> float:
    du = radial_derivative(u)
    return float(u.grid.volume_weights @ (du * du))


def h1_norm_sq(u: RadialField) -> float:
    return grad_l2_norm_sq(u) + l2_norm_sq(u)


def lp_norm(u: RadialField, alpha: float) -> float:
    if not alpha > 1:
        raise FieldError(f"L^alpha norm needs alpha > 1, got {alpha}")
    v = np.abs(_finite(u))
    return float(u.grid.volume_weights @ v**alpha) ** (1.0 / alpha)


# -- dilation ---------------------------------------------------------------

def interpolate(u: RadialField, x) -> np.ndarray:
    """Four-point Lagrange interpolation of ``u`` at radii ``x >= 0``.

    The even extension ``u(-r) = u(r)`` supplies stencil points left of the
    origin; points beyond ``R`` evaluate to 0.
    """
    x = np.asarray(x, dtype=float)
    v = _finite(u)
    grid = u.grid
    h, n = grid.dr, grid.n
    # pad: one even ghost on the left, two zeros on the right
    padded = np.concatenate(([v[1]], v, [0.0, 0.0]))
    s = x / h
    j = np.clip(np.floor(s).astype(int), 0, n)
    t = s - j
    # stencil nodes j-1, j, j+1, j+2 live at padded[j .. j+3]
    w0 = -t * (t - 1) * (t - 2) / 6
    w1 = (t + 1) * (t - 1) * (t - 2) / 2
    w2 = -(t + 1) * t * (t - 2) / 2
    w3 = (t + 1) * t * (t - 1) / 6
    out = (w0 * padded[j] + w1 * padded[j + 1]
           + w2 * padded[j + 2] + w3 * padded[j + 3])
    out[x > grid.R] = 0.0
    return out


def dilate(u: RadialField, beta: float) -> RadialField:
    """Return ``psi(r) = u(r / beta)`` sampled on the same grid."""
    if not beta > 0:
        raise FieldError(f"dilation factor must be positive, got {beta}")
    if beta == 1:
        return RadialField(u.grid, u.values.copy())
    return RadialField(u.grid, interpolate(u, u.grid.r / beta))


# -- embedding diagnostics --------------------------------------------------

def strauss_ratio(u: RadialField) -> float:
    """``max_i r_i |u(r_i)| / ||u||_{H^1}`` over nodes with ``r_i > 0``.

    For radial H^1 functions on R^3 this never exceeds ``STRAUSS_CONSTANT``.
    """
    h1 = h1_norm_sq(u)
    if not h1 > 0:
        raise FieldError("Strauss ratio undefined for the zero field")
    return float(np.max(u.r[1:] * np.abs(u.values[1:])) / math.sqrt(h1))


def gn_ratio(u: RadialField, alpha: float) -> float:
    """``||u||_alpha / (||u||_2^(1-theta) ||grad u||_2^theta)`` with
    ``theta = 3(alpha-2)/(2 alpha)``, for ``2 < alpha < 6``."""
    if not 2 < alpha < 6:
        raise FieldError(f"Gagliardo-Nirenberg exponent must lie in (2, 6), got {alpha}")
    if u.is_zero():
        raise FieldError("Gagliardo-Nirenberg ratio undefined for the zero field")
    theta = 3 * (alpha - 2) / (2 * alpha)
    l2 = math.sqrt(l2_norm_sq(u))
    grad = math.sqrt(grad_l2_norm_sq(u))
    return lp_norm(u, alpha) / (l2 ** (1 - theta) * grad ** theta)


# -- field CSV ---------------------------------------------------------------

def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(path, u: RadialField, v: RadialField | None = None) -> Path:
    """Write ``r,u`` (or ``r,u,v``) rows with 17 significant digits."""
    path = Path(path)
    if v is not None:
        _same_grid(u, v)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "u"] if v is None else ["r", "u", "v"])
        for i, r in enumerate(u.r):
            row = [fmt(r), fmt(u.values[i])]
            if v is not None:
                row.append(fmt(v.values[i]))
            w.writerow(row)
    return path


def read_field_csv(path) -> tuple[RadialField, RadialField | None]:
    """Read a field CSV; returns ``(u, v)`` with ``v`` None when absent."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FieldError(f"{path}: empty field file")
    header = [h.strip() for h in rows[0]]
    if header not in (["r", "u"], ["r", "u", "v"]):
        raise FieldError(f"{path}: header must be r,u or r,u,v, got {','.join(header)}")
    try:
        data = np.array([[float(x) for x in row] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FieldError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FieldError(f"{path}: ragged or empty field rows")
    grid = RadialGrid.from_nodes(data[:, 0])
    u = RadialField(grid, data[:, 1])
    v = RadialField(grid, data[:, 2]) if len(header) == 3 else None
    return u, v
