"""Poisson-equation solutions, norm bounds, and the asymptotic variance.

For a kernel ``P`` with stationary ``pi`` and a test function ``phi``, the
solution ``g`` of ``g - P g = phi - pi(phi)`` with ``pi(g) = 0`` converts
ergodic-average error into a martingale plus boundary terms.  The exact
linear solve is the workhorse; the geometric-series summation with a
certified truncation index serves as an independent oracle.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    NegativeBeyondTolerance,
    NoContraction,
    SingularBeyondCentering,
)
from .kernels import Distribution, ErgodicityConstants, StochasticMatrix, kernel_apply

RESIDUAL_TOL = 1e-10
CENTERING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Bounded observable with its mean under ``pi`` and oscillation.

    ``osc`` is ``max(values) - min(values)``; the centered copy
    ``values - mean_under_pi`` integrates to zero under ``pi``.
    """

    values: np.ndarray
    mean_under_pi: float
    osc: float

    @classmethod
    def from_values(cls, values, pi: Distribution) -> "TestFunction":
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.shape[0] != pi.n:
            raise DimensionMismatch(f"function length {v.shape[0]} != state count {pi.n}")
        v = v.copy()
        v.setflags(write=False)
        mean = float(pi.weights @ v)
        return cls(values=v, mean_under_pi=mean, osc=float(v.max() - v.min()))

    @classmethod
    def indicator(cls, state: int, pi: Distribution) -> "TestFunction":
        """Indicator of a single state."""
        v = np.zeros(pi.n)
        v[state] = 1.0
        return cls.from_values(v, pi)

    @property
    def centered(self) -> np.ndarray:
        return self.values - self.mean_under_pi


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Solution ``g`` with its residual and centering metadata.

    Satisfies ``g - P g = phi - pi(phi)`` within ``residual_inf_norm`` and
    ``pi(g) = pi_mean`` (close to zero).
    """

    g: np.ndarray
    residual_inf_norm: float
    pi_mean: float

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.g).max())


def solve_poisson_exact(
    P: StochasticMatrix, pi: Distribution, phi: TestFunction
) -> PoissonSolution:
    """Solve ``(I - P) g = phi - pi(phi)`` subject to ``pi(g) = 0``.

    The singular centered system is augmented with the normalization row
    ``pi^T g = 0`` and solved by least squares; for ergodic ``P`` the system
    is consistent and the solution exact to machine precision.

    Raises
    ------
    SingularBeyondCentering
        If the augmented system is rank deficient or the residual exceeds
        ``1e-10`` (signals a reducible kernel).
    """
    n = P.n
    if pi.n != n or phi.values.shape[0] != n:
        raise DimensionMismatch("kernel, distribution and function sizes must agree")
    phibar = phi.centered
    A = np.vstack([np.eye(n) - P.rows, pi.weights[None, :]])
    b = np.concatenate([phibar, [0.0]])
    g, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < n:
        raise SingularBeyondCentering(f"centered system has rank {rank} < {n}")
    residual = float(np.abs(g - P.rows @ g - phibar).max())
    pi_mean = float(pi.weights @ g)
    if residual > RESIDUAL_TOL or abs(pi_mean) > CENTERING_TOL:
        raise SingularBeyondCentering(
            f"solve left residual {residual:.3e}, centering {pi_mean:.3e}"
        )
    g.setflags(write=False)
    return PoissonSolution(g=g, residual_inf_norm=residual, pi_mean=pi_mean)


def neumann_truncation_index(
    tol: float, consts: ErgodicityConstants, osc: float
) -> int:
    """Smallest ``K`` with certified series tail below ``tol``.

    The tail after ``K`` terms is at most
    ``C * rho**(K+1) * osc / (1 - rho)``.
    """
    if consts.rho >= 1.0:
        raise NoContraction("series summation requires rho < 1")
    if osc == 0.0 or consts.rho == 0.0:
        return 0
    target = tol * (1.0 - consts.rho) / (consts.C * osc)
    if target >= consts.rho:
        return 0
    return max(0, math.ceil(math.log(target) / math.log(consts.rho)) - 1)


def solve_poisson_neumann(
    P: StochasticMatrix,
    pi: Distribution,
    phi: TestFunction,
    tol: float,
    consts: ErgodicityConstants,
) -> PoissonSolution:
    """Sum the series ``g = sum_k P^k (phi - pi(phi))`` to certified error.

    Truncates at the smallest ``K`` whose geometric tail bound is below
    ``tol``; agrees with :func:`solve_poisson_exact` within ``2 * tol``.
    """
    K = neumann_truncation_index(tol, consts, phi.osc)
    phibar = phi.centered
    term = phibar.copy()
    g = phibar.copy()
    for _ in range(K):
        term = P.rows @ term
        g += term
    residual = float(np.abs(g - P.rows @ g - phibar).max())
    pi_mean = float(pi.weights @ g)
    g.setflags(write=False)
    return PoissonSolution(g=g, residual_inf_norm=residual, pi_mean=pi_mean)


@dataclass(frozen=True)
class BoundReport:
    """Outcome of a single inequality check."""

    quantity: str
    value: float
    bound: float
    passed: bool
    margin: float

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "value": self.value,
            "bound": self.bound,
            "pass": self.passed,
            "margin": self.margin,
        }


def _make_report(quantity: str, value: float, bound: float, tol: float = 1e-10) -> BoundReport:
    return BoundReport(
        quantity=quantity,
        value=float(value),
        bound=float(bound),
        passed=bool(value <= bound + tol),
        margin=float(bound - value),
    )


def check_poisson_bound(
    sol: PoissonSolution, consts: ErgodicityConstants, phi: TestFunction
) -> BoundReport:
    """Check ``||g||_inf <= C * osc(phi) / (1 - rho)``."""
    bound = consts.C * phi.osc / (1.0 - consts.rho)
    return _make_report("poisson_sup_norm", sol.sup_norm, bound)


def check_lipschitz_bound(
    sol_s: PoissonSolution,
    sol_sp: PoissonSolution,
    D: float,
    consts: ErgodicityConstants,
    phi: TestFunction,
) -> BoundReport:
    """Check ``||g_s - g_s'||_inf <= 4 C^2 (1-rho)^-2 osc(phi) * D``.

    ``D`` must be the worst-case row total variation between the two
    kernels that produced the solutions.
    """
    value = float(np.abs(sol_s.g - sol_sp.g).max())
    bound = 4.0 * consts.C**2 / (1.0 - consts.rho) ** 2 * phi.osc * D
    return _make_report("poisson_solution_gap", value, bound)


def clt_variance(P: StochasticMatrix, pi: Distribution, phi: TestFunction) -> float:
    """Asymptotic variance ``pi(g^2 - (P g)^2)`` of the ergodic average.

    Nonnegative by construction; tiny negative values from floating point
    are clamped at zero.

    Raises
    ------
    NegativeBeyondTolerance
        If the computed value is below ``-1e-8`` (inconsistent solution).
    """
    sol = solve_poisson_exact(P, pi, phi)
    Pg = kernel_apply(P, sol.g)
    value = float(pi.weights @ (sol.g**2 - Pg**2))
    if value < -1e-8:
        raise NegativeBeyondTolerance(f"variance {value:.3e} below -1e-8")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# file formats


def write_reports_json(path, reports) -> None:
    """Serialize bound reports as a JSON array of
    ``{quantity, value, bound, pass, margin}`` records."""
    payload = [r.to_dict() for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_solution_csv(path, sol: PoissonSolution) -> None:
    """Export the solution vector as CSV with header ``state,g``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "g"])
        for state, value in enumerate(sol.g):
            writer.writerow([state, repr(float(value))])
