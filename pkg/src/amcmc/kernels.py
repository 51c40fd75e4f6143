"""Finite-state Markov kernels and their contraction properties.

Kernels are row-stochastic matrices over a finite state space.  This module
provides total-variation geometry (distances between measures, between
kernels, and the one-step contraction coefficient), stationary-distribution
solving, and a validated geometric-ergodicity certificate ``(C, rho)`` fitted
from powers of the contraction coefficient.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NonUnique,
    NotIrreducible,
    NotSimultaneouslyErgodic,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-12
BOUND_TOL = 1e-10


def _as_readonly(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Row-stochastic transition matrix over ``n`` states.

    Parameters
    ----------
    rows : array_like, shape (n, n)
        ``rows[x, y]`` is the probability of moving from state ``x`` to
        state ``y``.  Every entry must lie in [0, 1] and every row must sum
        to 1 within ``1e-12``.  The stored array is read-only; instances are
        immutable and safe to share across threads.
    """

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise DimensionMismatch(f"expected a square matrix, got shape {rows.shape}")
        if np.any(rows < -ROW_SUM_TOL) or np.any(rows > 1.0 + ROW_SUM_TOL):
            raise ValueError("transition probabilities must lie in [0, 1]")
        row_sums = rows.sum(axis=1)
        worst = np.max(np.abs(row_sums - 1.0))
        if worst > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 within {ROW_SUM_TOL}, worst error {worst:.3e}")
        object.__setattr__(self, "rows", _as_readonly(rows))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def power(self, k: int) -> np.ndarray:
        """Return the raw ``k``-step transition matrix ``P^k``."""
        return np.linalg.matrix_power(self.rows, k)


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over a finite state space.

    Entries must be nonnegative and sum to 1 within ``1e-12``.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size < 1:
            raise DimensionMismatch("distribution must have at least one state")
        if np.any(w < -ROW_SUM_TOL):
            raise ValueError("distribution weights must be nonnegative")
        if abs(w.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"distribution must sum to 1 within {ROW_SUM_TOL}")
        object.__setattr__(self, "weights", _as_readonly(w))

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ErgodicityConstants:
    """Validated geometric-ergodicity certificate for a kernel family.

    Certifies ``sup_x d_tv(P_s^k(x, .), pi) <= C * rho**k`` for every member
    ``s`` and every ``k`` up to ``horizon`` (checked numerically), with
    ``beta`` the largest one-step contraction coefficient in the family.
    """

    C: float
    rho: float
    beta: float
    horizon: int

    def __post_init__(self):
        if self.C < 1.0:
            raise ValueError("C must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def _dists(x) -> np.ndarray:
    if isinstance(x, Distribution):
        return x.weights
    return np.asarray(x, dtype=np.float64).reshape(-1)


def tv_distance(mu, nu) -> float:
    """Total variation distance between two probability vectors.

    Equals ``sup_A |mu(A) - nu(A)| = 0.5 * sum_i |mu_i - nu_i|`` and lies
    in [0, 1].
    """
    a, b = _dists(mu), _dists(nu)
    if a.shape != b.shape:
        raise DimensionMismatch(f"length mismatch: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())


def max_tv_between_kernels(P: StochasticMatrix, Q: StochasticMatrix) -> float:
    """Worst-case row total variation ``max_x d_tv(P(x,.), Q(x,.))``.

    For finite kernel families this is the exact per-step kernel-change
    magnitude used by the waning diagnostics.
    """
    if P.n != Q.n:
        raise DimensionMismatch(f"state counts differ: {P.n} vs {Q.n}")
    return 0.5 * float(np.abs(P.rows - Q.rows).sum(axis=1).max())


def dobrushin_coefficient(P: StochasticMatrix) -> float:
    """One-step contraction coefficient ``max_{x,y} d_tv(P(x,.), P(y,.))``.

    Contracts total variation: ``d_tv(mu P, nu P) <= beta * d_tv(mu, nu)``.
    Quadratic in the state count; intended for desk-scale kernels.
    """
    return _dobrushin_raw(P.rows)


def _dobrushin_raw(rows: np.ndarray) -> float:
    n = rows.shape[0]
    if n == 1:
        return 0.0
    best = 0.0
    # chunk the (x, y) pairs to keep memory at O(chunk * n^2)
    chunk = max(1, int(2e6) // (n * n))
    for start in range(0, n, chunk):
        block = rows[start : start + chunk]  # (c, n)
        diffs = 0.5 * np.abs(block[:, None, :] - rows[None, :, :]).sum(axis=2)
        best = max(best, float(diffs.max()))
    return min(best, 1.0)


def kernel_apply(P: StochasticMatrix, f) -> np.ndarray:
    """Apply the kernel to a function: ``(P f)(x) = sum_y P(x, y) f(y)``."""
    vec = np.asarray(f, dtype=np.float64).reshape(-1)
    if vec.shape[0] != P.n:
        raise DimensionMismatch(f"function length {vec.shape[0]} != state count {P.n}")
    return P.rows @ vec


def _strongly_connected(rows: np.ndarray) -> bool:
    n = rows.shape[0]
    adj = rows > 0.0

    def reachable(a: np.ndarray) -> bool:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = a[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = list(np.nonzero(nxt)[0])
        return bool(seen.all())

    return reachable(adj) and reachable(adj.T)


def stationary_distribution(P: StochasticMatrix) -> Distribution:
    """Solve ``d P = d`` for the unique stationary distribution.

    Uses a direct least-squares solve of the centered system with an
    appended normalization row (deterministic and exact to machine
    precision for irreducible kernels).

    Raises
    ------
    NotIrreducible
        If the transition graph is not strongly connected.
    NonUnique
        If the linear system is rank deficient beyond tolerance.
    """
    if not _strongly_connected(P.rows):
        raise NotIrreducible("transition graph is not strongly connected")
    n = P.n
    A = np.vstack([P.rows.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < n:
        raise NonUnique(f"stationary system has rank {rank} < {n}")
    w = np.clip(sol, 0.0, None)
    w = w / w.sum()
    d = Distribution(w)
    residual = float(np.abs(d.weights @ P.rows - d.weights).max())
    if residual > STATIONARY_TOL:
        raise NonUnique(f"stationary residual {residual:.3e} exceeds {STATIONARY_TOL}")
    return d


def is_stationary_for(pi: Distribution, P: StochasticMatrix, tol: float = STATIONARY_TOL) -> bool:
    """Check ``pi P = pi`` within an absolute tolerance."""
    if pi.n != P.n:
        raise DimensionMismatch(f"length mismatch: {pi.n} vs {P.n}")
    return float(np.abs(pi.weights @ P.rows - pi.weights).max()) <= tol


def sup_tv_to_pi_curve(P: StochasticMatrix, pi: Distribution, horizon: int) -> np.ndarray:
    """Worst-start convergence curve ``e(k) = max_x d_tv(P^k(x,.), pi)``.

    Returns the values for ``k = 1..horizon``.
    """
    if pi.n != P.n:
        raise DimensionMismatch(f"length mismatch: {pi.n} vs {P.n}")
    out = np.empty(horizon)
    Pk = P.rows.copy()
    for k in range(1, horizon + 1):
        if k > 1:
            Pk = Pk @ P.rows
        out[k - 1] = 0.5 * np.abs(Pk - pi.weights[None, :]).sum(axis=1).max()
    return out


def fit_ergodicity_constants(
    P_list: Sequence[StochasticMatrix], pi: Distribution, horizon: int
) -> ErgodicityConstants:
    """Fit a uniform geometric-ergodicity certificate for a kernel family.

    The rate is ``rho = min_m (max_s beta(P_s^m))**(1/m)`` over powers
    ``m <= horizon`` whose worst contraction coefficient is below one; the
    constant is ``C = max(1, max_{s,k<=horizon} e_s(k) / rho**k)`` where
    ``e_s(k)`` is the worst-start total variation to ``pi`` after ``k``
    steps.  The certificate is validated over the fitted horizon; beyond it
    the contraction of the ``m``-th power keeps the decay geometric at the
    same rate.  This is one valid certificate, not the tightest.

    Parameters
    ----------
    P_list : sequence of StochasticMatrix
        Kernel family; each member must leave ``pi`` invariant.
    pi : Distribution
        Common stationary distribution (validated).
    horizon : int
        Largest power probed, at least 2.

    Raises
    ------
    NotSimultaneouslyErgodic
        If no power up to ``horizon`` contracts for every family member.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if not P_list:
        raise ValueError("kernel family is empty")
    for idx, P in enumerate(P_list):
        if not is_stationary_for(pi, P):
            raise ValueError(f"kernel {idx} does not leave pi invariant")

    beta = max(dobrushin_coefficient(P) for P in P_list)

    # worst contraction coefficient of each power, across the family
    beta_m = np.ones(horizon + 1)
    powers = [P.rows.copy() for P in P_list]
    for m in range(1, horizon + 1):
        if m > 1:
            powers = [Pk @ P.rows for Pk, P in zip(powers, P_list)]
        beta_m[m] = max(_dobrushin_raw(Pk) for Pk in powers)

    candidates = [
        (beta_m[m] ** (1.0 / m), m) for m in range(1, horizon + 1) if beta_m[m] < 1.0
    ]
    if not candidates:
        raise NotSimultaneouslyErgodic(
            f"no power m <= {horizon} has contraction coefficient < 1 for the whole family"
        )
    rho, _ = min(candidates)

    C = 1.0
    if rho > 0.0:
        ks = np.arange(1, horizon + 1)
        for P in P_list:
            e = sup_tv_to_pi_curve(P, pi, horizon)
            C = max(C, float(np.max(e / rho**ks)))
    return ErgodicityConstants(C=C, rho=float(rho), beta=float(beta), horizon=horizon)


def validate_ergodicity_constants(
    consts: ErgodicityConstants,
    P_list: Sequence[StochasticMatrix],
    pi: Distribution,
    tol: float = BOUND_TOL,
) -> float:
    """Check ``e_s(k) <= C rho**k + tol`` over the fitted horizon.

    Returns the worst signed violation ``max(e_s(k) - C rho**k)``; a value
    below ``tol`` means the certificate is valid.
    """
    worst = -np.inf
    ks = np.arange(1, consts.horizon + 1)
    bound = consts.C * consts.rho**ks
    for P in P_list:
        e = sup_tv_to_pi_curve(P, pi, consts.horizon)
        worst = max(worst, float(np.max(e - bound)))
    if worst > tol:
        raise NotSimultaneouslyErgodic(f"certificate violated by {worst:.3e}")
    return worst


# ---------------------------------------------------------------------------
# file formats


def kernel_to_json_dict(P: StochasticMatrix, pi: Distribution | None = None) -> dict:
    d = {"n": P.n, "rows": [list(map(float, row)) for row in P.rows]}
    if pi is not None:
        d["pi"] = list(map(float, pi.weights))
    return d


def write_kernel_json(path, P: StochasticMatrix, pi: Distribution | None = None) -> None:
    """Write a kernel file: JSON with fields ``n``, ``rows`` and optional ``pi``."""
    Path(path).write_text(json.dumps(kernel_to_json_dict(P, pi), indent=2) + "\n")


def read_kernel_json(path) -> tuple[StochasticMatrix, Distribution | None]:
    """Read a kernel file written by :func:`write_kernel_json`."""
    d = json.loads(Path(path).read_text())
    rows = np.asarray(d["rows"], dtype=np.float64)
    if rows.shape != (d["n"], d["n"]):
        raise DimensionMismatch(f"rows shape {rows.shape} does not match n={d['n']}")
    P = StochasticMatrix(rows)
    pi = Distribution(d["pi"]) if "pi" in d else None
    return P, pi


def write_sup_tv_csv(path, curves: dict) -> None:
    """Export convergence curves as CSV with header ``s,k,sup_tv``.

    ``curves`` maps a member label to its ``e(k)`` array (``k`` starting
    at 1).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "k", "sup_tv"])
        for label, curve in curves.items():
            for k, value in enumerate(curve, start=1):
                writer.writerow([label, k, repr(float(value))])
