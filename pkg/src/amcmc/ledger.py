"""Adaptive chain driver and the exact three-term decomposition of
ergodic-average error.

For a trajectory ``(S_k, X_k)`` and a test function ``phi``, the centered
partial sums split exactly into a martingale term ``M_n`` built from the
Poisson solutions, an adaptation term ``A_n`` collecting the perturbation
from kernel changes, and a telescoping remainder ``R_n``:

``sum_{k<=n} [phi(X_k) - pi(phi)] = M_n + A_n + R_n``.

On a finite state space every ingredient is computable exactly, so the
identities here are assertable to floating-point accuracy rather than
estimated.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sp_stats

from .adaptation import RareSchedule, next_adaptation_decision
from .errors import DegenerateVariance, DobrushinViolation, MissingSolution, SchemeEscape
from .families import KernelFamily
from .kernels import dobrushin_coefficient, max_tv_between_kernels
from .poisson import TestFunction, clt_variance, solve_poisson_exact

# ---------------------------------------------------------------------------
# random streams
#
# Reproducibility contract: the chain with seed material ``s`` draws from
# Generator(Philox(SeedSequence(s))), one counter-based stream per chain.
# Per step the transition uniform is drawn first, then any draws the
# adaptation scheme requires, in that order.  Replication r of a study with
# root seed ``s`` uses SeedSequence(entropy=s, spawn_key=(r,)).


def chain_generator(seed) -> np.random.Generator:
    """Counter-based stream for one chain (int seed or SeedSequence)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def replication_seed_sequences(seeds: Sequence[int], count: int) -> list:
    """Per-replication seed material.

    With one root seed, replication ``r`` uses
    ``SeedSequence(entropy=root, spawn_key=(r,))``; with an explicit list of
    ``count`` seeds, each is used directly.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if len(seeds) == count:
        return [np.random.SeedSequence(s) for s in seeds]
    if len(seeds) == 1:
        return [np.random.SeedSequence(entropy=seeds[0], spawn_key=(r,)) for r in range(count)]
    raise ValueError(f"need 1 or {count} seeds, got {len(seeds)}")


# ---------------------------------------------------------------------------
# adaptation schemes over finite families


class ConstantScheme:
    """Non-adaptive scheme: the parameter index never changes."""

    def start(self, s0: int, rng) -> int:
        return s0

    def step(self, k: int, x_prev: int, x_new: int, s_prev: int, rng) -> int:
        return s_prev


class ScheduleScheme:
    """Exogenous scheme following a fixed index sequence ``k -> s_k``."""

    def __init__(self, indices: Sequence[int] | Callable[[int], int]):
        if callable(indices):
            self._fn = indices
            self._arr = None
        else:
            self._arr = np.asarray(indices, dtype=np.int64)
            self._fn = lambda k: int(self._arr[k])

    def index_at(self, k: int) -> int:
        return int(self._fn(k))

    def index_array(self, n: int) -> np.ndarray:
        if self._arr is not None and self._arr.size >= n + 1:
            return self._arr[: n + 1]
        return np.asarray([self.index_at(k) for k in range(n + 1)], dtype=np.int64)

    def start(self, s0: int, rng) -> int:
        return self.index_at(0)

    def step(self, k: int, x_prev: int, x_new: int, s_prev: int, rng) -> int:
        return self.index_at(k)


class MeanTrackingScheme:
    """Covariance-estimation-style scheme on a parameter grid.

    Tracks the running mean of a per-state statistic with step sizes
    ``1/k`` (so the estimate equals the exact sample mean) and selects the
    grid member nearest the estimate.  Adaptation moves shrink at rate
    ``1/k``, so kernel changes die out.
    """

    def __init__(self, family: KernelFamily, statistic):
        if family.params is None:
            raise ValueError("scheme needs a parameter grid")
        self.family = family
        self.statistic = np.asarray(statistic, dtype=np.float64)
        if self.statistic.shape[0] != family.n_states:
            raise ValueError("statistic must assign a value per state")
        self._mean = 0.0

    def start(self, s0: int, rng) -> int:
        self._mean = 0.0
        return s0

    def step(self, k: int, x_prev: int, x_new: int, s_prev: int, rng) -> int:
        self._mean += (float(self.statistic[x_new]) - self._mean) / k
        return self.family.nearest_index(self._mean)


class RateTargetScheme:
    """Acceptance-rate-style scheme on a parameter grid.

    Runs a projected scalar update ``t <- clip(t + gamma_k (moved - target))``
    with ``gamma_k = c * k**(-2/3)`` by default, where ``moved`` indicates
    that the chain left its previous state, and selects the nearest grid
    member.
    """

    def __init__(
        self,
        family: KernelFamily,
        target: float = 0.234,
        c: float = 1.0,
        exponent: float = 2.0 / 3.0,
    ):
        if family.params is None:
            raise ValueError("scheme needs a parameter grid")
        self.family = family
        self.target = target
        self.c = c
        self.exponent = exponent
        self._lo = min(family.params)
        self._hi = max(family.params)
        self._t = self._lo
        self._alphas: list[float] = []

    def start(self, s0: int, rng) -> int:
        self._t = float(self.family.params[s0])
        self._alphas = []
        return s0

    def step(self, k: int, x_prev: int, x_new: int, s_prev: int, rng) -> int:
        gamma = self.c * float(k) ** (-self.exponent)
        moved = 1.0 if x_new != x_prev else 0.0
        self._alphas.append(moved)
        self._t = float(np.clip(self._t + gamma * (moved - self.target), self._lo, self._hi))
        return self.family.nearest_index(self._t)

    def aux_record(self) -> dict:
        return {"alpha": self._alphas}


class RareCycleScheme:
    """Scheme changing the index only at rare schedule times.

    At each adaptation time the index advances cyclically through the
    family; between times it is frozen, so the per-step kernel change is
    exactly zero off the schedule.
    """

    def __init__(self, family: KernelFamily, schedule_factory: Callable[[], RareSchedule]):
        self.family = family
        self.schedule_factory = schedule_factory
        self._sched: RareSchedule | None = None
        self._uniforms: list[float] = []

    def start(self, s0: int, rng) -> int:
        self._sched = self.schedule_factory()
        self._uniforms = []
        return s0

    def step(self, k: int, x_prev: int, x_new: int, s_prev: int, rng) -> int:
        u = None
        if self._sched.kind == "bernoulli":
            u = rng.random()
            self._uniforms.append(u)
        decision = next_adaptation_decision(self._sched, k, u)
        if decision.adapt:
            return (s_prev + 1) % self.family.size
        return s_prev

    def aux_record(self) -> dict:
        return {"U": self._uniforms} if self._uniforms else {}


def converging_index_schedule(
    family: KernelFamily,
    s0: int,
    n: int,
    c: float = 0.5,
    exponent: float = 1.5,
    drift: float = 1.0,
) -> tuple[ScheduleScheme, int]:
    """Deterministic schedule with summable step sizes, hence a settled limit.

    The latent parameter follows ``t_k = clip(t_{k-1} + c k**-exponent *
    drift)`` over the grid range; because ``sum_k c k**-exponent`` is finite
    the index stops changing after finitely many steps.  Returns the scheme
    and the limit index.
    """
    if family.params is None:
        raise ValueError("schedule needs a parameter grid")
    if exponent <= 1.0:
        raise ValueError("exponent must exceed 1 for a summable schedule")
    lo, hi = min(family.params), max(family.params)
    idx = np.empty(n + 1, dtype=np.int64)
    idx[0] = s0
    t = float(family.params[s0])
    for k in range(1, n + 1):
        t = float(np.clip(t + c * float(k) ** (-exponent) * drift, lo, hi))
        idx[k] = family.nearest_index(t)
    return ScheduleScheme(idx), int(idx[-1])


# ---------------------------------------------------------------------------
# chain driver


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Realized adaptive chain: states, parameter indices, seed material.

    ``X`` and ``S`` both have ``n + 1`` entries including the initial pair;
    the transition producing ``X_k`` used kernel index ``S[k-1]``.
    """

    X: np.ndarray
    S: np.ndarray
    n: int
    seed: object
    aux: dict | None = None

    def __post_init__(self):
        if self.X.shape[0] != self.n + 1 or self.S.shape[0] != self.n + 1:
            raise ValueError("X and S must have n + 1 entries")


def _cum_rows(family: KernelFamily) -> list:
    tables = []
    for P in family.kernels:
        cum = np.cumsum(P.rows, axis=1)
        cum[:, -1] = 1.0  # pin against roundoff so inverse CDF always lands
        tables.append([tuple(row) for row in cum])
    return tables


def run_adaptive_chain(
    family: KernelFamily, scheme, x0: int, s0: int, n: int, seed
) -> Trajectory:
    """Simulate ``X_{k+1} ~ P_{S_k}(X_k, .)`` with the scheme updating ``S``.

    Transitions use inverse-CDF sampling over the kernel row.  Per step the
    transition uniform is drawn first, then the scheme's own draws, from
    the chain's single counter-based stream, so runs are bit-reproducible
    given the seed.  Schemes exposing ``aux_record()`` contribute per-step
    auxiliary series (activation uniforms, realized rate signals) to the
    trajectory.

    Raises
    ------
    SchemeEscape
        If the scheme produces an index outside the family.
    """
    if not 0 <= x0 < family.n_states:
        raise ValueError(f"x0={x0} outside state space")
    if not 0 <= s0 < family.size:
        raise ValueError(f"s0={s0} outside family")
    rng = chain_generator(seed)
    X = np.empty(n + 1, dtype=np.int64)
    S = np.empty(n + 1, dtype=np.int64)
    X[0] = x0
    S[0] = scheme.start(s0, rng)
    if not 0 <= S[0] < family.size:
        raise SchemeEscape(f"scheme start index {S[0]} outside family")
    cums = _cum_rows(family)
    n_states = family.n_states
    x = int(X[0])
    s = int(S[0])
    for k in range(1, n + 1):
        u = rng.random()
        x_new = min(bisect_right(cums[s][x], u), n_states - 1)
        s_new = int(scheme.step(k, x, x_new, s, rng))
        if not 0 <= s_new < family.size:
            raise SchemeEscape(f"scheme produced index {s_new} outside family at step {k}")
        X[k] = x_new
        S[k] = s_new
        x, s = x_new, s_new
    aux = None
    if hasattr(scheme, "aux_record"):
        aux = {key: np.asarray(val) for key, val in scheme.aux_record().items()}
    return Trajectory(X=X, S=S, n=n, seed=seed, aux=aux)


# ---------------------------------------------------------------------------
# exact decomposition


class SolutionTable:
    """Poisson solutions and their one-step expectations per family index."""

    def __init__(self, family: KernelFamily, phi: TestFunction, solver=None):
        self.family = family
        self.phi = phi
        self.solver = solver if solver is not None else solve_poisson_exact
        self._g: dict[int, np.ndarray] = {}
        self._Pg: dict[int, np.ndarray] = {}
        self._Pg2: dict[int, np.ndarray] = {}

    def ensure(self, indices) -> None:
        for s in np.unique(np.asarray(indices)):
            s = int(s)
            if s in self._g:
                continue
            if not 0 <= s < self.family.size:
                raise MissingSolution(f"index {s} outside family")
            P = self.family.kernel(s)
            sol = self.solver(P, self.family.pi, self.phi)
            self._g[s] = sol.g
            self._Pg[s] = P.rows @ sol.g
            self._Pg2[s] = P.rows @ (sol.g**2)

    def _gather(self, table: dict, S: np.ndarray, X: np.ndarray) -> np.ndarray:
        out = np.empty(S.shape[0])
        for s in np.unique(S):
            mask = S == s
            out[mask] = table[int(s)][X[mask]]
        return out

    def g_at(self, S, X) -> np.ndarray:
        return self._gather(self._g, np.asarray(S), np.asarray(X))

    def Pg_at(self, S, X) -> np.ndarray:
        return self._gather(self._Pg, np.asarray(S), np.asarray(X))

    def Pg2_at(self, S, X) -> np.ndarray:
        return self._gather(self._Pg2, np.asarray(S), np.asarray(X))

    def g(self, s: int) -> np.ndarray:
        self.ensure([s])
        return self._g[int(s)]

    def Pg(self, s: int) -> np.ndarray:
        self.ensure([s])
        return self._Pg[int(s)]


@dataclass(frozen=True, eq=False)
class DecompositionLedger:
    """Per-step terms of the exact decomposition along one trajectory.

    ``M + A + R`` equals ``centered_sums`` (the centered partial sums of
    the observable) up to floating-point accumulation; ``R`` telescopes to
    the two boundary terms; ``D`` holds the exact worst-case row total
    variation between consecutive kernels; ``cond_var`` the exact one-step
    conditional variance of the martingale difference.
    """

    Delta: np.ndarray
    M: np.ndarray
    A: np.ndarray
    R: np.ndarray
    D: np.ndarray
    cond_var: np.ndarray
    centered_sums: np.ndarray
    solutions: SolutionTable = field(repr=False)

    def identity_residuals(self) -> np.ndarray:
        """Per-prefix gap ``|M_k + A_k + R_k - centered_sums_k|``."""
        return np.abs(self.M + self.A + self.R - self.centered_sums)

    def telescope_residuals(self, traj: Trajectory) -> np.ndarray:
        """Per-prefix gap between ``R_k`` and its closed two-term form."""
        tab = self.solutions
        first = tab.Pg_at(traj.S[:1], traj.X[:1])[0]
        closed = first - tab.Pg_at(traj.S[1:], traj.X[1:])
        return np.abs(self.R - closed)

    def summary(self) -> dict:
        """Endpoint diagnostics at both normalizations.

        The ``/n`` scalings matter for laws of large numbers, the
        ``/sqrt(n)`` scalings for the distributional limit, so both are
        reported."""
        n = self.M.shape[0]
        root = float(np.sqrt(n))
        out = {"n": n, "max_identity_residual": float(self.identity_residuals().max())}
        for name, series in (("M", self.M), ("A", self.A), ("R", self.R)):
            out[name] = float(series[-1])
            out[f"{name}_over_n"] = float(series[-1] / n)
            out[f"{name}_over_sqrt_n"] = float(series[-1] / root)
        return out


def decompose(
    traj: Trajectory, family: KernelFamily, phi: TestFunction, oracle=None
) -> DecompositionLedger:
    """Compute every term of the decomposition exactly along a trajectory.

    ``oracle`` is the Poisson solver used for the per-index solutions
    (exact solve by default); solutions are cached per distinct index.
    """
    table = SolutionTable(family, phi, solver=oracle)
    table.ensure(traj.S)
    S_prev, S_next = traj.S[:-1], traj.S[1:]
    X_prev, X_next = traj.X[:-1], traj.X[1:]

    delta = table.g_at(S_prev, X_next) - table.Pg_at(S_prev, X_prev)
    a_terms = table.g_at(S_next, X_next) - table.g_at(S_prev, X_next)
    r_terms = table.Pg_at(S_prev, X_prev) - table.Pg_at(S_next, X_next)
    cond_var = table.Pg2_at(S_prev, X_prev) - table.Pg_at(S_prev, X_prev) ** 2

    # exact kernel-change magnitudes; zero whenever the index is unchanged
    D = np.zeros(traj.n)
    changed = S_next != S_prev
    if np.any(changed):
        pair_cache: dict[tuple[int, int], float] = {}
        for k in np.nonzero(changed)[0]:
            key = (int(S_prev[k]), int(S_next[k]))
            if key not in pair_cache:
                pair_cache[key] = max_tv_between_kernels(
                    family.kernel(key[1]), family.kernel(key[0])
                )
            D[k] = pair_cache[key]

    centered = np.cumsum(phi.values[X_next] - phi.mean_under_pi)
    return DecompositionLedger(
        Delta=delta,
        M=np.cumsum(delta),
        A=np.cumsum(a_terms),
        R=np.cumsum(r_terms),
        D=D,
        cond_var=cond_var,
        centered_sums=centered,
        solutions=table,
    )


def martingale_check(
    traj: Trajectory, ledger: DecompositionLedger, family: KernelFamily, oracle=None
) -> dict:
    """Verify the martingale structure of the differences exactly.

    Recomputes the conditional mean and conditional second moment of each
    difference by direct row sums over the driving kernel and compares the
    second moment against the ledger's conditional-variance column.
    Returns the worst absolute deviations.
    """
    table = ledger.solutions
    S_prev = traj.S[:-1]
    X_prev, X_next = traj.X[:-1], traj.X[1:]
    cond_mean = np.empty(traj.n)
    cond_var_direct = np.empty(traj.n)
    for s in np.unique(S_prev):
        s = int(s)
        mask = S_prev == s
        rows = family.kernel(s).rows[X_prev[mask]]
        g = table.g(s)
        Pg_x = table.Pg(s)[X_prev[mask]]
        cond_mean[mask] = rows @ g - Pg_x
        cond_var_direct[mask] = rows @ (g**2) - 2.0 * Pg_x * (rows @ g) + Pg_x**2
    return {
        "max_abs_cond_mean": float(np.abs(cond_mean).max()),
        "max_abs_cond_var_gap": float(np.abs(cond_var_direct - ledger.cond_var).max()),
        "max_abs_delta": float(np.abs(ledger.Delta).max()),
    }


# ---------------------------------------------------------------------------
# vectorized ensemble over deterministic index schedules
#
# Column r of the uniform matrix is the first n draws of the stream for
# seed material r, so a single chain run with the same seed and schedule
# visits exactly the same states.


def _cum_tables(family: KernelFamily) -> list:
    tables = []
    for P in family.kernels:
        cum = np.cumsum(P.rows, axis=1)
        cum[:, -1] = 1.0
        tables.append(cum)
    return tables


def ensemble_schedule_run(
    family: KernelFamily,
    indices: np.ndarray,
    phi: TestFunction,
    n: int,
    seed_seqs: Sequence,
    x0: int,
    record_prefixes: Sequence[int] | None = None,
    a_terms: bool = False,
    solutions: SolutionTable | None = None,
):
    """Advance many replications in lockstep under one index schedule.

    Returns per-replication sums ``sum_{k<=n} phi(X_k)``, optionally the
    running sums recorded at ``record_prefixes`` (an array of shape
    ``(len(prefixes), R)``), and optionally the per-replication adaptation
    sums ``A_n`` (needs ``solutions``).
    """
    R = len(seed_seqs)
    U = np.empty((n, R))
    for i, ss in enumerate(seed_seqs):
        U[:, i] = chain_generator(ss).random(n)
    cums = _cum_tables(family)
    states = np.full(R, x0, dtype=np.int64)
    phi_vals = phi.values
    phi_sums = np.zeros(R)
    a_sums = np.zeros(R) if a_terms else None
    prefixes = list(record_prefixes) if record_prefixes is not None else []
    recorded = np.empty((len(prefixes), R)) if prefixes else None
    next_record = 0
    for k in range(1, n + 1):
        s_prev = int(indices[k - 1])
        rows = cums[s_prev][states]
        states = (U[k - 1][:, None] < rows).argmax(axis=1)
        phi_sums += phi_vals[states]
        if a_terms:
            s_new = int(indices[k])
            if s_new != s_prev:
                a_sums += (solutions.g(s_new) - solutions.g(s_prev))[states]
        if prefixes and next_record < len(prefixes) and k == prefixes[next_record]:
            recorded[next_record] = phi_sums
            next_record += 1
    return phi_sums, recorded, a_sums, states


def simulate_schedule_single(
    family: KernelFamily, indices: np.ndarray, x0: int, n: int, seed
) -> np.ndarray:
    """Single-chain fast path for a fixed index schedule; returns ``X``."""
    rng = chain_generator(seed)
    u = rng.random(n)
    cums = _cum_rows(family)
    n_states = family.n_states
    X = np.empty(n + 1, dtype=np.int64)
    X[0] = x0
    x = x0
    for k in range(1, n + 1):
        x = min(bisect_right(cums[int(indices[k - 1])][x], u[k - 1]), n_states - 1)
        X[k] = x
    return X


# ---------------------------------------------------------------------------
# studies


def lln_study(
    family: KernelFamily,
    scheme: ScheduleScheme,
    phi: TestFunction,
    n_grid: Sequence[int],
    seeds: Sequence[int],
    x0: int = 0,
) -> dict:
    """Ergodic-average error over a grid of run lengths.

    For every ``n`` in the grid and every seed, records
    ``|n^-1 sum phi(X_k) - pi(phi)|``; reports the per-``n`` median over
    seeds and the log-log slope of the medians.  Restricted to exogenous
    (fixed-index-sequence) schemes so replications can run in lockstep.
    """
    n_grid = sorted({int(n) for n in n_grid})
    n_max = n_grid[-1]
    indices = scheme.index_array(n_max)
    pi_phi = phi.mean_under_pi
    seed_seqs = [np.random.SeedSequence(s) for s in seeds]
    _, recorded, _, _ = ensemble_schedule_run(
        family, indices, phi, n_max, seed_seqs, x0, record_prefixes=n_grid
    )
    rows = []
    medians = []
    for i, n in enumerate(n_grid):
        errors = np.abs(recorded[i] / n - pi_phi)
        for seed, err in zip(seeds, errors):
            rows.append({"n": n, "seed": int(seed), "error": float(err)})
        medians.append(float(np.median(errors)))
    logs_n = np.log10(np.asarray(n_grid, dtype=np.float64))
    safe = np.asarray([max(m, 1e-300) for m in medians])
    slope = float(np.polyfit(logs_n, np.log10(safe), 1)[0]) if len(n_grid) > 1 else float("nan")
    return {"rows": rows, "n_grid": n_grid, "medians": medians, "slope": slope}


def clt_study(
    family: KernelFamily,
    scheme: ScheduleScheme,
    phi: TestFunction,
    n: int,
    replications: int,
    seeds: Sequence[int],
    x0: int = 0,
    limit_index: int | None = None,
) -> dict:
    """Distributional check of ``sqrt(n) (avg - pi(phi))`` against the
    asymptotic variance at the scheme's limiting kernel.

    Requires a scheme that settles on a fixed index (an exogenous schedule
    whose index stops changing); ``limit_index`` defaults to the schedule's
    final index.  Reports the empirical variance across replications, the
    oracle variance, their ratio, and a Kolmogorov-Smirnov normality
    summary.

    Raises
    ------
    DegenerateVariance
        If the oracle variance is zero but the replicates fluctuate.
    """
    indices = scheme.index_array(n)
    if limit_index is None:
        limit_index = int(indices[-1])
    sigma2 = clt_variance(family.kernel(limit_index), family.pi, phi)
    seed_seqs = replication_seed_sequences(seeds, replications)
    phi_sums, _, _, _ = ensemble_schedule_run(family, indices, phi, n, seed_seqs, x0)
    scaled = np.sqrt(n) * (phi_sums / n - phi.mean_under_pi)
    empirical = float(scaled.var(ddof=1)) if replications > 1 else 0.0
    if sigma2 == 0.0:
        if empirical > 1e-12:
            raise DegenerateVariance(
                f"oracle variance 0 but empirical variance {empirical:.3e}"
            )
        ks_stat, ks_p = 0.0, 1.0
    else:
        ks_stat, ks_p = sp_stats.kstest(scaled / np.sqrt(sigma2), "norm")
    return {
        "replicates": scaled,
        "empirical_var": empirical,
        "sigma2_oracle": float(sigma2),
        "ratio": float(empirical / sigma2) if sigma2 > 0 else float("nan"),
        "ks_stat": float(ks_stat),
        "ks_pvalue": float(ks_p),
        "n": int(n),
        "replications": int(replications),
        "limit_index": int(limit_index),
    }


def an_bound_check(
    schedule: Sequence[int],
    family: KernelFamily,
    phi: TestFunction,
    n: int,
    replications: int,
    seeds: Sequence[int],
    x0: int = 0,
) -> dict:
    """Monte Carlo check of the adaptation-term bound under one-step
    contraction.

    For a fixed index sequence over kernels whose contraction coefficient
    ``beta`` is below one, the scaled second moment ``E[A_n^2] / n`` is at
    most ``(C')^2 [1 + 2 beta / (1 - beta)]`` with
    ``C' = 2 (1-beta)^{-1} osc(phi)``.  The estimate must not exceed the
    bound by more than one standard error.

    Raises
    ------
    DobrushinViolation
        If any kernel in the schedule has contraction coefficient 1.
    """
    indices = np.asarray(schedule, dtype=np.int64)
    if indices.shape[0] != n + 1:
        raise ValueError("schedule must provide indices for steps 0..n")
    used = np.unique(indices)
    beta = max(dobrushin_coefficient(family.kernel(int(s))) for s in used)
    if beta >= 1.0:
        raise DobrushinViolation("a scheduled kernel has contraction coefficient 1")
    c_prime = 2.0 / (1.0 - beta) * phi.osc
    bound = c_prime**2 * (1.0 + 2.0 * beta / (1.0 - beta))

    table = SolutionTable(family, phi)
    table.ensure(used)
    seed_seqs = replication_seed_sequences(seeds, replications)
    _, _, a_sums, _ = ensemble_schedule_run(
        family, indices, phi, n, seed_seqs, x0, a_terms=True, solutions=table
    )
    sq = a_sums**2 / n
    estimate = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(replications)) if replications > 1 else 0.0
    return {
        "estimate": estimate,
        "se": se,
        "bound": float(bound),
        "beta": float(beta),
        "c_prime": float(c_prime),
        "passed": bool(estimate <= bound + se),
        "n": int(n),
        "replications": int(replications),
    }


# ---------------------------------------------------------------------------
# file formats


def write_ledger_csv(path, traj: Trajectory, ledger: DecompositionLedger) -> None:
    """Export the per-step ledger as CSV with header
    ``k,x,s_index,delta,M,A,R,D,cond_var``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "x", "s_index", "delta", "M", "A", "R", "D", "cond_var"])
        for k in range(1, traj.n + 1):
            i = k - 1
            writer.writerow(
                [
                    k,
                    int(traj.X[k]),
                    int(traj.S[k]),
                    repr(float(ledger.Delta[i])),
                    repr(float(ledger.M[i])),
                    repr(float(ledger.A[i])),
                    repr(float(ledger.R[i])),
                    repr(float(ledger.D[i])),
                    repr(float(ledger.cond_var[i])),
                ]
            )
