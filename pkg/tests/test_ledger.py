import numpy as np
import pytest

from amcmc.adaptation import log_increment_schedule
from amcmc.errors import DobrushinViolation, SchemeEscape
from amcmc.families import (
    cyclic_pair,
    iid_family,
    mixture_family,
    random_metropolis_family,
    smoothed_family,
)
from amcmc.kernels import Distribution, fit_ergodicity_constants, max_tv_between_kernels
from amcmc.ledger import (
    ConstantScheme,
    MeanTrackingScheme,
    RareCycleScheme,
    RateTargetScheme,
    ScheduleScheme,
    an_bound_check,
    chain_generator,
    clt_study,
    converging_index_schedule,
    decompose,
    ensemble_schedule_run,
    lln_study,
    martingale_check,
    run_adaptive_chain,
    simulate_schedule_single,
    write_ledger_csv,
)
from amcmc.poisson import TestFunction, clt_variance

PI3 = Distribution([0.5, 0.25, 0.25])


def grid_family(states=5, members=8, seed=19):
    """Well-mixing parameter-grid family used across the scheme tests."""
    pi = Distribution(np.arange(1, states + 1, dtype=float) / (states * (states + 1) / 2))
    pair = random_metropolis_family(pi, 2, seed=seed)
    return mixture_family(pair.kernels[0], pair.kernels[1], pi, members)


def scheme_zoo(family):
    stat = np.zeros(family.n_states)
    stat[0] = 1.0
    return {
        "constant": ConstantScheme(),
        "mean-tracking": MeanTrackingScheme(family, stat),
        "rate-target": RateTargetScheme(family, target=0.234, c=1.0),
        "rare-cycle": RareCycleScheme(family, lambda: log_increment_schedule(2.0, 0.1)),
    }


class TestRunAdaptiveChain:
    def test_zero_steps(self):
        fam = cyclic_pair()
        traj = run_adaptive_chain(fam, ConstantScheme(), x0=2, s0=1, n=0, seed=5)
        assert traj.X.tolist() == [2]
        assert traj.S.tolist() == [1]

    def test_bit_reproducible(self):
        fam = grid_family()
        schemes = scheme_zoo(fam)
        a = run_adaptive_chain(fam, scheme_zoo(fam)["rate-target"], 0, 0, 500, seed=11)
        b = run_adaptive_chain(fam, schemes["rate-target"], 0, 0, 500, seed=11)
        c = run_adaptive_chain(fam, scheme_zoo(fam)["rate-target"], 0, 0, 500, seed=12)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.S, b.S)
        assert not np.array_equal(a.X, c.X)

    def test_constant_scheme_occupation_converges(self):
        fam = cyclic_pair()
        phi = TestFunction.indicator(0, fam.pi)
        sigma2 = clt_variance(fam.kernels[0], fam.pi, phi)
        n = 100_000
        traj = run_adaptive_chain(fam, ConstantScheme(), x0=0, s0=0, n=n, seed=23)
        avg = phi.values[traj.X[1:]].mean()
        assert abs(avg - 0.5) <= 3.0 * np.sqrt(sigma2 / n)

    def test_alternation_pins_the_orbit(self):
        fam = cyclic_pair()
        traj = run_adaptive_chain(
            fam, ScheduleScheme(lambda k: k % 2), x0=1, s0=0, n=20, seed=0
        )
        assert traj.X[:5].tolist() == [1, 2, 1, 2, 1]

    def test_scheme_escape(self):
        fam = cyclic_pair()

        class Escaper:
            def start(self, s0, rng):
                return s0

            def step(self, k, x_prev, x_new, s_prev, rng):
                return 99

        with pytest.raises(SchemeEscape):
            run_adaptive_chain(fam, Escaper(), x0=0, s0=0, n=3, seed=1)


class TestDecompose:
    def test_constant_scheme_has_zero_adaptation_term(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        traj = run_adaptive_chain(fam, ConstantScheme(), 0, 3, 2000, seed=29)
        ledger = decompose(traj, fam, phi)
        assert np.abs(ledger.A).max() == 0.0
        assert np.all(ledger.D == 0.0)
        assert ledger.identity_residuals().max() <= 1e-9 * traj.n

    def test_single_step_identity_exact(self):
        fam = grid_family()
        phi = TestFunction.from_values(np.linspace(-1, 2, fam.n_states), fam.pi)
        for scheme in scheme_zoo(fam).values():
            traj = run_adaptive_chain(fam, scheme, 0, 0, 1, seed=31)
            ledger = decompose(traj, fam, phi)
            lhs = ledger.M[0] + ledger.A[0] + ledger.R[0]
            rhs = phi.values[traj.X[1]] - phi.mean_under_pi
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_identity_and_telescoping_for_all_schemes(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        n = 10_000
        for name, scheme in scheme_zoo(fam).items():
            traj = run_adaptive_chain(fam, scheme, 0, 0, n, seed=37)
            ledger = decompose(traj, fam, phi)
            prefixes = np.arange(1, n + 1)
            assert np.all(ledger.identity_residuals() <= 1e-9 * prefixes), name
            assert ledger.telescope_residuals(traj).max() <= 1e-10, name

    def test_change_magnitudes_match_exact_tv(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        traj = run_adaptive_chain(fam, scheme_zoo(fam)["rare-cycle"], 0, 0, 500, seed=41)
        ledger = decompose(traj, fam, phi)
        for k in range(traj.n):
            s_prev, s_next = int(traj.S[k]), int(traj.S[k + 1])
            if s_prev == s_next:
                assert ledger.D[k] == 0.0
            else:
                expected = max_tv_between_kernels(fam.kernel(s_next), fam.kernel(s_prev))
                assert ledger.D[k] == expected


class TestMartingaleCheck:
    def test_conditional_means_vanish(self):
        fam = grid_family()
        phi = TestFunction.indicator(1, fam.pi)
        for scheme in scheme_zoo(fam).values():
            traj = run_adaptive_chain(fam, scheme, 0, 0, 2000, seed=43)
            ledger = decompose(traj, fam, phi)
            report = martingale_check(traj, ledger, fam)
            assert report["max_abs_cond_mean"] <= 1e-10
            assert report["max_abs_cond_var_gap"] <= 1e-10

    def test_iid_kernel_conditional_variance_is_static_variance(self):
        fam = iid_family(PI3)
        phi = TestFunction.indicator(0, fam.pi)
        traj = run_adaptive_chain(fam, ConstantScheme(), 0, 0, 200, seed=47)
        ledger = decompose(traj, fam, phi)
        assert np.abs(ledger.cond_var - 0.25).max() <= 1e-12

    def test_differences_bounded_by_certificate(self):
        fam = grid_family()
        consts = fit_ergodicity_constants(list(fam.kernels), fam.pi, horizon=24)
        phi = TestFunction.indicator(0, fam.pi)
        traj = run_adaptive_chain(fam, scheme_zoo(fam)["mean-tracking"], 0, 0, 5000, seed=53)
        ledger = decompose(traj, fam, phi)
        bound = 2.0 * consts.C / (1.0 - consts.rho) * phi.osc
        assert np.abs(ledger.Delta).max() <= bound + 1e-9


class TestEnsembleContract:
    def test_lockstep_matches_single_chain_bitwise(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        n = 300
        indices = (np.arange(n + 1) // 7) % fam.size
        seeds = [101, 202, 303]
        seed_seqs = [np.random.SeedSequence(s) for s in seeds]
        sums, _, _, last = ensemble_schedule_run(fam, indices, phi, n, seed_seqs, x0=2)
        for i, s in enumerate(seeds):
            X = simulate_schedule_single(fam, indices, x0=2, n=n, seed=s)
            assert phi.values[X[1:]].sum() == sums[i]
            assert X[-1] == last[i]

    def test_single_chain_matches_driver(self):
        fam = grid_family()
        n = 200
        indices = np.zeros(n + 1, dtype=np.int64)
        X_fast = simulate_schedule_single(fam, indices, x0=1, n=n, seed=77)
        traj = run_adaptive_chain(fam, ConstantScheme(), x0=1, s0=0, n=n, seed=77)
        assert np.array_equal(X_fast, traj.X)


class TestLlnStudy:
    def test_iid_kernel_root_n_decay(self):
        fam = iid_family(PI3)
        phi = TestFunction.indicator(0, fam.pi)
        study = lln_study(
            fam,
            ScheduleScheme(lambda k: 0),
            phi,
            n_grid=[1_000, 10_000, 100_000],
            seeds=list(range(32)),
        )
        assert -0.6 <= study["slope"] <= -0.4
        assert study["medians"][-1] < study["medians"][0]

    def test_counterexample_error_pinned(self):
        fam = cyclic_pair()
        phi = TestFunction.indicator(0, fam.pi)
        study = lln_study(
            fam,
            ScheduleScheme(lambda k: k % 2),
            phi,
            n_grid=[100, 1_000, 10_000],
            seeds=[1, 2, 3, 4],
            x0=1,
        )
        assert all(m == 0.5 for m in study["medians"])

    def test_rare_adaptation_error_decreases(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        sched = log_increment_schedule(2.0, 0.1)
        taus = np.asarray(sched.adaptation_times(100_000))
        indices = np.zeros(100_001, dtype=np.int64)
        hits = np.zeros(100_001, dtype=np.int64)
        hits[taus] = 1
        indices = np.cumsum(hits) % fam.size
        study = lln_study(
            fam,
            ScheduleScheme(indices),
            phi,
            n_grid=[1_000, 10_000, 100_000],
            seeds=list(range(8)),
        )
        assert study["medians"][-1] < study["medians"][0]


class TestCltStudy:
    def test_constant_phi_degenerates_cleanly(self):
        fam = iid_family(PI3)
        phi = TestFunction.from_values([2.0, 2.0, 2.0], fam.pi)
        study = clt_study(fam, ScheduleScheme(lambda k: 0), phi, 500, 50, seeds=[3])
        assert study["sigma2_oracle"] == 0.0
        assert study["empirical_var"] == 0.0

    def test_iid_kernel_variance_ratio(self):
        fam = iid_family(PI3)
        phi = TestFunction.indicator(0, fam.pi)
        study = clt_study(fam, ScheduleScheme(lambda k: 0), phi, 2_000, 400, seeds=[5])
        assert study["sigma2_oracle"] == pytest.approx(0.25, abs=1e-12)
        assert 0.85 <= study["ratio"] <= 1.15
        assert study["ks_pvalue"] > 0.01

    def test_converging_scheme_matches_limit_variance(self):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        scheme, limit = converging_index_schedule(fam, s0=0, n=4_000)
        assert limit == fam.size - 1  # drift pushes to the top of the grid
        study = clt_study(fam, scheme, phi, 4_000, 400, seeds=[7], limit_index=limit)
        assert study["sigma2_oracle"] == pytest.approx(
            clt_variance(fam.kernel(limit), fam.pi, phi), abs=1e-12
        )
        assert 0.85 <= study["ratio"] <= 1.15


class TestAnBoundCheck:
    def test_constant_schedule_zero_term(self):
        fam = smoothed_family(cyclic_pair(), 0.2)
        phi = TestFunction.indicator(0, fam.pi)
        report = an_bound_check(np.zeros(501, dtype=int), fam, phi, 500, 50, seeds=[11])
        assert report["estimate"] == 0.0
        assert report["passed"]

    def test_alternating_positive_kernels(self):
        pi = Distribution([0.4, 0.3, 0.2, 0.1])
        fam = random_metropolis_family(pi, 2, seed=13)
        phi = TestFunction.indicator(0, fam.pi)
        schedule = np.arange(1_001) % 2
        report = an_bound_check(schedule, fam, phi, 1_000, 200, seeds=[13])
        assert report["beta"] < 1.0
        assert report["passed"]

    def test_smoothed_cyclic_restores_contraction(self):
        fam = smoothed_family(cyclic_pair(), 0.2)
        phi = TestFunction.indicator(0, fam.pi)
        schedule = np.arange(1_001) % 2
        report = an_bound_check(schedule, fam, phi, 1_000, 200, seeds=[17])
        assert report["beta"] < 1.0
        assert report["passed"]

    def test_raw_cyclic_pair_rejected(self):
        fam = cyclic_pair()
        phi = TestFunction.indicator(0, fam.pi)
        with pytest.raises(DobrushinViolation):
            an_bound_check(np.arange(101) % 2, fam, phi, 100, 10, seeds=[19])


class TestLedgerCsv:
    def test_header_and_rows(self, tmp_path):
        fam = grid_family()
        phi = TestFunction.indicator(0, fam.pi)
        traj = run_adaptive_chain(fam, scheme_zoo(fam)["mean-tracking"], 0, 0, 50, seed=59)
        ledger = decompose(traj, fam, phi)
        path = tmp_path / "ledger.csv"
        write_ledger_csv(path, traj, ledger)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "k,x,s_index,delta,M,A,R,D,cond_var"
        assert len(lines) == 51


def test_chain_generator_accepts_int_and_seedsequence():
    a = chain_generator(99).random(4)
    b = chain_generator(np.random.SeedSequence(99)).random(4)
    assert np.array_equal(a, b)


def test_ledger_summary_reports_both_scalings():
    fam = grid_family()
    phi = TestFunction.indicator(0, fam.pi)
    traj = run_adaptive_chain(fam, scheme_zoo(fam)["mean-tracking"], 0, 0, 400, seed=67)
    ledger = decompose(traj, fam, phi)
    out = ledger.summary()
    assert out["n"] == 400
    assert out["A_over_n"] == pytest.approx(out["A"] / 400)
    assert out["A_over_sqrt_n"] == pytest.approx(out["A"] / 20.0)
    assert out["max_identity_residual"] <= 1e-9 * 400


def test_rate_target_scheme_records_aux_series():
    fam = grid_family()
    traj = run_adaptive_chain(fam, RateTargetScheme(fam), 0, 0, 100, seed=61)
    assert traj.aux is not None
    assert traj.aux["alpha"].shape == (100,)
    assert set(np.unique(traj.aux["alpha"])) <= {0.0, 1.0}


def test_family_from_builder_materializes_grid():
    from amcmc.families import KernelFamily
    from amcmc.rwm import RwmParameter, build_discrete_rwm, truncated_gaussian_target

    target = truncated_gaussian_target([[-2.0, 2.0]], m=12)
    fam = KernelFamily.from_builder(
        lambda v: build_discrete_rwm(target, RwmParameter.from_scalar(v, 0.05, 5.0)),
        params=[0.4, 0.7, 1.0],
        pi=target.grid_distribution(),
    )
    assert fam.size == 3
    assert fam.params == (0.4, 0.7, 1.0)
    assert fam.nearest_index(0.65) == 1
