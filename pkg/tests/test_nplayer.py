import numpy as np
import pytest

from lqmfg.integrate import DEFAULT_POLICY, TIGHT_POLICY, MatrixPath, TimeGrid
from lqmfg.model import GameModel, ModelError
from lqmfg.nplayer import (ReducedBlocks, assemble_P1, assemble_S1, exchange_matrix,
                           fit_loglog_slope, nash_gains, rate_study, solve_full_oracle,
                           solve_reduced)
from lqmfg.riccati import solve_lambda1, solve_limit


@pytest.fixture(scope="module")
def ex2_offsets(ex2):
    # offsets switched on so the linear and constant parts are exercised too
    return ex2.replace(eta=[1.0], etaf=[1.0], Gammaf=[[0.4]])


def decoupled(T=2.0):
    return GameModel(A=[[0.1, 1], [0, -0.5]], B=np.eye(2), Q=np.eye(2), R=np.eye(2),
                     Qf=[[1.0, 0.2], [0.2, 0.5]], T=T)


def sup_fro(vals):
    return float(np.sqrt(np.sum(vals ** 2, axis=(-2, -1))).max())


class TestOracleEquivalence:
    @pytest.mark.parametrize("N", [2, 3])
    def test_reduced_blocks_reproduce_unstructured_solution(self, ex2_offsets, N):
        full = solve_full_oracle(ex2_offsets, N, TIGHT_POLICY)
        red = solve_reduced(ex2_offsets, N, TIGHT_POLICY)
        t = full.bigP.t
        gapP = max(np.linalg.norm(assemble_P1(red, s) - full.bigP(s)) for s in t)
        gapS = max(np.linalg.norm(assemble_S1(red, s) - full.bigS(s)) for s in t)
        assert gapP <= 1e-8 and gapS <= 1e-8

    def test_exchangeability_of_value_matrices(self, ex2_offsets):
        full = solve_full_oracle(ex2_offsets, 3, TIGHT_POLICY)
        J = exchange_matrix(3, 1, 0, 1)
        P1, P2 = full.P[0].values, full.P[1].values
        assert sup_fro(J.T @ P1 @ J - P2) <= 1e-8

    def test_constant_terms_coincide(self, ex2_offsets):
        full = solve_full_oracle(ex2_offsets, 3, TIGHT_POLICY)
        red = solve_reduced(ex2_offsets, 3, TIGHT_POLICY)
        for k in (1, 2):
            assert sup_fro(full.r[0].values - full.r[k].values) <= 1e-8
        assert abs(full.r[0](0.0)[0, 0] - red.r(0.0)[0, 0]) <= 1e-8

    def test_decoupled_oracle_is_block_diagonal(self):
        m = decoupled()
        full = solve_full_oracle(m, 2)
        l1 = solve_lambda1(m)
        P0 = full.bigP(0.0)
        assert np.allclose(P0[:2, :2], l1(0.0), atol=1e-9)
        assert np.max(np.abs(P0[2:, :])) == 0.0 and np.max(np.abs(P0[:, 2:])) == 0.0

    def test_oracle_population_limit(self, ex2):
        with pytest.raises(ModelError):
            solve_full_oracle(ex2, 5)


class TestReducedStructure:
    def test_other_player_blocks_coincide(self, ex2_offsets):
        for N in (2, 10, 100):
            assert solve_reduced(ex2_offsets, N).pi3_pi4_gap <= 100 * DEFAULT_POLICY.atol

    def test_symmetric_blocks(self):
        m = GameModel(A=[[0.2, 1], [-0.3, 0.1]], B=[[0], [1]], Q=np.eye(2), R=1,
                      G=0.3 * np.eye(2), Gamma=[[0.5, 0.2], [0, 0.4]], Gammaf=0.3 * np.eye(2),
                      Qf=np.eye(2), T=2)
        b = solve_reduced(m, 7)
        for p in (b.pi1, b.pi3, b.pi4):
            assert np.max(np.abs(p.values - np.swapaxes(p.values, 1, 2))) <= 10 * DEFAULT_POLICY.atol

    def test_terminal_values(self, ex2_offsets):
        m, N = ex2_offsets, 6
        b = solve_reduced(m, N)
        I = np.eye(1)
        Gf, Qf, ef = m.Gammaf, m.Qf, m.etaf
        T = m.T
        assert np.allclose(b.pi1(T), (I - Gf.T / N) @ Qf @ (I - Gf / N), atol=1e-15)
        assert np.allclose(b.pi2(T), -(I - Gf.T / N) @ Qf @ Gf / N, atol=1e-15)
        assert np.allclose(b.pi3(T), (Gf.T / N) @ Qf @ (Gf / N), atol=1e-15)
        assert np.allclose(b.pi4(T), b.pi3(T), atol=0)
        assert np.allclose(b.theta1(T)[:, 0], -(I - Gf.T / N) @ Qf @ ef, atol=1e-15)
        assert np.allclose(b.theta2(T)[:, 0], Gf.T @ Qf @ ef / N, atol=1e-15)
        assert b.r(T)[0, 0] == pytest.approx(float(ef @ Qf @ ef), abs=1e-15)

    def test_decoupled_blocks(self):
        m = decoupled()
        b = solve_reduced(m, 5)
        assert sup_fro(b.pi2.values) == 0.0 and sup_fro(b.pi3.values) == 0.0
        l1 = solve_lambda1(m)
        assert np.allclose(b.pi1(np.linspace(0, 2, 9)), l1(np.linspace(0, 2, 9)), atol=1e-9)


def constant_blocks(N, p1, p2, p3, th1=0.0, th2=0.0):
    g = TimeGrid(np.array([0.0, 1.0]))
    c = lambda v: MatrixPath(g, np.full((2, 1, 1), float(v)), np.zeros((2, 1, 1)))
    return ReducedBlocks(N, c(p1), c(p2), c(p3), c(p3), c(th1), c(th2), c(0.0))


class TestAssembly:
    def test_pattern(self):
        P = assemble_P1(constant_blocks(3, 5, 2, 1), 0.5)
        assert np.array_equal(P, [[5, 2, 2], [2, 1, 1], [2, 1, 1]])

    def test_only_own_block(self):
        P = assemble_P1(constant_blocks(4, 3, 0, 0), 0.0)
        assert np.array_equal(P, np.diag([3.0, 0, 0, 0]))

    def test_offset_pattern(self):
        assert np.array_equal(assemble_S1(constant_blocks(3, 0, 0, 0, 4, 7), 0.0)[:, 0], [4, 7, 7])

    def test_exchange_matrix_is_involution(self):
        J = exchange_matrix(4, 2, 1, 3)
        assert np.array_equal(J @ J, np.eye(8))


class TestNashGains:
    def test_zero_blocks_give_zero_gains(self, ex2):
        g = nash_gains(ex2, constant_blocks(3, 0, 0, 0), 0.0)
        assert not np.any(g.K_self) and not np.any(g.K_other) and not np.any(g.offset)

    def test_terminal_gains_without_terminal_coupling(self, ex2):
        b = solve_reduced(ex2, 10)
        g = nash_gains(ex2, b, ex2.T)
        assert np.allclose(g.K_self, -ex2.B.T @ ex2.Qf, atol=1e-15)
        assert not np.any(g.K_other)

    def test_own_gain_approaches_limit_gain(self, ex2):
        l1 = solve_lambda1(ex2)
        err = {N: np.abs(nash_gains(ex2, solve_reduced(ex2, N), 0.0).K_self + ex2.B.T @ l1(0.0)).max()
               for N in (50, 100)}
        assert err[50] <= 1.0 / 50 and err[100] < err[50]


@pytest.fixture(scope="module")
def runs(ex2_offsets):
    lim = solve_limit(ex2_offsets, [1.0])
    return lim, {N: solve_reduced(ex2_offsets, N) for N in (40, 80, 160, 320)}


class TestLimitConvergence:
    def test_offset_rate(self, runs):
        lim, b = runs
        err = {N: abs(b[N].theta1(0.0)[0, 0] - lim.chi1(0.0)[0, 0]) for N in b}
        for N in (40, 80, 160):
            assert 1.6 <= err[N] / err[2 * N] <= 2.4

    def test_richardson_extrapolation_of_scaled_block(self, runs):
        # N^2 pi3(0) = lambda3(0) + a/N + b/N^2 + ...; quadratic fit in 1/N
        lim, b = runs
        Ns = np.array([40, 80, 160])
        vals = [N * N * b[N].pi3(0.0)[0, 0] for N in Ns]
        extrap = np.polyfit(1.0 / Ns, vals, 2)[-1]
        assert extrap == pytest.approx(lim.lambda3(0.0)[0, 0], rel=2e-3)

    def test_rescaled_blocks_stay_bounded(self, runs):
        lim, b = runs
        t = lim.lambda1.t
        ref = float(np.max(np.abs(lim.lambda1(t)) + np.abs(lim.lambda2(t)) + np.abs(lim.lambda3(t))))
        for N, bl in b.items():
            v = np.abs(bl.pi1(t)) + N * np.abs(bl.pi2(t)) + N * N * np.abs(bl.pi3(t))
            assert v.max() <= 1.5 * ref


class TestRateStudy:
    def test_decoupled_errors_vanish(self):
        rep = rate_study(decoupled(), [10, 20])
        assert max(rep.err_pi1) < 1e-8 and max(rep.err_pi2_scaled) == 0.0

    def test_needs_two_sizes(self, ex2):
        with pytest.raises(ValueError):
            rate_study(ex2, [10])

    def test_report_outputs(self, ex2, tmp_path):
        rep = rate_study(ex2, [10, 20])
        rep.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "N,err_pi1,err_pi2_scaled,err_pi3_scaled,err_theta1,err_theta2_scaled"
        assert len(lines) == 3
        assert set(rep.to_dict()["slopes"]) == set(rep._COLUMNS)

    @pytest.mark.slow
    def test_local_rate_of_own_block_tends_to_one(self, ex2):
        # the first-order coefficient is small for this model, so the local
        # slope approaches -1 only for large N
        l1 = solve_lambda1(ex2, TIGHT_POLICY)
        Ns = [320, 640, 1280, 2560, 5120]
        err = []
        for N in Ns:
            b = solve_reduced(ex2, N, TIGHT_POLICY)
            err.append(max(abs(b.pi1(t)[0, 0] - l1(t)[0, 0]) for t in l1.t))
        local = [np.log2(err[k] / err[k + 1]) for k in range(len(Ns) - 1)]
        assert all(local[k + 1] < local[k] for k in range(len(local) - 1))
        assert abs(local[-1] - 1.0) < 0.1
        # doubling N halves the error to within 25% once N is large
        assert 0.375 <= err[-1] / err[-2] <= 0.625


def test_fit_loglog_slope():
    assert fit_loglog_slope([1, 2, 4], [1.0, 0.5, 0.25]) == pytest.approx(-1.0)
    assert np.isnan(fit_loglog_slope([1, 2], [0.0, 0.0]))
