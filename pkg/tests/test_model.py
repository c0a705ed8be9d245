import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lqmfg.model import (GameModel, ModelError, control_weight, lambda1_inf_scalar,
                         scalar_hat_params, validate)


def scalar(A=0.2, G=1.0, Q=1.0, Gamma=1.2, **kw):
    return GameModel(A=A, B=1, Q=Q, R=1, G=G, Gamma=Gamma, T=kw.pop("T", 3.0), **kw)


class TestValidate:
    def test_zero_cost_identity_weight_is_valid(self):
        m = GameModel(A=np.eye(2), B=np.eye(2), Q=np.zeros((2, 2)), R=np.eye(2), T=1)
        assert validate(m) == []

    def test_indefinite_R_is_reported(self):
        m = GameModel(A=np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.diag([1.0, -0.1]), T=1)
        v = validate(m)
        assert [x.field for x in v] == ["R"]
        assert "R not positive definite" in str(v[0])

    def test_example_data_is_valid(self, ex2):
        assert validate(ex2) == []

    def test_indefinite_Q_and_Qf(self):
        m = GameModel(A=1, B=1, Q=-1, R=1, Qf=-2, T=1)
        assert {x.field for x in validate(m)} == {"Q", "Qf"}

    def test_zero_B_warns(self):
        with pytest.warns(UserWarning):
            validate(GameModel(A=1, B=0, Q=1, R=1, T=1))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ModelError):
            GameModel(A=np.eye(2), B=np.ones((3, 1)), Q=np.eye(2), R=1, T=1)

    def test_flat_matrix_rejected(self):
        with pytest.raises(ModelError):
            GameModel(A=[1.0, 2.0], B=1, Q=1, R=1, T=1)

    @pytest.mark.parametrize("T", [0.0, -1.0, math.inf])
    def test_bad_horizon(self, T):
        with pytest.raises(ModelError):
            GameModel(A=1, B=1, Q=1, R=1, T=T)

    def test_asymmetric_Q_rejected_and_small_asymmetry_symmetrized(self):
        with pytest.raises(ModelError):
            GameModel(A=np.eye(2), B=np.eye(2), Q=[[1, 0.1], [0, 1]], R=np.eye(2), T=1)
        m = GameModel(A=np.eye(2), B=np.eye(2), Q=[[1, 1e-12], [0, 1]], R=np.eye(2), T=1)
        assert np.array_equal(m.Q, m.Q.T)

    def test_arrays_are_read_only(self, ex2):
        with pytest.raises(ValueError):
            ex2.A[0, 0] = 5.0


class TestControlWeight:
    def test_identity(self):
        assert control_weight(GameModel(A=1, B=1, Q=1, R=1, T=1)).M[0, 0] == 1.0

    def test_example_five_input(self, ex5):
        assert np.array_equal(control_weight(ex5).M, [[0.0, 0.0], [0.0, 1.0]])

    def test_scaled(self):
        assert control_weight(GameModel(A=1, B=2, Q=1, R=4, T=1)).M[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_singular_R(self):
        m = GameModel(A=np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.zeros((2, 2)), T=1)
        with pytest.raises(ModelError):
            control_weight(m)

    @given(st.floats(0, 2 * math.pi), st.integers(0, 2 ** 31))
    def test_invariant_under_orthogonal_input_change(self, angle, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(3, 2))
        L = rng.normal(size=(2, 2))
        R = L @ L.T + np.eye(2)
        U = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        m1 = GameModel(A=np.eye(3), B=B, Q=np.eye(3), R=R, T=1)
        m2 = GameModel(A=np.eye(3), B=B @ U, Q=np.eye(3), R=U.T @ R @ U, T=1)
        assert np.allclose(control_weight(m1).M, control_weight(m2).M, atol=1e-12, rtol=0)


class TestScalarHat:
    def test_example_four_values(self, ex4):
        p = scalar_hat_params(ex4)
        assert p.a_hat == pytest.approx(-0.046447, rel=1e-4)
        assert p.Q_hat == pytest.approx(4.906209e-4, rel=1e-4)
        # the displayed 0.001667 is rounded; the exact value is 1/600
        assert p.Delta_hat == pytest.approx(0.001667, rel=1e-3)
        assert p.Delta_hat == pytest.approx(1 / 600, rel=1e-12)
        assert p.c1 == pytest.approx(0.005622, rel=1e-4)
        assert p.c2 == pytest.approx(0.087271, rel=1e-4)

    @pytest.mark.parametrize("Gamma, expected", [(0.0, (1.0, 0.0, 1.0)), (1.0, (1.0, 1.0, 0.0))])
    def test_hand_substitution(self, Gamma, expected):
        # A = G = 0, Q = 1: a_hat = 1, Q_hat = Gamma, Delta_hat = 1 - Gamma
        p = scalar_hat_params(GameModel(A=0, B=1, Q=1, R=1, G=0, Gamma=Gamma, T=1))
        assert (p.a_hat, p.Q_hat, p.Delta_hat) == expected

    def test_requires_unit_control_weight(self):
        with pytest.raises(ModelError):
            scalar_hat_params(GameModel(A=0, B=2, Q=1, R=1, T=1))
        with pytest.raises(ModelError):
            scalar_hat_params(GameModel(A=np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.eye(2), T=1))

    def test_lambda1_inf_scalar(self):
        assert lambda1_inf_scalar(0.2, 1.0) == pytest.approx(0.2 + math.sqrt(1.04), abs=1e-15)

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 3), st.floats(-2, 2))
    def test_two_discriminant_formulas_agree(self, A, G, Q, Gamma):
        p = scalar_hat_params(scalar(A=A, G=G, Q=Q, Gamma=Gamma))
        direct = p.a_hat ** 2 - p.Q_hat
        assert abs(direct - p.Delta_hat) <= 1e-10 * max(1.0, abs(p.a_hat ** 2), abs(p.Q_hat))

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 3), st.floats(-2, 2))
    def test_c1_c2_product(self, A, G, Q, Gamma):
        p = scalar_hat_params(scalar(A=A, G=G, Q=Q, Gamma=Gamma))
        if p.c1 is not None and p.Delta_hat > 0:
            assert p.c1 * p.c2 == pytest.approx(p.Q_hat, rel=1e-9, abs=1e-12)


def test_dict_round_trip(ex5):
    assert GameModel.from_dict(ex5.to_dict()) == ex5


def test_from_dict_rejects_unknown_and_missing():
    with pytest.raises(ModelError, match="unknown"):
        GameModel.from_dict({"A": 1, "B": 1, "Q": 1, "R": 1, "T": 1, "Gama": 1})
    with pytest.raises(ModelError, match="missing"):
        GameModel.from_dict({"A": 1, "B": 1, "Q": 1, "T": 1})
