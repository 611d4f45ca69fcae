import math

import numpy as np
import pytest

from daemx.model import (DaeModel, MatrixFunction, ModelError, TimeGrid, evaluate,
                         example_model, exp_sqrt_half, load_model, model_from_dict,
                         polynomial, scalar_form, sine, validate_model)


class TestTimeGrid:
    def test_nodes_equally_spaced(self):
        g = TimeGrid(0.0, 2.0, 2000)
        d = np.diff(g.nodes)
        assert len(g) == 2001
        assert np.all(d > 0)
        np.testing.assert_allclose(d, g.h, rtol=1e-12)
        assert g.nodes[-1] == pytest.approx(2.0, abs=1e-14)

    @pytest.mark.parametrize("args", [(1.0, 1.0, 10), (1.0, 0.0, 10), (0.0, 1.0, 1),
                                      (0.0, 1.0, 2.5), (0.0, math.inf, 10)])
    def test_rejects_bad_grids(self, args):
        with pytest.raises(ModelError):
            TimeGrid(*args)

    def test_locate(self):
        g = TimeGrid(0.0, 1.0, 10)
        k, theta = g.locate(0.35)
        assert k == 3
        assert theta == pytest.approx(0.5)
        assert g.locate(1.0) == (9, pytest.approx(1.0))


class TestEvaluate:
    def test_constant(self):
        C = MatrixFunction.constant([[-1.0, 1.0], [0.0, 0.0]])
        for t in (0.0, 0.3, 7.0):
            np.testing.assert_array_equal(evaluate(C, t), [[-1.0, 1.0], [0.0, 0.0]])

    def test_sampled_midpoint(self):
        g = TimeGrid(0.0, 1.0, 2)
        mf = MatrixFunction.sampled(g, [0.0, 1.0, 2.0])
        assert evaluate(mf, 0.25)[0, 0] == pytest.approx(0.5)
        assert evaluate(mf, 0.75)[0, 0] == pytest.approx(1.5)

    def test_two_node_table_midpoint(self):
        # the smallest valid grid has three nodes; check the {0 -> 0, 1 -> 2} segment
        g = TimeGrid(0.0, 2.0, 2)
        mf = MatrixFunction.sampled(g, [0.0, 2.0, 4.0])
        assert evaluate(mf, 0.5)[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_sampled_reproduces_nodes(self, rng):
        g = TimeGrid(0.0, 3.0, 30)
        vals = rng.normal(size=(31, 2, 3))
        mf = MatrixFunction.sampled(g, vals)
        for k, t in enumerate(g.nodes):
            np.testing.assert_array_equal(mf(t), vals[k])

    def test_sampled_out_of_range(self):
        mf = MatrixFunction.sampled(TimeGrid(0.0, 1.0, 4), np.arange(5.0))
        with pytest.raises(ModelError):
            mf(1.5)

    def test_sampled_length_checked(self):
        with pytest.raises(ModelError):
            MatrixFunction.sampled(TimeGrid(0.0, 1.0, 4), np.arange(4.0))

    def test_exp_sqrt_half(self):
        mf = MatrixFunction.closed_form("exp_sqrt_half")
        assert evaluate(mf, 4.0)[0, 0] == pytest.approx(math.exp(2.0) / 2.0, rel=1e-15)
        assert evaluate(mf, 4.0)[0, 0] == pytest.approx(3.694528, abs=1e-6)

    def test_registry_forms(self):
        assert polynomial([1.0, 2.0, 3.0])(2.0) == pytest.approx(17.0)
        assert sine(2.0, 3.0, 0.5)(0.1) == pytest.approx(2.0 * math.sin(0.8))
        prod = scalar_form({"form": "product", "factors": [{"form": "sin", "omega": 2.0}, 3.0]})
        assert prod(0.2) == pytest.approx(3.0 * math.sin(0.4))
        assert (exp_sqrt_half() * 2.0)(1.0) == pytest.approx(math.e)

    def test_unknown_form(self):
        with pytest.raises(ModelError, match="unknown closed form"):
            scalar_form({"form": "cosh"})


class TestValidate:
    def test_example_is_valid(self):
        assert validate_model(example_model(2.0, 200)) == []

    def test_singular_R(self):
        m = example_model(2.0, 20)
        bad = DaeModel(m.F, m.C, m.H, m.Q,
                       MatrixFunction.from_callable(1, 1, lambda t: 0.0 if t > 1.0 else 1.0),
                       m.grid)
        problems = validate_model(bad)
        assert problems
        assert all(p.startswith("R not positive definite at t") for p in problems)

    def test_shape_mismatch_H(self):
        m = example_model(2.0, 20)
        bad = DaeModel(m.F, m.C, MatrixFunction.constant([[0.0, 1.0, 0.0]]), m.Q, m.R, m.grid)
        problems = validate_model(bad)
        assert any(p.startswith("shape mismatch H") for p in problems)

    def test_non_symmetric_Q(self):
        m = example_model(2.0, 10)
        bad = DaeModel(m.F, m.C, m.H, MatrixFunction.constant([[1.0, 0.5], [0.0, 1.0]]), m.R,
                       m.grid)
        assert any("Q not positive definite" in p for p in validate_model(bad))

    def test_idempotent(self):
        m = example_model(2.0, 10)
        bad = DaeModel(m.F, m.C, m.H, m.Q, MatrixFunction.constant([[0.0]]), m.grid)
        assert validate_model(bad) == validate_model(bad)


class TestExampleModel:
    def test_coefficients(self):
        m = example_model(T=2.0, n_steps=100)
        t = 0.3
        c3 = math.sin(2 * math.pi * t / 2.0)
        np.testing.assert_allclose(m.C(t), [[-1.0, 1.0], [c3, 0.0]], rtol=1e-15)
        np.testing.assert_allclose(m.Q(t), np.diag([1.0, math.exp(math.sqrt(t)) / 2]))
        np.testing.assert_allclose(m.R(t), [[3.0]])
        np.testing.assert_array_equal(m.H(t), [[0.0, 1.0]])
        assert (m.m, m.n, m.p) == (2, 2, 1)

    def test_blind(self):
        m = example_model(blind=True, n_steps=10)
        np.testing.assert_array_equal(m.H(0.5), [[0.0, 0.0]])


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        grid = TimeGrid(0.0, 1.0, 4)
        table = tmp_path / "r.csv"
        rows = "\n".join(f"{t},{1 + t}" for t in grid.nodes)
        table.write_text("t,v11\n" + rows + "\n")
        (tmp_path / "m.yaml").write_text(
            "dims: {m: 2, n: 2, p: 1}\n"
            "grid: {t0: 0, t_end: 1, n_steps: 4}\n"
            "F: [[1, 0], [0, 0]]\n"
            "C: {rows: [[-1, 1], [{form: sin, omega: 3.0}, 0]]}\n"
            "H: [[0, 1]]\n"
            "Q: {rows: [[1, 0], [0, {form: exp_sqrt_half}]]}\n"
            "R: {csv: r.csv}\n")
        m = load_model(tmp_path / "m.yaml")
        assert validate_model(m) == []
        assert m.C(0.5)[1, 0] == pytest.approx(math.sin(1.5))
        assert m.R(0.25)[0, 0] == pytest.approx(1.25)
        assert m.R(0.125)[0, 0] == pytest.approx(1.125)

    def test_missing_key(self):
        with pytest.raises(ModelError, match="missing config key"):
            model_from_dict({"dims": {"m": 1, "n": 1, "p": 1}})
