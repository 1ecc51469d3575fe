import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adtopo import adgraph as ad
from conftest import fd_grad, rel_linf


def spd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


class TestPrimitives:
    def test_mul(self):
        np.testing.assert_array_equal(ad.mul([1.0, 2, 3], [4.0, 5, 6]), [4, 10, 18])

    def test_power(self):
        np.testing.assert_array_equal(ad.power(np.array([0.5]), 3), [0.125])

    def test_scatter_add_duplicates(self):
        out = ad.scatter_add(np.zeros(3), np.array([0, 0, 2]), np.array([1.0, 2, 5]))
        np.testing.assert_array_equal(out, [3, 0, 5])

    def test_shape_mismatch_names_primitive(self):
        tape = ad.Tape()
        a = tape.variable(np.ones(3))
        with pytest.raises(ad.ShapeError, match="dot"):
            ad.dot(a, np.ones(4))

    def test_unknown_primitive(self):
        tape = ad.Tape()
        with pytest.raises(ad.UnknownPrimitiveError):
            tape.record("cosh", [tape.variable(np.ones(2))])

    def test_registry_complete(self):
        for name in ("add", "sub", "mul", "divide", "power", "tanh", "neg", "mean", "sum", "dot",
                     "outer", "matvec", "scatter_add", "gather", "pnorm", "linear_solve"):
            assert name in ad.PRIMITIVES

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_names_node(self):
        def f(x):
            return ad.sum(ad.power(x - 2.0, 0.5))
        with pytest.raises(ad.NonFiniteError, match=r"node \d+ \(power\)"):
            ad.value_and_grad(f, np.array([1.0, 3.0]))

    def test_mixing_tapes_rejected(self):
        a, b = ad.Tape().variable([1.0]), ad.Tape().variable([1.0])
        with pytest.raises(ad.ADError):
            a + b


class TestLinearSolve:
    def test_diagonal(self):
        np.testing.assert_allclose(ad.linear_solve(2 * np.eye(2), np.array([4.0, 6])), [2, 3])

    def test_identity_cotangent_is_seed(self, rng):
        c = rng.normal(size=4)
        _, g = ad.value_and_grad(lambda b: ad.dot(ad.linear_solve(np.eye(4), b), c), np.ones(4))
        np.testing.assert_array_equal(g, c)

    def test_adjoint_consistency(self, rng):
        A = spd(rng, 6)
        c = rng.normal(size=6)
        _, g = ad.value_and_grad(lambda b: ad.dot(ad.linear_solve(A, b, symmetric=True), c),
                                 rng.normal(size=6))
        np.testing.assert_allclose(g, np.linalg.solve(A, c), rtol=1e-12)

    def test_matrix_gradient_vs_fd(self, rng):
        A0, A1 = spd(rng, 5), rng.normal(size=(5, 5))
        A1 = A1 + A1.T
        b, c = rng.normal(size=5), rng.normal(size=5)

        def f(t):
            A = ad.add(A0, ad.mul(ad.sum(t), A1))
            return ad.dot(ad.linear_solve(A, b, symmetric=True), c)
        t = np.array([0.1])
        _, g = ad.value_and_grad(f, t)
        assert rel_linf(g, fd_grad(f, t)) < 1e-6

    def test_assembled_gradient_vs_fd(self, rng):
        # J = c . solve(A(rho), b) with A assembled by scatter
        base = spd(rng, 5)
        idx = (np.array([[0, 1, 2], [2, 3, 4]]), np.array([[0, 1, 2], [2, 3, 4]]))

        def f(r):
            A = ad.scatter_add(base, idx, ad.outer(r, np.array([1.0, 2.0, 3.0])))
            return ad.dot(ad.linear_solve(A, np.ones(5), symmetric=True), np.arange(5.0))
        r = np.array([0.7, 0.3])
        assert rel_linf(ad.value_and_grad(f, r)[1], fd_grad(f, r)) < 1e-6

    def test_singular(self):
        with pytest.raises(ad.SingularSystemError, match="singular"):
            ad.linear_solve(np.zeros((3, 3)), np.ones(3))
        with pytest.raises(ad.SingularSystemError):
            ad.linear_solve(np.diag([1.0, 1e-20]), np.ones(2))

    def test_non_square(self):
        with pytest.raises(ad.ShapeError):
            ad.linear_solve(np.ones((2, 3)), np.ones(2))

    def test_factorization_reused(self, rng):
        A = spd(rng, 4)

        def f(x):
            K = ad.add(A, ad.outer(x, x))
            u = ad.linear_solve(K, np.ones(4), symmetric=True)
            v = ad.linear_solve(K, np.arange(4.0), symmetric=True)
            return ad.dot(u, v)
        with ad.count_solves() as counts:
            ad.value_and_grad(f, np.full(4, 0.1))
        assert counts["factorizations"] == 1
        assert counts["solves"] == 4


class TestValueAndGrad:
    def test_sum_of_squares(self):
        J, g = ad.value_and_grad(lambda x: ad.sum(x * x), np.array([1.0, 2.0]))
        assert J == 5.0
        np.testing.assert_array_equal(g, [2, 4])

    @given(st.integers(1, 20))
    def test_mean(self, n):
        _, g = ad.value_and_grad(ad.mean, np.arange(float(n)))
        np.testing.assert_allclose(g, np.full(n, 1.0 / n))

    def test_non_scalar_rejected(self):
        with pytest.raises(ad.ShapeError):
            ad.value_and_grad(lambda x: x * 2.0, np.ones(3))

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, 5, elements=st.floats(-2, 2)), st.floats(0.1, 10.0))
    def test_linearity(self, x, alpha):
        def f(v):
            return ad.sum(ad.tanh(v) * v) + ad.pnorm(v * v + 1.0, 4)
        J, g = ad.value_and_grad(f, x)
        Ja, ga = ad.value_and_grad(lambda v: alpha * f(v), x)
        assert Ja == alpha * J
        np.testing.assert_array_equal(ga, alpha * g)

    def test_determinism(self, rng):
        x = rng.uniform(0.2, 1.0, 6)

        def f(v):
            return ad.pnorm(ad.divide(v, v + 1.0) ** 3, 8) - ad.mean(v[np.array([0, 0, 3])])
        a = ad.value_and_grad(f, x)
        b = ad.value_and_grad(f, x)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    @pytest.mark.parametrize("name", ["tanh", "divide", "power", "pnorm", "gather", "matmul",
                                      "sum_axis", "outer", "matvec"])
    def test_primitive_vjp_vs_fd(self, name, rng):
        M = rng.normal(size=(4, 3))
        w = rng.normal(size=(4, 3))
        fns = {
            "tanh": lambda x: ad.dot(ad.tanh(x), np.arange(4.0)),
            "divide": lambda x: ad.sum(ad.divide(1.0, x + 2.0) * x),
            "power": lambda x: ad.sum(ad.power(x + 1.0, 2.5)),
            "pnorm": lambda x: ad.pnorm(x + 1.0, 6),
            "gather": lambda x: ad.sum(x[np.array([1, 1, -1, 3])] * np.array([1.0, 2, 3, 4])),
            "matmul": lambda x: ad.sum(ad.matmul(ad.outer(x, np.ones(3)), M.T) * ad.outer(x, x)),
            "sum_axis": lambda x: ad.dot(ad.sum(ad.outer(x, x) * x, axis=1), x),
            "outer": lambda x: ad.sum(ad.outer(x, np.array([1.0, -2, 3])) * w),
            "matvec": lambda x: ad.dot(ad.matvec(ad.outer(x, x), x), np.ones(4)),
        }
        f = fns[name]
        x = rng.uniform(0.2, 1.0, 4)
        assert rel_linf(ad.value_and_grad(f, x)[1], fd_grad(f, x)) < 1e-7


def test_tape_is_topological_and_replays(rng):
    tape = ad.Tape()
    x = tape.variable(rng.uniform(0.1, 1, 4))
    K = ad.add(np.eye(4) * 3.0, ad.outer(x, x))
    u = ad.linear_solve(K, np.ones(4), symmetric=True)
    J = ad.pnorm(ad.tanh(u) * x, 3)
    for node in tape.nodes:
        assert all(i < node.output for i in node.inputs)
    replayed = tape.replay()
    for v, r in zip(tape.values, replayed):
        assert np.array_equal(v.primal, r)
    assert J.id == len(tape) - 1


def test_untraced_calls_return_arrays():
    assert isinstance(ad.tanh(np.array([0.0])), np.ndarray)
    assert ad.primal(np.array(2.0)) == 2.0
