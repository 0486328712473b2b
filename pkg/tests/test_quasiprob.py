import numpy as np
import pytest

from qptrace.channels import Deletion, Insertion, Symmetry
from qptrace.quasiprob import (QPDistribution, SingularChannelError, StochasticMatrixChannel, closed_form_gamma,
                               decomposition_residual, qp_deletion, qp_for, qp_insertion, qp_sample, qp_solve,
                               qp_symmetry, sampling_probabilities)

I2 = StochasticMatrixChannel(np.eye(2))
FLIP = StochasticMatrixChannel(np.array([[0.0, 1.0], [1.0, 0.0]]))


def sym_matrix(sigma):
    return StochasticMatrixChannel(np.array([[1 - sigma, sigma], [sigma, 1 - sigma]]))


class TestClosedForms:
    def test_deletion_example(self):
        q = qp_deletion(0.25)
        assert q[0] == pytest.approx(4 / 3, abs=1e-12)
        assert q[1] == pytest.approx(-4 / 9, abs=1e-12)
        assert q[2] == pytest.approx(4 / 27, abs=1e-12)
        assert q.gamma() == pytest.approx(2.0, abs=1e-9)
        assert not q.exact_finite

    def test_deletion_trivial(self):
        q = qp_deletion(0.0)
        assert q[0] == 1.0 and q[1] == 0.0 and q.gamma() == 1.0

    def test_deletion_sum(self):
        q = qp_deletion(0.3)
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert q.truncated_tail < 1e-12

    def test_insertion_examples(self):
        q = qp_insertion(0.5)
        assert (q[0], q[1], q.gamma()) == pytest.approx((2.0, -1.0, 3.0))
        q = qp_insertion(0.2)
        assert (q[0], q[1], q.gamma()) == pytest.approx((1.25, -0.25, 1.5))
        assert qp_insertion(0.0).gamma() == 1.0

    def test_symmetry_examples(self):
        q = qp_symmetry(0.25)
        assert (q[0], q[1], q.gamma()) == pytest.approx((1.5, -0.5, 2.0))
        q = qp_symmetry(0.1)
        assert (q[0], q[1], q.gamma()) == pytest.approx((1.125, -0.125, 1.25))
        assert qp_symmetry(0.0).gamma() == 1.0

    @pytest.mark.parametrize("bad", [lambda: qp_deletion(0.5), lambda: qp_insertion(1.0),
                                     lambda: qp_symmetry(0.5), lambda: qp_deletion(-0.1)])
    def test_range_errors(self, bad):
        with pytest.raises(ValueError):
            bad()

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            QPDistribution(np.array([1.0, 0.5]))

    @pytest.mark.parametrize("spec", [Deletion(0.1), Deletion(0.45), Insertion(0.3), Insertion(0.9),
                                      Symmetry(0.05), Symmetry(0.4)])
    def test_norm_formulas(self, spec):
        assert qp_for(spec).gamma() == pytest.approx(closed_form_gamma(spec), abs=1e-9)
        assert qp_for(spec).weights.sum() == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("delta", [0.05, 0.25, 0.4])
    def test_deletion_convolution_identity(self, delta):
        q = qp_deletion(delta).weights
        c = np.convolve(q, [1 - delta, delta])
        expect = np.zeros_like(c)
        expect[0] = 1.0
        # the last coefficient carries the truncated tail
        assert np.allclose(c[:-1], expect[:-1], atol=1e-12)
        assert abs(c[-1]) < 1e-11


class TestSampling:
    def test_deletion_probabilities(self):
        q = qp_deletion(0.25)
        p = np.abs(q.weights) / q.gamma()
        assert p[0] == pytest.approx(2 / 3) and p[1] == pytest.approx(2 / 9)
        assert sampling_probabilities(Deletion(0.25)) == pytest.approx(2 / 3)

    def test_normalized_parameters(self):
        assert sampling_probabilities(Insertion(0.5)) == pytest.approx(1 / 3)
        assert sampling_probabilities(Symmetry(0.25)) == 0.25

    def test_symmetry_flip_weight(self):
        rng = np.random.default_rng(3)
        q = qp_symmetry(0.25)
        draws = [qp_sample(q, rng) for _ in range(4000)]
        flips = [w for j, w in draws if j == 1]
        assert set(flips) == {-2.0}
        assert abs(len(flips) / 4000 - 0.25) < 0.03

    def test_nonnegative_is_ordinary(self):
        rng = np.random.default_rng(0)
        q = QPDistribution(np.array([0.3, 0.7]))
        assert all(w == 1.0 for _, w in (qp_sample(q, rng) for _ in range(200)))

    @pytest.mark.parametrize("q", [qp_deletion(0.25), qp_insertion(0.4), qp_symmetry(0.2)])
    def test_unbiased(self, q):
        rng = np.random.default_rng(17)
        N = 100_000
        g = q.gamma()
        p = np.abs(q.weights) / g
        idx = rng.choice(p.size, size=N, p=p)
        w = np.sign(q.weights[idx]) * g
        # the vectorized draws above follow qp_sample; check one call agrees in law
        j0, w0 = qp_sample(q, np.random.default_rng(1))
        assert w0 == pytest.approx(np.sign(q.weights[j0]) * g)
        for j in range(min(4, p.size)):
            vals = w * (idx == j)
            se = vals.std() / np.sqrt(N)
            assert abs(vals.mean() - q[j]) <= 5 * se + 1e-12


class TestMatrices:
    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            StochasticMatrixChannel(np.array([[0.5, 0.5], [0.4, 0.5]]))

    def test_symmetry_residual(self):
        assert decomposition_residual(sym_matrix(0.25), qp_symmetry(0.25), [I2, FLIP]) <= 1e-12

    def test_identity_residual(self):
        assert decomposition_residual(I2, QPDistribution(np.array([1.0])), [I2]) == 0.0

    def test_singular(self):
        with pytest.raises(SingularChannelError):
            decomposition_residual(sym_matrix(0.5), [1.0], [I2])

    @pytest.mark.parametrize("perm", [(1, 0, 2, 3), (1, 2, 0, 3), (1, 2, 3, 0), (1, 0, 3, 2)])
    def test_first_order_residual(self, perm):
        """The neglected terms sum to about 4 eps**2 in the row l1 norm."""
        E = np.eye(4)[list(perm)]
        for eps in (0.01, 0.05, 0.1):
            lam = StochasticMatrixChannel((1 - eps) * np.eye(4) + eps * E)
            r = decomposition_residual(lam, [1 + eps, -eps], [StochasticMatrixChannel(np.eye(4)),
                                                            StochasticMatrixChannel(E)])
            assert 4 * eps ** 2 <= r <= 5 * eps ** 2

    def test_first_order_residual_identity_error(self):
        lam = StochasticMatrixChannel(np.eye(4))
        assert decomposition_residual(lam, [1.05, -0.05], [lam, lam]) < 1e-15

    def test_solve_recovers_symmetry(self):
        res = qp_solve(sym_matrix(0.1), [I2, FLIP])
        assert np.allclose(res.distribution.weights, qp_symmetry(0.1).weights, atol=1e-9)
        assert res.exact

    def test_solve_identity(self):
        res = qp_solve(I2, [I2, FLIP])
        assert np.allclose(res.distribution.weights, [1.0, 0.0], atol=1e-12)

    def test_solve_reports_residual(self):
        res = qp_solve(sym_matrix(0.1), [I2])
        assert res.residual > 0 and not res.exact

    def test_solve_beats_candidates(self):
        lam = sym_matrix(0.2)
        best = qp_solve(lam, [I2, FLIP]).residual
        for cand in ([1.0, 0.0], [1.2, -0.2], [0.5, 0.5]):
            assert best <= decomposition_residual(lam, cand, [I2, FLIP]) + 1e-15
