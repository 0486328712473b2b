import cmath
import math

import numpy as np
import pytest

from qptrace.channels import PoleError, TraceSet, inverse_gf_eval, sample_traces, split_channel
from qptrace.exact_oracle import exact_suffix_means
from qptrace.kmer import (KmerEstimate, KmerQuery, combination_weights, estimate_all_markers, estimate_kmer,
                          exact_kmer_value, kmer_stderr, kmer_suffix_stats, marker_indicator)
from qptrace.qp_oracle import lift_composite

X30 = "110100101011100010110100111010"


class TestExactValue:
    def test_examples(self):
        assert exact_kmer_value("10110", "1", 1) == 3
        assert exact_kmer_value("00000", "1", 0.3 + 0.2j) == 0
        assert exact_kmer_value("10110", "11", 1j) == pytest.approx(-1)

    def test_marker_longer_than_input(self):
        assert exact_kmer_value("10", "101", 1) == 0

    def test_marker_indicator_examples(self):
        assert marker_indicator("1")("10") == 1.0
        assert marker_indicator("10")("1") == 0.0
        assert marker_indicator("101")("10100") == 1.0
        with pytest.raises(ValueError):
            marker_indicator("")


class TestQuery:
    def test_validation(self):
        with pytest.raises(ValueError):
            KmerQuery("", 0.0)
        with pytest.raises(ValueError):
            KmerQuery("1", 4.0)
        with pytest.raises(ValueError):
            KmerQuery("1", 0.0, eps=0.0)
        assert KmerQuery("101", 0.1).k == 3


class TestNoiseless:
    @pytest.mark.parametrize("alpha", [0.0, 0.1, -0.7, 2.0])
    @pytest.mark.parametrize("w", ["1", "10", "101"])
    def test_calibration(self, alpha, w):
        x = "1011010010"
        est = estimate_kmer([x] * 3, "del:0.0", KmerQuery(w, alpha), rng=0)
        assert est.value == pytest.approx(exact_kmer_value(x, w, cmath.exp(1j * alpha)), abs=1e-12)
        assert est.z_used == pytest.approx(cmath.exp(1j * alpha))
        assert est.stderr_proxy == 0.0

    def test_zero_frequency_is_sum_of_means(self):
        x = "0110110"
        est = estimate_kmer([x] * 2, "sym:0.0", KmerQuery("11", 0.0), rng=0)
        assert est.value == pytest.approx(est.per_suffix_means.sum())
        assert est.value == pytest.approx(2.0)

    def test_linearity(self):
        a = TraceSet.from_strings(["10110", "10110"])
        b = TraceSet.from_strings(["0111", "0111", "0111"])
        both = TraceSet.from_strings(["10110", "10110", "0111", "0111", "0111"])
        q = KmerQuery("11", 0.3)
        ea, eb, e = (estimate_kmer(t, "del:0.0", q, rng=1) for t in (a, b, both))
        # suffix sets differ in length; pad the shorter mean vector with zeros
        assert e.value == pytest.approx((2 * ea.value + 3 * eb.value) / 5, abs=1e-12)


class TestCombination:
    @pytest.mark.parametrize("chan", ["del:0.2", "del:0.2,sym:0.05", "sym:0.1", "del:0.5"])
    @pytest.mark.parametrize("alpha", [0.0, 0.1])
    def test_exact_means_recover_value(self, chan, alpha):
        """The combination of exact suffix means equals the k-mer value up to the bias budget."""
        x, w, eps = "1011001", "10", 0.01
        oracle = lift_composite(marker_indicator(w), split_channel(chan), eps)
        mu = exact_suffix_means(oracle, split_channel(chan), x, len(x))
        c, _ = combination_weights(chan, alpha, len(x))
        val = complex(np.sum(c * mu))
        target = exact_kmer_value(x, w, cmath.exp(1j * alpha))
        assert abs(val - target) <= eps * np.abs(c).sum()

    @pytest.mark.parametrize("chan", ["ins:0.2", "ins:0.2,del:0.2", "del:0.2,ins:0.3"])
    def test_exact_means_recover_value_insertion(self, chan):
        x, w, eps, extra = "10110", "1", 0.01, 6
        oracle = lift_composite(marker_indicator(w), split_channel(chan), eps)
        n_suffix = len(x) + extra
        mu = exact_suffix_means(oracle, split_channel(chan), x, n_suffix, max_extra=extra)
        c, _ = combination_weights(chan, 0.05, n_suffix)
        val = complex(np.sum(c * mu))
        target = exact_kmer_value(x, w, cmath.exp(0.05j))
        # the insertion cap drops at most 1% of the probability at this size
        assert abs(val - target) <= eps * np.abs(c).sum() + 0.05

    def test_weights_noiseless(self):
        c, z = combination_weights("sym:0.0", 0.2, 4)
        assert np.allclose(c, cmath.exp(0.2j) ** np.arange(4))

    def test_z_matches_inverse_gf(self):
        _, z = combination_weights("del:0.25", 0.1, 3)
        assert z == pytest.approx(inverse_gf_eval("del:0.25", 0.1))


class TestMonteCarlo:
    def test_deletion_estimate(self):
        x = X30[:14]
        tr = sample_traces("del:0.2", x, 200_000, seed=12)
        est = estimate_kmer(tr, "del:0.2", KmerQuery("101", 0.1), rng=4)
        target = exact_kmer_value(x, "101", cmath.exp(0.1j))
        assert abs(est.value - target) <= 4 * est.stderr_proxy + est.bias_budget

    def test_all_markers_share_draws(self):
        x = X30[:10]
        tr = sample_traces("sym:0.05", x, 20_000, seed=3)
        res = estimate_all_markers(tr, "sym:0.05", 2, 0.0, rng=9)
        one = estimate_kmer(tr, "sym:0.05", KmerQuery("01", 0.0), rng=9)
        assert set(res) == {"00", "01", "10", "11"}
        assert res["01"].value == one.value
        # at alpha = 0 the values over all markers sum to the expected number of windows
        total = sum(e.value for e in res.values())
        assert abs(total - (len(x) - 1)) <= 4 * sum(e.stderr_proxy for e in res.values())

    def test_boundedness_and_stderr_envelope(self):
        x = X30[:12]
        tr = sample_traces("del:0.2", x, 5000, seed=1)
        est = estimate_kmer(tr, "del:0.2", KmerQuery("10", 0.1), rng=2)
        assert np.all(np.abs(est.per_suffix_means) <= est.gamma_total + 1e-9)
        assert est.stderr_proxy <= est.gamma_total * np.abs(est.weights).sum() / math.sqrt(est.n_traces)
        assert kmer_stderr(est) == pytest.approx(est.stderr_proxy)

    def test_reproducible_across_workers(self):
        tr = sample_traces("del:0.2,ins:0.1", X30[:16], 30_000, seed=5)
        a = kmer_suffix_stats(tr, "del:0.2,ins:0.1", 2, rng=11, workers=1)
        b = kmer_suffix_stats(tr, "del:0.2,ins:0.1", 2, rng=11, workers=3)
        assert np.array_equal(a.means, b.means) and np.array_equal(a.sds, b.sds)


class TestStderr:
    def _est(self, n, sd):
        w = np.array([1.0, 0.5j])
        return KmerEstimate(0j, n, np.zeros(2), 0.0, 1 + 0j, 1.0, 1, weights=w, per_suffix_sd=np.array(sd))

    def test_quartering_doubles(self):
        assert kmer_stderr(self._est(100, [0.3, 0.2])) == pytest.approx(2 * kmer_stderr(self._est(400, [0.3, 0.2])))

    def test_zero_spread(self):
        assert kmer_stderr(self._est(10, [0.0, 0.0])) == 0.0

    def test_single_trace(self):
        with pytest.raises(ValueError):
            kmer_stderr(self._est(1, [0.1, 0.1]))


class TestErrors:
    def test_empty_traces(self):
        with pytest.raises(ValueError):
            estimate_kmer(TraceSet.from_strings([]), "del:0.1", KmerQuery("1", 0.0))

    def test_pole(self):
        # G(z) = z / (2 - z) for ins:0.5 maps zeta = -1 to the pole of the inverse
        with pytest.raises(PoleError):
            combination_weights("ins:0.5", math.pi, 3)
