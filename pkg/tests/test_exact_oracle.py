import itertools

import numpy as np
import pytest

import brute
from qptrace.channels import BitString, Deletion, Insertion, Symmetry, as_channel
from qptrace.exact_oracle import (MAX_ENUM_LEN, GuardError, channel_output_distribution, exact_expectation,
                                  exact_qp_expectation, exact_qp_table, exact_suffix_means, insertion_tail,
                                  matrix_form)
from qptrace.kmer import marker_indicator
from qptrace.qp_oracle import lift_composite, table_oracle


def strings(max_len):
    for n in range(max_len + 1):
        for b in itertools.product("01", repeat=n):
            yield "".join(b)


class TestForward:
    def test_half_deletion_example(self):
        d = channel_output_distribution("del:0.5", "01")
        assert d.probs == pytest.approx({"": 0.25, "0": 0.25, "1": 0.25, "01": 0.25})
        assert d.tail_mass == 0.0

    @pytest.mark.parametrize("chan", ["del:0.3", "sym:0.2", "del:0.2,sym:0.1", "sym:0.1,del:0.4,del:0.1"])
    def test_matches_brute(self, chan):
        for x in ("", "1", "0110", "10011"):
            d = channel_output_distribution(chan, x)
            b = brute.trace_distribution(as_channel(chan).stages, x)
            assert set(d.probs) <= set(b) | {""}
            for s in set(d.probs) | set(b):
                assert d[s] == pytest.approx(b.get(s, 0.0), abs=1e-13)

    def test_insertion_matches_brute(self):
        for x in ("1", "01", "110"):
            d = channel_output_distribution("ins:0.3", x, max_extra=5)
            b = brute.trace_distribution([Insertion(0.3)], x, max_extra=5)
            for s in set(d.probs) | set(b):
                assert d[s] == pytest.approx(b.get(s, 0.0), abs=1e-13)
            assert d.tail_mass == pytest.approx(1.0 - sum(b.values()), abs=1e-12)

    def test_merge_split(self):
        for x in strings(6):
            a = channel_output_distribution("del:0.36", x)
            b = channel_output_distribution("del:0.2,del:0.2", x)
            for s in set(a.probs) | set(b.probs):
                assert abs(a[s] - b[s]) <= 1e-10

    def test_guard(self):
        with pytest.raises(GuardError):
            channel_output_distribution("del:0.1", "0" * (MAX_ENUM_LEN + 1))


class TestInsertionTail:
    def test_single_stage_is_exact(self):
        for x, extra in (("1", 3), ("0110", 4)):
            d = channel_output_distribution("ins:0.4", x, max_extra=extra)
            assert insertion_tail("ins:0.4", len(x), extra) == pytest.approx(d.tail_mass, abs=1e-12)

    def test_none_and_no_insertion(self):
        assert insertion_tail("ins:0.4", 5, None) == 0.0
        assert insertion_tail("del:0.2,sym:0.1", 5, 0) == 0.0

    def test_union_bound_dominates(self):
        chan = "ins:0.3,del:0.2,ins:0.2"
        d = channel_output_distribution(chan, "101", max_extra=4)
        # a total cap of four implies a per-stage cap of four
        assert insertion_tail(chan, 3, 4) <= d.tail_mass + 1e-12


class TestPullEngine:
    @pytest.mark.parametrize("chan", ["del:0.3", "sym:0.25", "del:0.2,sym:0.1", "del:0.1,del:0.3,sym:0.2"])
    def test_plain_expectation_matches_forward(self, chan):
        f = table_oracle(np.arange(8) / 7.0)
        for x in ("", "10", "0110", "11101"):
            a, bound = exact_expectation(f, chan, x)
            b, _ = exact_expectation(f, chan, x, max_extra=0)
            assert bound == 0.0 and a == pytest.approx(b, abs=1e-12)

    @pytest.mark.parametrize("chan", ["ins:0.3", "del:0.2,ins:0.4", "ins:0.2,sym:0.1,del:0.3"])
    def test_insertion_expectation_matches_forward(self, chan):
        f = table_oracle([0.0, 1.0, 0.5, -1.0])
        for x in ("1", "01", "100"):
            exact, _ = exact_expectation(f, chan, x)
            approx, bound = exact_expectation(f, chan, x, max_extra=6)
            assert abs(exact - approx) <= bound + 1e-12

    def test_max_extra_bound(self):
        g = lift_composite(marker_indicator("1"), "ins:0.3,del:0.2", 0.01)
        exact, zero = exact_qp_expectation(g, "ins:0.3,del:0.2", "101")
        capped, bound = exact_qp_expectation(g, "ins:0.3,del:0.2", "101", max_extra=3)
        assert zero == 0.0 and bound > 0
        assert abs(exact - capped) <= bound

    @pytest.mark.parametrize("chan,marker,xs", [
        ("del:0.25", "1", ("0", "10", "011", "1101")),
        ("sym:0.2", "10", ("10", "011", "1001")),
        ("sym:0.1,del:0.2", "01", ("01", "101", "0011")),
        ("ins:0.3", "1", ("1", "01")),
    ])
    def test_qp_matches_brute(self, chan, marker, xs):
        """Literal enumeration over channel outcomes and QP layer outcomes."""
        g = lift_composite(marker_indicator(marker), chan, 0.02)
        stages = as_channel(chan).stages
        extra = 10 if any(isinstance(s, Insertion) for s in stages) else 0
        for x in xs:
            val, _ = exact_qp_expectation(g, chan, x)
            ref = brute.qp_expectation(g, stages, x, max_extra=extra)
            tol = 1e-10 + g.total_gamma * insertion_tail(chan, len(x), extra)
            assert val == pytest.approx(ref, abs=tol)

    def test_table_rows_match_expectation(self):
        chan = "del:0.2,ins:0.2"
        g = lift_composite(marker_indicator("10"), chan, 0.01)
        T = exact_qp_table(g, chan, 3)
        for c in range(8):
            x = str(BitString.from_int(c, 3))
            assert T[c, 2] == pytest.approx(exact_qp_expectation(g, chan, x)[0], abs=1e-12)

    def test_suffix_means(self):
        chan = "del:0.2"
        g = lift_composite(marker_indicator("1"), chan, 0.01)
        mu = exact_suffix_means(g, chan, "0110", 3)
        assert mu[0] == pytest.approx(exact_qp_expectation(g, chan, "0110")[0])
        assert mu.shape == (3,)
        # past the end of every trace the marker cannot be read
        assert exact_suffix_means(g, "sym:0.0", "01", 4)[2:] == pytest.approx([0.0, 0.0])

    def test_needs_table(self):
        from qptrace.qp_oracle import OracleFn

        with pytest.raises(ValueError):
            exact_qp_expectation(OracleFn(k=1, C=1.0, evaluator=lambda bits, rng: 1.0), "del:0.1", "1")


class TestMatrixForm:
    @pytest.mark.parametrize("spec", [Deletion(0.3), Symmetry(0.2), Insertion(0.25)])
    def test_columns_stochastic(self, spec):
        m = matrix_form(spec, 3)
        assert np.allclose(m.matrix.sum(axis=0), 1.0)
        assert np.all(m.matrix >= 0)

    def test_deletion_entries(self):
        m = matrix_form(Deletion(0.5), 2)
        col = m.labels.index("01")
        for s, p in (("", 0.25), ("0", 0.25), ("1", 0.25), ("01", 0.25)):
            assert m.matrix[m.labels.index(s), col] == pytest.approx(p)

    def test_symmetry_preserves_length(self):
        m = matrix_form(Symmetry(0.1), 2, min_len=2)
        assert m.labels == ("00", "01", "10", "11")
        assert m.matrix[0, 0] == pytest.approx(0.81)
