import time

import pytest

from qptrace.verify import (SuiteResult, grid_channels, run_suite, run_with_timeout, suite_feasibility, suite_gf,
                            suite_merge, suite_norms, suite_robson, suite_tail, suite_unbiasedness,
                            unbiasedness_case)


def _sleep(t):
    time.sleep(t)
    return t


def _boom():
    raise RuntimeError("boom")


class TestSuiteResult:
    def test_report(self):
        r = SuiteResult("demo")
        r.add("a", True, "fine")
        r.add("b", False)
        assert not r.passed
        lines = r.report().splitlines()
        assert lines[0] == "PASS demo: a fine" and lines[1] == "FAIL demo: b"
        assert lines[-1] == "FAIL suite demo (2 checks)"

    def test_empty_passes(self):
        assert SuiteResult("x").passed


class TestSuites:
    def test_grid_size(self):
        assert len(grid_channels()) == 7 + 49 + 343

    def test_norms(self):
        assert suite_norms().passed

    def test_tail(self):
        assert suite_tail(trials=20_000).passed

    def test_gf(self):
        assert suite_gf().passed

    def test_robson(self):
        assert suite_robson(max_len=10, ks=(4, 6)).passed

    def test_feasibility(self):
        assert suite_feasibility(trials=5).passed

    def test_merge(self):
        assert suite_merge(max_n=5).passed

    def test_unbiasedness_small(self):
        r = suite_unbiasedness(max_n=5, max_k=2, channels=["del:0.3,ins:0.2", "sym:0.25", "del:0.75"])
        assert r.passed and len(r.rows) == 6

    def test_case_splits_high_deletion(self):
        err, bound = unbiasedness_case("del:0.75", 1, 4)
        assert err <= 0.01 and bound == 0.0

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run_suite("nope")


class TestTimeout:
    def test_ok(self):
        assert run_with_timeout(_sleep, (0.0,), 30.0) == ("ok", 0.0)

    def test_overrun(self):
        status, out = run_with_timeout(_sleep, (30.0,), 0.5)
        assert status == "timeout" and out is None

    def test_error(self):
        status, msg = run_with_timeout(_boom, (), 30.0)
        assert status == "error" and "boom" in msg
        assert run_with_timeout(_boom, (), None)[0] == "error"
