import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from markovsprt.chain import (
    Trajectory,
    chain_stream,
    derive_seed,
    random_chain,
    sample_trajectory,
    toy_chains,
)
from markovsprt.errors import (
    DimensionMismatchError,
    ImpossibleUnderBothError,
    InvalidStateError,
    StreamError,
)
from markovsprt.estimators import KT
from markovsprt.sprt import (
    REJECT,
    STILL_RUNNING,
    TestConfig,
    TestState,
    Verdict,
    composite_step,
    martingale_check,
    run_simple_sprt,
    run_to_decision,
    simple_sprt_step,
)

UNIFORM2 = np.array([[0.5, 0.5], [0.5, 0.5]])


def kt_log_prob(counts, gamma=0.5):
    """Log sequence probability of per-row add-gamma, via Gamma functions."""
    counts = np.asarray(counts, dtype=float)
    m = counts.shape[1]
    rows = counts.sum(axis=1)
    return float(np.sum(gammaln(counts + gamma) - gammaln(gamma))
                 + np.sum(gammaln(m * gamma) - gammaln(rows + m * gamma)))


class TestSimpleStep:
    def test_equal_chains(self):
        P = random_chain(3, 0)
        s = TestState(prev_state=0)
        for x in sample_trajectory(P, 0, 100, 1).samples.tolist():
            s = simple_sprt_step(s, x, P, P, 0.05)
            assert s.log_L == 0.0
        assert s.t == 100

    def test_single_ratio(self):
        Q = np.array([[0.75, 0.25], [0.5, 0.5]])
        s = simple_sprt_step(TestState(prev_state=0), 0, UNIFORM2, Q, 0.05)
        assert s.log_L == pytest.approx(math.log(1.5))
        assert s.prev_state == 0 and s.t == 1

    def test_null_impossible(self):
        P = np.array([[1.0, 0.0], [0.5, 0.5]])
        s = simple_sprt_step(TestState(prev_state=0), 1, P, UNIFORM2, 0.05)
        assert s.log_L == math.inf and s.rejected

    def test_impossible_under_both(self):
        P = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(ImpossibleUnderBothError):
            simple_sprt_step(TestState(prev_state=0), 1, P, P, 0.05)

    def test_absorbing_after_rejection(self):
        s = TestState(3, 4.0, 1, REJECT)
        assert simple_sprt_step(s, 0, UNIFORM2, UNIFORM2, 0.05) is s


class TestCompositeStep:
    def test_uniform_first_step(self):
        cfg = TestConfig(0.05, UNIFORM2)
        s, est = composite_step(TestState(prev_state=0), 1, cfg, cfg.make_estimator())
        assert s.log_L == 0.0 and s.t == 1

    def test_kt_after_one_transition(self):
        cfg = TestConfig(0.05, UNIFORM2)
        est = KT(2).observe(0, 0)
        s, est = composite_step(TestState(prev_state=0), 0, cfg, est)
        assert s.log_L == pytest.approx(math.log(1.5))
        assert est.counts[0][0] == 2

    def test_threshold(self):
        cfg = TestConfig(0.05, UNIFORM2)
        assert cfg.log_threshold == pytest.approx(math.log(20))
        below = TestState(1, math.log(20) - 1e-9 - math.log(1.5), 0)
        s, _ = composite_step(below, 0, cfg, KT(2).observe(0, 0))
        assert not s.rejected
        at = TestState(1, math.log(20) - math.log(1.5), 0)
        s, _ = composite_step(at, 0, cfg, KT(2).observe(0, 0))
        assert s.rejected

    def test_invalid_state(self):
        cfg = TestConfig(0.05, UNIFORM2)
        with pytest.raises(InvalidStateError):
            composite_step(TestState(), 2, cfg, KT(2))

    def test_predicts_before_observing(self):
        # observing X_t first would have given ln(0.75/0.5) on the first step
        cfg = TestConfig(0.05, UNIFORM2)
        s, _ = composite_step(TestState(prev_state=0), 0, cfg, KT(2))
        assert s.log_L == 0.0


class TestConfigChecks:
    @pytest.mark.parametrize("alpha", [0, 1, -0.1, 1.5])
    def test_alpha(self, alpha):
        with pytest.raises(ValueError):
            TestConfig(alpha, UNIFORM2)

    def test_iid_vector_null(self):
        cfg = TestConfig(0.1, [0.2, 0.8], mode="iid")
        np.testing.assert_array_equal(cfg.null_chain, [[0.2, 0.8], [0.2, 0.8]])

    def test_iid_needs_identical_rows(self):
        with pytest.raises(ValueError):
            TestConfig(0.1, toy_chains(0.5)[0], mode="iid")

    def test_mode(self):
        with pytest.raises(ValueError):
            TestConfig(0.1, UNIFORM2, mode="hmm")

    def test_verdict_contract(self):
        with pytest.raises(ValueError):
            Verdict(REJECT)
        with pytest.raises(ValueError):
            Verdict(STILL_RUNNING, 5)


class TestRun:
    def test_empty_stream(self):
        res = run_to_decision(Trajectory(0, np.array([], dtype=int)), TestConfig(0.05, UNIFORM2))
        assert res.verdict.decision == STILL_RUNNING
        assert res.state.t == 0 and res.state.log_L == 0.0 and res.trace == []

    def test_matches_step_function(self):
        P, Q = toy_chains(0.5)
        cfg = TestConfig(1e-6, P, max_samples=3000)
        s = sample_trajectory(Q, 0, 3000, 5)
        res = run_to_decision(s, cfg)
        state, est = TestState(prev_state=0), cfg.make_estimator()
        for (t, lr), x in zip(res.trace, s.samples.tolist()):
            state, est = composite_step(state, x, cfg, est)
            assert state.t == t
            assert state.log_L == pytest.approx(lr, rel=1e-12, abs=1e-12)

    def test_stops_at_first_crossing(self):
        P, Q = toy_chains(0.5)
        res = run_to_decision(sample_trajectory(Q, 0, 10**5, 2), TestConfig(0.05, P))
        assert res.verdict.decision == REJECT
        logs = [lr for _, lr in res.trace]
        assert logs[-1] >= math.log(20)
        assert all(lr < math.log(20) for lr in logs[:-1])
        assert res.stopping_time == len(logs)

    def test_max_samples(self):
        cfg = TestConfig(0.05, UNIFORM2, max_samples=10)
        res = run_to_decision(chain_stream(UNIFORM2, 0, 1), cfg, x0=0)
        assert res.state.t == 10 and res.verdict.decision == STILL_RUNNING

    def test_log_domain_over_million_steps(self):
        P = random_chain(3, 21)
        n = 10**6
        s = sample_trajectory(P, 0, n, 3)
        res = run_to_decision(s, TestConfig(1e-300, P), record_trace=False)
        prev = np.concatenate([[0], s.samples[:-1]])
        counts = np.bincount(prev * 3 + s.samples, minlength=9).reshape(3, 3)
        oracle = kt_log_prob(counts) - float(np.sum(counts * np.log(P)))
        assert res.state.t == n
        assert math.isfinite(res.state.log_L)
        assert res.state.log_L == pytest.approx(oracle, abs=1e-6 * n ** 0.5)

    def test_null_impossible_rejects(self):
        P = np.array([[1.0, 0.0], [0.5, 0.5]])
        res = run_to_decision([1, 1], TestConfig(0.05, P), x0=0)
        assert res.stopping_time == 1 and res.state.log_L == math.inf

    def test_stream_error_keeps_trace(self):
        def source():
            yield 0
            yield 1
            raise OSError("disconnected")

        with pytest.raises(StreamError) as info:
            run_to_decision(source(), TestConfig(0.05, UNIFORM2), x0=0)
        assert len(info.value.trace) == 2
        assert info.value.state.t == 2

    def test_out_of_range_sample(self):
        with pytest.raises(StreamError):
            run_to_decision([0, 5], TestConfig(0.05, UNIFORM2), x0=0)
        with pytest.raises(InvalidStateError):
            run_to_decision([0], TestConfig(0.05, UNIFORM2), x0=2)
        with pytest.raises(ValueError):
            run_to_decision([0], TestConfig(0.05, UNIFORM2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    def test_threshold_monotone(self, seed, a1, a2):
        P, Q = toy_chains(0.5)
        lo, hi = sorted((a1, a2))
        s = sample_trajectory(Q, 0, 5000, seed)
        t_hi = run_to_decision(s, TestConfig(hi, P)).state.t
        t_lo = run_to_decision(s, TestConfig(lo, P)).state.t
        assert t_lo >= t_hi

    def test_oracle_stops_sooner_on_average(self):
        P, Q = toy_chains(0.5)
        comp, orac = [], []
        for r in range(150):
            s = sample_trajectory(Q, 0, 20000, derive_seed(77, r))
            comp.append(run_to_decision(s, TestConfig(0.05, P), record_trace=False).state.t)
            orac.append(run_simple_sprt(s, P, Q, 0.05).state.t)
        assert np.mean(orac) < np.mean(comp)

    def test_simple_sprt_max_samples(self):
        P, Q = toy_chains(0.5)
        res = run_simple_sprt(sample_trajectory(P, 0, 100, 1), P, Q, 1e-9, max_samples=40)
        assert res.state.t == 40


class TestMartingaleCheck:
    def test_positive_row(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p, q = rng.dirichlet(np.ones(4), size=2)
            assert martingale_check(q, p) == pytest.approx(1.0, abs=1e-12)

    def test_zero_entry_slack(self):
        assert martingale_check([0.1, 0.45, 0.45], [0.0, 0.5, 0.5]) == pytest.approx(0.9)

    def test_prediction_equals_row(self):
        p = [0.2, 0.3, 0.5]
        assert martingale_check(p, p) == pytest.approx(1.0, abs=1e-15)

    def test_shapes(self):
        with pytest.raises(DimensionMismatchError):
            martingale_check([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_estimator_predictions(self):
        P = random_chain(3, 2)
        est = KT(3)
        for prev, x in sample_trajectory(P, 0, 200, 3).transitions():
            assert martingale_check(est.predict(prev), P[prev]) == pytest.approx(1, abs=1e-12)
            est.observe(prev, x)
