"""Two-state toy problem: how fast does the test notice a changed row?

The null and the alternative share their first row (eps, 1 - eps) and
differ in the second, (0.7, 0.3) against (0.9, 0.1). We look at the
divergences first, then run the sequential test with the KT estimator and
compare it with the oracle test that knows the alternative.
"""
import numpy as np

from markovsprt import (
    TestConfig,
    derive_seed,
    markov_distance,
    run_simple_sprt,
    run_to_decision,
    sample_trajectory,
    stationary_kl,
    toy_chains,
)

ALPHA = 0.05
TRIALS = 200

for eps in (0.5, 0.1, 0.01):
    P, Q = toy_chains(eps)
    print(f"eps={eps}: D_M={stationary_kl(Q, P):.5f}  markov distance={markov_distance(P, Q):.2f}")

    kt, oracle = [], []
    for r in range(TRIALS):
        data = sample_trajectory(Q, 0, 20000, derive_seed(1, r))
        kt.append(run_to_decision(data, TestConfig(ALPHA, P), record_trace=False).stopping_time)
        oracle.append(run_simple_sprt(data, P, Q, ALPHA).stopping_time)
    print(f"  mean stopping time: KT {np.mean(kt):6.1f}   oracle {np.mean(oracle):6.1f}")

# Under the null the statistic should drift down: the test almost never fires.
P, _ = toy_chains(0.5)
res = run_to_decision(sample_trajectory(P, 0, 10000, 7), TestConfig(ALPHA, P))
print(f"null run: {res.verdict.decision} after {res.state.t} samples, log L = {res.state.log_L:.2f}")
