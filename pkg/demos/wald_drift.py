"""Where does the log-likelihood ratio go on average?

Under the alternative Q the statistic grows like n * D_M(Q || P), but not
exactly: a bounded correction from the Poisson equation accounts for the
start state. Here we solve for it and check the identity by simulation.
"""
import numpy as np

from markovsprt import solve_poisson, stationary_drift, theta_from_chains, toy_chains
from markovsprt.wald import expected_log_ratio_sum, verify_wald_identity

P, Q = toy_chains(0.5)
theta = theta_from_chains(Q, P)
sol = solve_poisson(Q, theta)
print("theta =", np.round(theta, 6), " omega =", np.round(sol.omega, 6))
print(f"drift D_M = {stationary_drift(Q, P):.6f}, residual {sol.residual:.1e}")

for n in (1, 10, 100):
    exact = expected_log_ratio_sum(Q, P, 0, n)
    print(f"n={n:4d}: exact E[sum] = {exact:.6f}   n * D_M = {n * stationary_drift(Q, P):.6f}")

rep = verify_wald_identity(Q, P, horizon=2000, trials=2000, seed=5)
print(f"simulated lhs {rep.lhs:.3f}, predicted rhs {rep.rhs:.3f}, z = {rep.z:.2f}")
