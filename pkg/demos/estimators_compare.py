"""KT against the Jeffreys mixture near the edge of the simplex.

With eps small the first row is nearly deterministic. The add-1/2 rule
keeps half a pseudo-count on the rare symbol; a mixture of whole chains
can put less. We compare mean stopping times on common data streams.
"""
from markovsprt.experiments import ExperimentSpec, run_experiment

spec = ExperimentSpec(name="estimator_sweep", seed=3, trials=100, horizon=10**5,
                      grid=[0.1, 0.01],
                      estimators=["kt", "jeffreys:500", "modified:500,0.1,0.1,1000"])
result = run_experiment(spec)
print(result.table())
