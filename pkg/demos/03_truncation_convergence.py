"""How fast does truncating the infinite queue state space converge?

For each observation (x_from, x_to, dt) the study grows the truncation level
by level and reports the shortfall against a converged reference. The decay
is a little faster than exponential: each extra level buys more decades than
the one before.
"""

from ctmcinfer import builtin_model, truncation_study

net = builtin_model("mmc", c=2)
theta = (1.5, 1.0)
observations = [((0,), (4,), 1.0), ((2,), (1,), 0.5)]

rows = truncation_study(net, theta, observations, r_stop=10)

for idx in range(len(observations)):
    obs = observations[idx]
    print(f"\nobservation {obs[0][0]} -> {obs[1][0]} over dt={obs[2]}")
    print(f"  {'level':>5s} {'states':>7s} {'value':>12s} {'error':>10s}")
    for row in rows:
        if row["obs_index"] == idx:
            print(f"  {row['r']:5d} {row['states']:7d} "
                  f"{row['value']:12.9f} {row['error']:10.2e}")
