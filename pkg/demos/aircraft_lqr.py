"""
Learning the LQR optimum of a linear aircraft
=============================================

The linear plant has a closed-form answer, so a trained value network and
policy can be scored against it exactly. Run with::

    PYTHONPATH=src python3 demos/aircraft_lqr.py
"""

import numpy as np

from dgpi.dynamics import Aircraft
from dgpi.oracles import LqrProblem, rollout, solve_care
from dgpi.solvers import TrainConfig, train

# the exact answer first: Kleinman iteration on the Riccati equation
plant = Aircraft()
exact = solve_care(LqrProblem(plant.A, plant.B, plant.Q, plant.R))
print("P =\n", np.round(exact.P, 4))
print("optimal feedback u = -K x, K =", np.round(exact.K, 4))

# train from random weights until both normalised errors fall below 5%
config = TrainConfig.for_model("aircraft", seed=0, target_error=0.05, eval_every=50,
                               cost_horizon=0)
result = train(config)
print(f"\nwarm-up left after {result.warmup_exit} updates")
print(f"target reached after {result.updates_to_target} updates")
for row in result.rows[:: max(1, len(result.rows) // 8)]:
    print(f"  iter {row.iter:5d}  {row.phase:6s}  mean|H| {row.mean_abs_H:.4f}"
          f"  e_pi {row.e_pi_abs:.4f}  e_V {row.e_V_abs:.4f}")

# learned and exact closed loops from the same start
x0 = np.array([1.0, -1.0, 0.5])
learned = rollout(plant, result.state.policy, x0, 20.0, 0.01)
optimal = rollout(plant, lambda x: -(exact.K @ x), x0, 20.0, 0.01)
print(f"\ncost from {x0}: learned {float(learned.cost):.4f}, optimal {float(optimal.cost):.4f}"
      f", x'Px {float(x0 @ exact.P @ x0):.4f}")
