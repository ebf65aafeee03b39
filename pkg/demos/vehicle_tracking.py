"""
Path tracking with saturating tires from a random initial policy
================================================================

A randomly initialised policy drives the vehicle off the road, so policy
evaluation has nothing finite to evaluate. The generalized iteration first
runs a joint warm-up on both networks and only then alternates critic and
actor steps. Plain policy iteration is run from the same weights for
comparison. Expect a couple of minutes::

    PYTHONPATH=src python3 demos/vehicle_tracking.py
"""

import numpy as np

from dgpi.oracles import rollout, settle_time
from dgpi.solvers import TrainConfig, train

UPDATES = 10000

for algorithm in ("dgpi", "dpi"):
    config = TrainConfig.for_model("vehicle", algorithm=algorithm, seed=0,
                                   max_updates=UPDATES, eval_every=1000,
                                   cost_horizon=5.0, cost_dt=0.02)
    result = train(config)
    abs_H = np.asarray(result.state.batch_abs_H)
    post = abs_H[result.warmup_exit or 0:]
    print(f"\n{algorithm}: warm-up exit {result.warmup_exit}, "
          f"batch mean|H| peak {post.max():.3g} -> last-100 mean {post[-100:].mean():.3g}")
    print("  finite-horizon cost C per evaluation:",
          " ".join(f"{r.C:.0f}" for r in result.rows if r.C is not None))

    model = result.state.model
    rng = np.random.default_rng(1)
    starts = model.x_e + 0.5 * (model.sample_states(5, rng) - model.x_e)
    traj = rollout(model, result.state.policy, starts, 20.0, 0.01)
    print("  1% settle times [s]:", np.round(settle_time(model, traj), 2))
    print("  final states:\n", np.round(traj.x[-1], 3))
