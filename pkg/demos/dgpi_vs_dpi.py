"""
How many network updates each iteration scheme needs
====================================================

Both schemes start from identical weights and batches on the linear
aircraft; the count is network updates until the policy and value errors
both drop under 5%. Runs for a few minutes::

    PYTHONPATH=src python3 demos/dgpi_vs_dpi.py
"""

from dgpi.solvers import TrainConfig, train

print(f"{'seed':>4} {'dgpi':>7} {'dpi':>7}")
for seed in range(5):
    counts = []
    for algorithm in ("dgpi", "dpi"):
        config = TrainConfig.for_model("aircraft", algorithm=algorithm, seed=seed,
                                       target_error=0.05, eval_every=50, cost_horizon=0)
        counts.append(train(config).updates_to_target)
    print(f"{seed:>4} " + " ".join(f"{c if c is not None else 'miss':>7}" for c in counts))
