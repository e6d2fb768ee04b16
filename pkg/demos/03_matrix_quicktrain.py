"""A short Matrix-environment training run, STE next to DRU.

Three agents each get a number in [0, 4), broadcast a 2-bit message, then
every agent guesses whether all numbers were equal. The team reward is
the count of correct agents (max 3). Watch STE move immediately while
DRU first has to out-shout its own regularization noise.

Takes ~15 seconds. The full experiments run 70k iterations; see README.
"""

from discomm import (
    DiscretizerConfig,
    DiscretizerKind,
    MatrixConfig,
    MatrixTrainer,
    TrainerConfig,
)

env = MatrixConfig(n_agents=3, n_numbers=4, message_bits=2)

for kind in (DiscretizerKind.STE, DiscretizerKind.DRU):
    trainer = MatrixTrainer(
        env,
        DiscretizerConfig(kind=kind),
        TrainerConfig(iterations=3000, seed=0, eval_every=500, eval_episodes=100),
    )
    records = trainer.run()
    print(f"--- {kind.value} ---")
    for r in records:
        bar = "#" * round(20 * r.mean_eval_return / 3)
        print(
            f"iter {r.iteration:5d}  return {r.mean_eval_return:5.2f}/3  "
            f"amplitude {r.comm_amplitude:5.2f}  {bar}"
        )
    print()
