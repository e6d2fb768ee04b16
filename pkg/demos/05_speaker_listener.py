"""Speaker-listener: one agent knows the target, the other has the legs.

The speaker sees which of three landmarks is the goal and broadcasts a
2-bit message; the listener navigates from per-step Q-values over
{noop, up, down, left, right}, rewarded with minus its distance to the
goal each step. Two scripted baselines bracket what communication is
worth: a listener that ignores messages and heads for the landmark
centroid, and an oracle told the target directly.

Short run (~1 minute); the property experiments train longer.
"""

import numpy as np

from discomm import (
    DiscretizerConfig,
    DiscretizerKind,
    SpeakerListenerConfig,
    SpeakerListenerTrainer,
    TrainerConfig,
)
from discomm.envs import sl_ablated_episode, sl_oracle_episode

env = SpeakerListenerConfig()

baseline_rng = lambda i: np.random.default_rng(10_000 + i)
ablated = np.mean([sl_ablated_episode(env, baseline_rng(i)) for i in range(300)])
oracle = np.mean([sl_oracle_episode(env, baseline_rng(i)) for i in range(300)])
print(f"centroid listener (no messages): {ablated:7.2f}")
print(f"oracle listener  (told target) : {oracle:7.2f}\n")

trainer = SpeakerListenerTrainer(
    env,
    DiscretizerConfig(kind=DiscretizerKind.DRU),
    TrainerConfig(
        iterations=1500, seed=0, gamma=0.95, eval_every=300, eval_episodes=20
    ),
)
for r in trainer.run():
    closed = (r.mean_eval_return - ablated) / (oracle - ablated)
    print(
        f"iter {r.iteration:5d}  return {r.mean_eval_return:7.2f}  "
        f"gap closed {100 * closed:5.1f}%"
    )
