"""Protocols under a lossy channel: who learns an error-correcting code?

Ten agents, numbers in {0, 1}, 3-bit messages. At evaluation time each
broadcast suffers a single random bit flip with probability 0.5, so a
useful protocol must keep the two codewords at Hamming distance >= 3.
This is a shortened run; the full comparison trains 40k iterations.
"""

import numpy as np

from discomm import (
    DiscretizerConfig,
    DiscretizerKind,
    MatrixConfig,
    MatrixTrainer,
    TrainerConfig,
)

env = MatrixConfig(
    n_agents=10,
    n_numbers=2,
    message_bits=3,
    error_probability=0.5,
    max_bit_flips=1,
)


def show(counts, label):
    print(f"  {label}: rows = input number, columns = 3-bit message 000..111")
    for number, row in enumerate(counts):
        cells = " ".join(f"{c:4d}" for c in row)
        print(f"    {number}: {cells}")


for kind in (DiscretizerKind.ST_DRU, DiscretizerKind.STE):
    trainer = MatrixTrainer(
        env,
        DiscretizerConfig(kind=kind, sigma_g=2.0),
        TrainerConfig(iterations=4000, seed=0, learning_rate=1e-4, eval_every=1000),
    )
    records = trainer.run()
    pre, post = trainer.protocol_matrix(samples=300)
    print(f"--- {kind.value}: eval return {records[-1].mean_eval_return:.2f} / 10 ---")
    show(pre, "before errors")
    show(post, "after errors ")
    overlap = set(np.nonzero(post[0])[0]) & set(np.nonzero(post[1])[0])
    print(f"  post-channel overlap between inputs: {sorted(overlap) or 'none'}\n")
