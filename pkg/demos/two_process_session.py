"""A two-party session over loopback TCP, one party per thread.

Each party sees only its own columns. The wire carries only the setup
message, the noisy intermediate results and a final done message; this
script records that transcript and checks it. Run with
``python3 demos/two_process_session.py``. The CLI equivalent is::

    hdpvfl prepare --dataset breast --out /tmp/breast
    hdpvfl train --listen 127.0.0.1:7000 --passive-csv /tmp/breast/passive.csv --out wb.json &
    hdpvfl train --connect 127.0.0.1:7000 --active-csv /tmp/breast/active.csv --out wa.json
"""
from collections import Counter

import numpy as np

from hdpvfl.data import benchmark_pair
from hdpvfl.glm import logistic, make_penalty
from hdpvfl.privacy import Hyperparams
from hdpvfl.protocol import run_training
from hdpvfl.transport import RecordingChannel, tcp_pair

pair = benchmark_pair("breast")
h = Hyperparams(epsilon=1.0, learning_rate=0.1, batch_size=128, epochs=3, seed=7)
loss, penalty = logistic(), make_penalty("l2", 0.001)

# %% Train over TCP with every sent message recorded.
active_end, passive_end, transcript = RecordingChannel.wrap_pair(*tcp_pair(timeout=30))
over_tcp = run_training(pair.active.X, pair.active.y, pair.passive.X, h, loss, penalty,
                        (active_end, passive_end))
print("messages on the wire:", dict(Counter(type(m).__name__ for _, m in transcript)))

# %% The same seed in process gives bit-identical weights.
in_process = run_training(pair.active.X, pair.active.y, pair.passive.X, h, loss, penalty)
print("identical to in-process run:",
      np.array_equal(over_tcp.w_a, in_process.w_a) and np.array_equal(over_tcp.w_b, in_process.w_b))

# %% Weight norms stay within the clip bound k for each party.
print(f"|w_a|={np.linalg.norm(over_tcp.w_a):.4f}  |w_b|={np.linalg.norm(over_tcp.w_b):.4f}  k={h.clip_norm}")
scores = over_tcp.decision_function(pair.active.X, pair.passive.X)
print(f"training accuracy: {np.mean(np.sign(scores) == pair.active.y):.3f}")
