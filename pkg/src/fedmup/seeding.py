"""One master seed fans out to every random stream in an experiment.

A sub-seed is the first 64-bit word of ``SeedSequence([master, stream, *counters])``:

    split      stream 1               train/test shuffle
    partition  stream 2               client shard assignment
    init       stream 3               initial global weights
    selection  stream 4, round        participant sampling
    train      stream 5, round, id    per-client mini-batch shuffling
    generator  stream 6               synthetic dataset (when not given explicitly)
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "split": 1,
    "partition": 2,
    "init": 3,
    "selection": 4,
    "train": 5,
    "generator": 6,
}


def derive_seed(master: int, stream: str | int, *counters: int) -> int:
    if master < 0 or any(c < 0 for c in counters):
        raise ValueError("seeds and counters must be non-negative")
    code = STREAMS[stream] if isinstance(stream, str) else int(stream)
    ss = np.random.SeedSequence([int(master), code, *map(int, counters)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
