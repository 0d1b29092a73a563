"""Counter-based random streams keyed by (seed, phase, submodel, repetition).

Each repetition owns an independent Philox stream, so results do not
depend on how repetitions are scheduled across workers.
"""

from __future__ import annotations

import numpy as np

# Phase tags keep the simulation passes of one run statistically independent.
PHASE_N0 = 0
PHASE_N1 = 1
PHASE_VERIFY = 2
PHASE_BASELINE = 3
PHASE_PROXY = 4


def stream(seed: int, phase: int, submodel: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(phase), int(submodel), int(rep)))
    return np.random.Generator(np.random.Philox(ss))


def provenance(seed: int, phase: int) -> dict:
    return {"seed": int(seed), "phase": int(phase), "bitgen": "Philox4x64", "keying": "SeedSequence(seed, (phase, submodel, rep))"}
