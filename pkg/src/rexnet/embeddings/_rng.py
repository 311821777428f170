"""SplitMix64 generator usable from both Python and numba kernels.

State is a length-1 ``uint64`` array so kernels can advance it in place.
Reference: Steele, Lea & Flood, "Fast splittable pseudorandom number
generators" (OOPSLA 2014); constants as in Vigna's public-domain C code.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0


def new_state(seed: int) -> np.ndarray:
    return np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)


@njit(cache=True)
def next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def next_uniform(state):
    """Uniform double in [0, 1) from the top 53 bits."""
    return float(next_u64(state) >> _S11) * _INV_2_53
