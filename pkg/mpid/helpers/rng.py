import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(value):
    """
    SplitMix64 finalizer. Bijective on 64-bit integers.

    Parameters
    ----------
    value: int
        Any integer, reduced modulo 2**64.

    Returns
    -------
    int
        Mixed 64-bit value.
    """
    z = (value + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_trial_seed(seed, trial_id):
    """
    Per-trial seed: splitmix64(seed XOR golden * (trial_id + 1)).

    Depends only on (seed, trial_id), so serial and parallel runs draw the
    same streams regardless of scheduling order.
    """
    if trial_id < 0:
        raise ValueError("trial_id must be nonnegative.")
    return splitmix64((int(seed) ^ ((_GOLDEN * (trial_id + 1)) & _MASK64)) & _MASK64)


def make_rng(seed):
    """
    Generator on the PCG64DXSM bit generator for a 64-bit seed.
    """
    return np.random.Generator(np.random.PCG64DXSM(int(seed) & _MASK64))
