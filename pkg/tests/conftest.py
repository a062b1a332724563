"""Shared helpers for building random test fixtures."""

import numpy as np

from fuda import ArchitectureSpec, ModelParams

# Finite differences are only meaningful away from ReLU kinks; setups whose
# hidden pre-activations come closer to zero than this are redrawn.
KINK_MARGIN = 1e-3


def random_net_setup(rng, kind, max_tries: int = 200):
    """Random small net + batch + targets, at a generic (kink-free) point.

    Weights and biases are both drawn randomly (unlike training inits, which
    zero the biases) so that no pre-activation sits exactly on a ReLU kink.
    """
    from fuda.nn import _forward_cached

    for _ in range(max_tries):
        d = int(rng.integers(2, 6))
        widths = tuple(int(w) for w in rng.integers(2, 7, size=int(rng.integers(0, 3))))
        c = int(rng.integers(2, 5))
        arch = ArchitectureSpec(d, c, widths)
        layers = []
        sizes = arch.layer_widths
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            b = rng.standard_normal(fan_out) * 0.3
            layers.append((w, b))
        params = ModelParams(layers)
        n = int(rng.integers(1, 9))
        batch = rng.standard_normal((n, d))

        _, _, pre_acts = _forward_cached(params, batch)
        hidden = pre_acts[:-1]
        if hidden and min(np.abs(z).min() for z in hidden) < KINK_MARGIN:
            continue
        if kind == "ce":
            targets = rng.integers(0, c, size=n)
        else:
            raw = rng.random((n, c)) + 1e-3
            targets = raw / raw.sum(axis=1, keepdims=True)
        return params, batch, targets
    raise RuntimeError("could not draw a kink-free setup")
