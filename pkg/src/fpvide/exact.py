"""Closed-form solutions of the bundled example problems, as (lower, upper) callables of (x, t, r)."""

import numpy as np

EXACT = {
    "example1": (lambda x, t, r: (r - 1) * x * t,
                 lambda x, t, r: (1 - r) * x * t),
    "example2": (lambda x, t, r: (r + 1) * np.exp(x) * np.cos(t),
                 lambda x, t, r: (3 - r) * np.exp(x) * np.cos(t)),
    "example3": (lambda x, t, r: (1 + r) * (x * x + t),
                 lambda x, t, r: (3 - r) * (x * x + t)),
}
