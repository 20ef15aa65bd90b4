"""Entropy-vs-error binning, the class-mixture factorisation, and posterior sharpening.

Run:  python demos/03_diagnostics.py
"""

import numpy as np

from scenegraph3d.evaluation import (
    GenerativeWorld,
    entropy,
    entropy_error_histogram,
    entropy_noise_dumps,
    mixture,
    sharpen,
)

# Uncertain object labels make predicate mistakes more likely in these dumps.
analysis = entropy_error_histogram(entropy_noise_dumps(seed=0), n_bins=5)
print("bin   range            count  error rate")
for row in analysis.rows():
    print(f"{row['bin']:3d}   [{row['lo']:.2f}, {row['hi']:.2f}]   {row['count']:5d}  {row['error_rate']:.3f}")

# When classes are independent and predicates depend on classes alone,
# mixing the table by the two posteriors reproduces the exact predicate posterior.
worlds = [GenerativeWorld.random(seed) for seed in range(20)]
print(f"\nfactorisation gap over 20 random worlds: {max(w.max_deviation() for w in worlds):.1e}")

# Sharpening usually lowers mixture entropy, but not always: it depends on
# which table entry the posteriors concentrate on.
table = np.array(
    [
        [[0.9, 0.05, 0.05], [0.6, 0.3, 0.1]],
        [[0.2, 0.7, 0.1], [0.34, 0.33, 0.33]],
    ]
)
for name, pi, pj in [("confident entry", (0.6, 0.4), (0.55, 0.45)), ("vague entry", (0.3, 0.7), (0.4, 0.6))]:
    hs = [entropy(mixture(table, sharpen(pi, g), sharpen(pj, g))) for g in (1, 2, 4, 8, 16)]
    print(f"{name:16s}", " ".join(f"{h:.3f}" for h in hs))
