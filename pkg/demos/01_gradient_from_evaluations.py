"""How many function values does it take to pin down a gradient?

A Gaussian process prior turns a handful of evaluations near a point into a
posterior over the gradient there.  The trace of that posterior covariance
measures how uncertain the estimate still is.  This script watches the
trace shrink as the acquisition routine adds points, first without
observation noise and then with it.

    python demos/01_gradient_from_evaluations.py
"""

import numpy as np

from dpgibo import AcquisitionConfig, EvaluationSet, SyntheticGPDraw, posterior_gradient_means, rbf, select_minimal_batch
from dpgibo.acquisition import posterior_trace

rng = np.random.default_rng(0)
d = 3
k = rbf(1.0)
theta = np.array([0.2, -0.4, 0.1])

# %% A test function with a known gradient.
f = SyntheticGPDraw.random(k, d, n_centers=8, rng=rng)
print("true gradient      ", np.round(f.gradient(theta), 4))

# %% Noiseless data: d + 1 well-placed points are enough.
prop = select_minimal_batch(k, np.zeros((0, d)), theta, AcquisitionConfig(epsilon=1e-6), 0.0, rng)
ev = EvaluationSet(d, 1)
ev.add(prop.points, f(prop.points)[None, :])
print(f"noiseless: {prop.batch_size_used} points, trace {prop.achieved_trace:.2e}")
print("estimated gradient ", np.round(posterior_gradient_means(k, ev, theta)[0], 4))

# %% Noisy data: the trace now falls like 1 / sqrt(repetitions), never to zero.
sigma2 = 0.01
for eps in (1.0, 0.3, 0.1):
    prop = select_minimal_batch(k, np.zeros((0, d)), theta, AcquisitionConfig(epsilon=eps), sigma2, rng, warn=False)
    print(f"sigma^2={sigma2}: epsilon={eps:<4} -> {prop.batch_size_used:2d} points, trace {prop.achieved_trace:.3f}"
          + ("  (cap reached)" if prop.hit_cap else ""))

# %% The trace is a property of the design alone; it never looks at the data.
Z = prop.points
print("trace recomputed from the design:", round(posterior_trace(k, Z, theta, sigma2), 6))
