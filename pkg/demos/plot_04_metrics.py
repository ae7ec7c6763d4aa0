"""
Metrics by hand
===============

SSIM, AUC and the cp/pp pair are small enough to check against hand
calculations. This is how the test suite validates them.
"""

# %%
# SSIM is 1 for identical images, symmetric, and drops with noise.
import numpy as np

from cookbench.ssim import SsimConfig, ssim

rng = np.random.default_rng(0)
a = rng.uniform(0.2, 0.8, (16, 16))
for sigma in (0.0, 0.02, 0.1, 0.3):
    b = np.clip(a + rng.normal(0, sigma, a.shape), 0, 1)
    print(f"sigma {sigma:4}: ssim {ssim(a, b):.4f}  swapped {ssim(b, a):.4f}")
print("5x5 window", ssim(a, np.clip(a + 0.05, 0, 1), SsimConfig(window=5)))

# %%
# Binary AUC is the fraction of positive/negative pairs ranked correctly,
# with ties counting one half.
from cookbench.evalkit import auc_binary, auc_multiclass

scores = [0.9, 0.8, 0.8, 0.3, 0.2]
labels = [1, 0, 1, 0, 0]
pairs = [(1.0 if p > n else 0.5 if p == n else 0.0) for p, lp in zip(scores, labels) if lp for n, ln in zip(scores, labels) if not ln]
print("pairwise", sum(pairs) / len(pairs), "library", auc_binary(scores, labels))

# %%
# With more than two classes the score is the mean one-vs-rest AUC.
probs = rng.dirichlet(np.ones(3), 30)
print("macro one-vs-rest AUC", auc_multiclass(probs, rng.integers(0, 3, 30)))

# %%
# cp and pp come from three accuracies: the surrogate on raw data, the
# protected model on raw data and the protected model on cooked data.
from cookbench.evalkit import compute_cp_pp

cp, pp = compute_cp_pp(0.686, 0.744, 0.745)
print(f"cp {cp:+.1f}  pp {pp:+.1f}")
