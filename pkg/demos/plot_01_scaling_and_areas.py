"""
Rating scaling and the four-area split
======================================

Ratings live in [alpha, beta] but the model predicts a cosine in [-1, 1].
This script shows the mapping between the two and how entries are assigned
to the four areas that measure extendability.
"""

import numpy as np

from nmc import SplitSpec, make_split, scale, synthetic_low_rank, unscale

# The midpoint of the rating range maps to 0 and the bounds to -1 and 1.
for v in (1, 2, 3, 4, 5):
    print(f"rating {v} -> {scale(v):+.2f} -> {unscale(scale(v)):.1f}")

###############################################################################
# A seeded low-rank matrix with 40% of its cells observed.
data = synthetic_low_rank(100, 120, rank=3, density=0.4, seed=0)
print(data.n_rows, "x", data.n_cols, "with", data.nnz, "ratings")

###############################################################################
# 80% of rows and columns are visible during training. Area I is their
# intersection; II holds unseen rows, III unseen columns and IV both.
split = make_split(data, SplitSpec(seed=0))
print(f"n_I={split.n_I}, m_I={split.m_I}")
for label, (total, observed, heldout) in split.counts().items():
    print(f"area {label:<3} total={total:5d} observed={observed:5d} held out={heldout:4d}")

###############################################################################
# Only observed area-I entries are used as training targets.
print("training targets:", int(np.count_nonzero(split.train_mask)))
