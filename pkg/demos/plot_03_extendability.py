"""
Predicting for rows and columns added after training
====================================================

The model embeds a row from its ratings of the training columns, so a new
user can be scored without retraining. Ratings outside the training columns
are ignored, which is why observations in area IV never change a prediction.
"""

import numpy as np

from nmc import BranchConfig, SplitSpec, TrainConfig, build_model, make_split, synthetic_low_rank, train

data = synthetic_low_rank(60, 70, rank=3, density=0.5, seed=1)
split = make_split(data, SplitSpec(seed=1))
cfg = dict(fc_sizes=(64, 32, 32), summarization=((8, 8, 4),), dropout_p=0.3)
model = build_model(BranchConfig(split.m_I, **cfg), BranchConfig(split.n_I, **cfg), seed=0)
model, _ = train(model, data, split, TrainConfig(batch_size=64, max_epochs=30))

###############################################################################
# A row that was not visible during training (area II).
new_row = int(split.row_perm[-1])
col = int(split.col_perm[0])
print("unseen row", new_row, "-> area", "I II III IV".split()[split.area_of(new_row, col)])
print("prediction:", round(model.predict(data, split, new_row, col, exclude=split.heldout), 3))

###############################################################################
# Flip every observed area-IV rating; no prediction anywhere moves.
iv = np.flatnonzero(split.area == 3)
values = data.values.copy()
values[iv] = 6.0 - values[iv]
flipped = data.with_values(values)
rows = np.repeat(np.arange(data.n_rows), data.n_cols)
cols = np.tile(np.arange(data.n_cols), data.n_rows)
a = model.predict_entries(data, split, rows, cols, exclude=split.heldout)
b = model.predict_entries(flipped, split, rows, cols, exclude=split.heldout)
print(f"{len(iv)} area-IV ratings flipped, max change in predictions: {np.abs(a - b).max()}")
