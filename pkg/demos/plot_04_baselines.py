"""
Index-tied baselines
====================

Mean, bias and matrix factorization models learn one parameter set per row
and column index. They do well in area I and fall back to the mean plus any
known offset in the other areas.
"""

from nmc import SplitSpec, bias_baseline, evaluate, make_split, mean_baseline, mf_train, synthetic_low_rank

data = synthetic_low_rank(100, 120, rank=3, density=0.4, seed=0)
split = make_split(data, SplitSpec(seed=0))
train_idx = split.train_mask

for name, predictor in (
    ("mean", mean_baseline(data, train_idx)),
    ("bias", bias_baseline(data, train_idx)),
    ("mf r=3", mf_train(data, train_idx, r=3, epochs=300)),
):
    print(name)
    print(evaluate(predictor, data, split).table())
    print()
