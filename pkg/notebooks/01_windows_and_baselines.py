# %% [markdown]
# # Windows and baselines
#
# Build a small synthetic load dataset, cut it into forecasting windows for
# the three strategies and score the two closed-form baselines.

# %%
import numpy as np

from gridcast.calendar import FEATURE_NAMES, HolidayCalendar, build_feature_matrix
from gridcast.evaluation import score
from gridcast.ingest import prepare
from gridcast.models import ModelSpec, build_model
from gridcast.synthetic import make_synthetic_dataset
from gridcast.training import TrainConfig, run_strategy
from gridcast.windows import StrategySpec, count_samples, enumerate_samples

ds = make_synthetic_dataset(n_clients=6, n_days=90, seed=0)
print(ds.n_hours, "hours x", ds.n_clients, "clients")

# %% [markdown]
# Chronological 70/10/20 split. Standardization statistics come from the
# training rows only.

# %%
split, params = prepare(ds)
print("train/val/test rows:", split.train_end, split.val_end - split.train_end,
      ds.n_hours - split.val_end)
print("train mean per client:", np.round(split.dataset.values[:split.train_end].mean(0), 12) + 0.0)

# %%
F = build_feature_matrix(ds.timestamps, HolidayCalendar.for_region("Custom"))
print(dict(zip(FEATURE_NAMES, np.round(F[8], 3).tolist())))

# %% [markdown]
# One multivariate sample per origin, one univariate sample per
# (client, origin) for local and global.

# %%
for kind in ("multivariate", "local", "global"):
    spec = StrategySpec(kind, 168, 24)
    print(f"{kind:>12}: d_in={spec.input_size(ds.n_clients):3d}  d_out={spec.output_size(ds.n_clients):2d}"
          f"  train samples={count_samples(spec, 'train', split)}")

# %%
s = enumerate_samples(StrategySpec("global", 168, 24), "train", split, F)
enc, dec, tgt = s.batch([0, 1, 2])
print(enc.shape, dec.shape, tgt.shape)

# %% [markdown]
# Persistence repeats last week's load; the ridge baseline regresses the
# next h hours on lagged loads and the origin-hour calendar features.

# %%
for h in (24, 96):
    p = ModelSpec("persistence", "global", 168, h)
    print("persistence h=%d  MAE %.3f  MSE %.3f" % ((h,) + score(build_model(p), p.window, split, F)))
    lr = ModelSpec("linreg", "local", 336, h, n_clients=ds.n_clients)
    run = run_strategy(lr, split, F, TrainConfig())
    print("local linreg h=%d MAE %.3f  MSE %.3f" % ((h,) + score(run.models, lr.window, split, F)))
