# %% [markdown]
# # Autodiff and neural models
#
# The neural families run on a small reverse-mode tape over numpy arrays.
# Here we check gradients by central differences and overfit a fixed batch.

# %%
import numpy as np

from gridcast import autodiff as ad
from gridcast.autodiff import Tensor, backward, grad_check
from gridcast.benchmarks import memorization_batch, memorize, tiny_transformer
from gridcast.checks import broken_relu, check_model, tiny_model_spec
from gridcast.models import ModelSpec, build_model

# %%
w = Tensor([1.0, -2.0], requires_grad=True)
print(backward(ad.sum(w * w))[id(w)])

# %%
rng = np.random.default_rng(0)
x = rng.normal(size=(4, 5))
print(grad_check(lambda t: ad.sum(ad.tanh(ad.matmul(t[0], t[1]))), [x, rng.normal(size=(5, 3))]))

# %% [markdown]
# A relu whose backward pass forgets the mask is caught.

# %%
print(grad_check(lambda t: ad.sum(broken_relu(t[0]) * 3.0), [x]))

# %%
for fam in ("mlp", "lstm", "transformer"):
    print(fam, check_model(tiny_model_spec(fam), seed=1))

# %%
mlp = build_model(ModelSpec("mlp", "global", 168, 24), 0)
print("MLP parameters:", mlp.n_parameters())

# %% [markdown]
# Ten windows, one batch, AdamW until the training MSE drops below 1e-3.

# %%
spec = tiny_transformer()
r = memorize(spec, memorization_batch(spec, 10), lr=1e-3)
print(r)
print("loss every 250 steps:", np.round(r.losses[::250], 4))
