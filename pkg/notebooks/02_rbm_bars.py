"""
RBM pretraining on bars
=======================

CD-1 on an 8-pixel "bars" dataset with two complementary patterns, then
greedy stacking into an encoder.
"""

import numpy as np

from deepcrf.nn import encode
from deepcrf.rbm import greedy_pretrain, hidden_probs, train_rbm, visible_probs

bar = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
data = np.vstack([np.tile(bar, (10, 1)), np.tile(1 - bar, (10, 1))])

# %%
# Mean squared reconstruction error per epoch. With lr = 0.1 the error
# falls slowly; a larger rate and longer schedule learn the patterns outright.
_, slow = train_rbm(data, n_hidden=4, epochs=50, lr=0.1, batch_size=10, seed=0)
print("lr 0.1: epoch 1 error %.4f, epoch 50 error %.4f" % (slow[0], slow[-1]))
layer, errors = train_rbm(data, n_hidden=4, epochs=500, lr=0.5, batch_size=10, seed=0)
print("lr 0.5: epoch 1 error %.4f, epoch 500 error %.2e" % (errors[0], errors[-1]))

# %%
# Mean-field reconstruction of the two patterns.
for v in (bar, 1 - bar):
    print(v.astype(int), "->", visible_probs(hidden_probs(v, layer), layer).round(2))

# %%
# Two stacked RBMs exported as an encoder. The two-unit code separates the
# patterns.
omega, report = greedy_pretrain(data, [8, 4, 2], epochs=500, lr=0.5, batch=10, seed=0)
print("layer shapes", [W.shape for W in omega.layers])
print("codes\n", encode(data[[0, -1]], omega)[-1].round(3))
