"""
Inference on a linear chain
===========================

Forward-backward and Viterbi on a tiny chain, checked against brute-force
enumeration of every labeling.
"""

import itertools

import numpy as np

from deepcrf.crf import CrfParams, forward_backward, sequence_score, viterbi
from deepcrf.nn import TopLayer

rng = np.random.default_rng(0)
K, T = 3, 5

# CRF parameters: transitions A, start/end scores pi and tau, label bias b.
# The top layer (W, c) is unused here because we feed emissions directly.
theta = CrfParams(rng.normal(size=(K, K)), rng.normal(size=K), rng.normal(size=K),
                  rng.normal(size=K), TopLayer(np.zeros((1, K)), np.zeros(K)))
E = rng.normal(size=(T, K))

# %%
# Partition function and marginals from the log-domain recursions.
post = forward_backward(E, theta)
print("log Z           ", post.log_Z)
print("frame marginals\n", post.gamma.round(3))

# %%
# The same quantities by enumerating all K**T labelings.
scores = {y: sequence_score(E, y, theta) for y in itertools.product(range(K), repeat=T)}
vals = np.array(list(scores.values()))
log_Z = vals.max() + np.log(np.exp(vals - vals.max()).sum())
print("enumerated log Z", log_Z)

# %%
# Viterbi returns the best labeling and its score; enumeration agrees.
y_best, s_best = viterbi(E, theta)
print("viterbi", y_best, s_best)
print("argmax ", max(scores, key=scores.get), max(scores.values()))

# %%
# Adding the same constant to every label's emission at a frame leaves the
# marginals and the decoded labeling unchanged.
shifted = forward_backward(E + rng.normal(size=(T, 1)), theta)
print("max marginal change under shift:", np.abs(shifted.gamma - post.gamma).max())
