"""Sequence labeling with a deep encoder feeding a linear-chain CRF."""

from .config import TrainConfig
from .core import (Dataset, FoldAssignment, LabelAlphabet, LabeledSequence, encode_onehot,
                   split_folds)
from .crf import (ChainPosteriors, CrfParams, emission_logits, forward_backward, grad_theta_hard,
                  grad_theta_soft, sequence_score, viterbi)
from .dataio import (SyntheticHmmSpec, gen_synthetic, load_generic, load_model, load_ocr,
                     save_model)
from .nn import EncoderWeights, TopLayer, backprop_frame, frame_loss, l1_subgrad, nn_forward
from .rbm import RbmLayer, cd1_step, greedy_pretrain, hidden_probs
from .trainer import (ModelState, TrainLog, cross_validate, evaluate, independent_pretrain,
                      objective_value, online_epoch, step_size, train)

__version__ = "0.1.0"
