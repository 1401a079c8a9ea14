"""Desk-scale single-shot detector."""

from .anchors import (AnchorConfig, MatchAssignment, build_targets, decode_box, decode_boxes, encode_box,
                      encode_boxes, generate_anchors, match_anchors)
from .checkpoint import load_model, save_model
from .inference import nms, predict, predict_batch
from .loss import LossBreakdown, cross_entropy, multibox_loss, smooth_l1, softmax
from .network import Architecture, ModelState, forward, forward_batch, init_model
from .training import TrainConfig, fine_tune, fine_tune_config, loss_and_gradient, loss_gradient, train
