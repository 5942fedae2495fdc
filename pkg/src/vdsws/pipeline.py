"""End-to-end orchestration: train, quantise, prune, encode, account."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .compress.quantize import quantize_gm, quantize_vd_baseline
from .compress.report import compress_quantized, dense_report
from .net import Network
from .trainer import (
    TrainSchedule,
    evaluate_accuracy,
    init_mixture_from_weights,
    pretrain_l2,
    train_phase1_vd,
    train_phase2_sws,
)

log = logging.getLogger(__name__)

LENET_300_100 = (784, 300, 100, 10)


@dataclass
class PipelineResult:
    pretrained: Network
    phase1: Network
    sws: Network
    prior: object
    qnet: object
    pruned: object
    encoded: list
    report: object
    pre_quant_accuracy: float


def compress_sws(net, prior, sizes, offset_bits=5, test=None):
    qnet = quantize_gm(net, prior)
    pruned, encoded, report = compress_quantized(qnet, sizes, offset_bits, test, "vd+sws")
    return qnet, pruned, encoded, report


def compress_vd_baseline(net, sizes, offset_bits=5, threshold=0.95, K=64, test=None):
    qnet = quantize_vd_baseline(net, threshold, K)
    pruned, encoded, report = compress_quantized(qnet, sizes, offset_bits, test, "vd")
    return qnet, pruned, encoded, report


def run_pipeline(train, test, schedule: TrainSchedule, sizes=LENET_300_100, offset_bits=5):
    """Pretrain -> VD warm-up -> VD+SWS -> compress. ``train``/``test`` are (x, y)."""
    net = Network.init(list(sizes), np.random.default_rng(schedule.seed))
    pretrained, w = pretrain_l2(net, train, schedule.weight_decay, schedule)
    log.info("pretrained test accuracy %.4f", evaluate_accuracy(pretrained, test))
    phase1 = train_phase1_vd(pretrained, train, schedule)
    log.info("phase 1 test accuracy %.4f", evaluate_accuracy(phase1, test))
    prior = init_mixture_from_weights(w, schedule.K, schedule.pi0)
    sws, prior = train_phase2_sws(phase1, train, prior, schedule)
    pre_acc = evaluate_accuracy(sws, test)
    log.info("phase 2 test accuracy %.4f", pre_acc)
    qnet, pruned, encoded, report = compress_sws(sws, prior, sizes, offset_bits, test)
    return PipelineResult(pretrained, phase1, sws, prior, qnet, pruned, encoded, report,
                          pre_acc)


def l2_report(pretrained, sizes, test=None):
    acc = None if test is None else evaluate_accuracy(pretrained, test)
    return dense_report(list(sizes), acc)


def run_vd_baseline(phase1, train, test, schedule: TrainSchedule, sizes=LENET_300_100,
                    offset_bits=5, threshold=0.95, K=64):
    """VD-only comparison with the same epoch budget as VD+SWS.

    The warm-up model keeps training with tau2 = 0 for ``phase2_epochs`` more
    epochs, then goes through thresholding and fixed EM clustering.
    """
    vd = train_phase1_vd(phase1, train, schedule, reset_log_sigma2=False,
                         epochs=schedule.phase2_epochs)
    qnet, pruned, encoded, report = compress_vd_baseline(vd, sizes, offset_bits, threshold,
                                                         K, test)
    return vd, report
