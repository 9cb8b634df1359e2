"""
Training a small denoiser
=========================

Builds a four-level network, trains it for a few epochs on synthetic
records with the joint signal + spectrum loss, and scores held-out windows
against the raw capacitive channels.  Takes a couple of minutes on one core.
"""

import logging

from cecgnet.data import SynthConfig, make_windows, split_by_file, stack_windows, synth_generate
from cecgnet.loss import LossConfig
from cecgnet.network import NetworkConfig, build_network
from cecgnet.trainer import TrainConfig, denoising_metrics, evaluate_denoising, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

records = [synth_generate(SynthConfig(duration_s=60.0, seed=100 + i)) for i in range(8)]
train_recs, test_recs = split_by_file(records, 6, 2, seed=0)
train_windows, test_windows = make_windows(train_recs), make_windows(test_recs)
print(f"{len(train_windows)} training windows, {len(test_windows)} test windows")

net = build_network(NetworkConfig(levels=4, base_filters=4))
print(f"{net.parameter_count()} parameters, encoder ladder {net.config.ladder()}")

cfg = TrainConfig(epochs=10, batch_size=16, loss=LossConfig(alpha=1.0, beta=1.0))
net, log = train(train_windows, net, cfg)

###############################################################################
# Held-out comparison: the network output against each raw channel, after
# min-max normalization of every window.

X, Y = stack_windows(test_windows)
print(evaluate_denoising(net, (X, Y)).table("network"))
for ch in range(3):
    print(denoising_metrics(X[:, ch], Y[:, 0]).table(f"raw ch{ch + 1}").splitlines()[1])
