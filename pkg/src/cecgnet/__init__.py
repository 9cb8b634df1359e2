"""Encoder-decoder denoising of multichannel capacitive ECG, with rhythm evaluation."""

__version__ = "0.1.0"

from .data import Record, SynthConfig, WindowPair, load_records, make_windows, split_by_file, synth_generate
from .loss import LossConfig, LossReport, frequency_loss, signal_loss, smooth_l1, total_loss
from .network import NetworkConfig, Network, build_network, forward, load_checkpoint, predict, save_checkpoint
from .qrs import hamilton_detect, hrv_report, lf_hf_ratio, rpeak_xcorr, time_domain_hrv
from .trainer import TrainConfig, evaluate_denoising, train

__all__ = [
    "Record", "SynthConfig", "WindowPair", "load_records", "make_windows", "split_by_file", "synth_generate",
    "LossConfig", "LossReport", "frequency_loss", "signal_loss", "smooth_l1", "total_loss",
    "NetworkConfig", "Network", "build_network", "forward", "load_checkpoint", "predict", "save_checkpoint",
    "hamilton_detect", "hrv_report", "lf_hf_ratio", "rpeak_xcorr", "time_domain_hrv",
    "TrainConfig", "evaluate_denoising", "train",
]
