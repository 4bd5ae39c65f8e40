"""Flow-guided warping network for curvilinear instrument segmentation in X-ray sequences."""
from .estimator import FWNetSegmenter
from .evaluation import dice, evaluate, benchmark_fps, render_overlay
from .labelgen import VesselnessLabeler, vesselness, adaptive_binarize, generate_raw_labels
from .model import FWNet, TrainConfig, train, infer_sequence, sample_pair, total_loss
from .synth import NoiseConfig, SynthConfig, corrupt_labels, generate_sequence
from .warp import FlowField, resize_flow, warp, warp_backward, warp_features

__version__ = "0.1.0"
