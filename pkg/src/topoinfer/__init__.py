"""Network topology inference for consensus dynamics driven by latent inputs."""
from .dynamics import ObservationSet, constant_input, make_time_varying_input, simulate, zero_input
from .errors import TopoInferError
from .graph import WeightedDigraph, interaction_matrix, random_connected_digraph
from .ietia import IeTiaConfig, ie_tia
from .metrics import evaluate, magnitude_error, structure_error
from .totia import InferenceResult, ToTiaConfig, baseline_a1, baseline_a2, baseline_a3, to_tia

__version__ = "0.1.0"
