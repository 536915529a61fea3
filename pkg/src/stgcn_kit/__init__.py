"""ST-GCN toolkit with a per-joint vertex feature encoder and dilated hierarchical temporal blocks."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SkeletonSequence, make_synthetic, parse_skl, read_skl, serialize_skl, synth_generate, write_skl
from .dhtcn import DhtcnParams, dhtcn_forward, dhtcn_init, receptive_field
from .graph import SkeletonGraph, build_adjacency, get_template, normalize_adjacency, sgcn_forward
from .gvfe import GvfeParams, gvfe_forward, gvfe_init
from .network import Model, ModelConfig, build_model, count_parameters, model_forward
from .tensor import ParameterStore, batch_norm, conv_temporal, grad_check, relu, softmax_cross_entropy
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"
