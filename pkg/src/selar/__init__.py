"""Self-supervised auxiliary learning on heterogeneous graphs.

Meta-path prediction tasks help a primary task (link prediction or node
classification); a small weighting network, trained by one-step lookahead
meta-gradients, decides how much each auxiliary sample counts.
"""
from .bilevel import FitResult, PrimaryTask, Problem, Strategy, TrainConfig, Trainer, TrainState, fit
from .gnn import EncoderConfig
from .hetgraph import (
    HeteroGraph,
    MetaPathSpec,
    PairLabelSet,
    augment_with_hubs,
    build_pair_labels,
    compose_adjacency,
    enumerate_paths_bruteforce,
    load_kg_dataset,
    load_typed_graph,
    synth_hetero,
)
from .metrics import SplitSpec, auc, f1, split, weight_curve_dump

__version__ = "0.1.0"
