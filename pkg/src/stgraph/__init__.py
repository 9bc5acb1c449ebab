"""Superpixel supergraphs for image time series.

Frames become region adjacency graphs over SLIC superpixels; a sequence
of frames becomes one block-adjacency supergraph; a self-attention
encoder (or a fixed/random baseline) mends the missing temporal edges;
a GNN with a softmax readout classifies the sequence; spectral
diagnostics quantify the connectivity change.
"""

from .errors import ConfigError, ContractError, DataError, NumericError
from .tensor import Tensor, backward
from .optim import Adam
from .segmentation import FeatureExtractor, Frame, Segmentation, slic, region_adjacency, node_features
from .supergraph import SuperGraph, TimestepGraph, assemble, laplacian, normalize_node_count
from .mending import (MendedAdjacency, EncoderParams, encode, fixed_temporal,
                      identity_mending, init_encoder_params, mask_to_temporal, random_mending)
from .gnn import GATNetwork, GCNNetwork, ReadoutParams, gat_layer, gcn_layer, readout
from .training import (LossConfig, MendingConfig, Sample, SupergraphClassifier,
                       TrainConfig, build_classifier, evaluate, loss, prepare_samples, train)
from .diagnostics import (DiagnosticsReport, connected_components, count_zero_eigenvalues,
                          delta_sparsity, dirichlet, fiedler, sparsity, spectrum)

__all__ = [name for name in dir() if not name.startswith("_")]
