"""Diversity-enhanced ensembles of incremental Skip-Gram embeddings for dynamic networks."""
from .dyngraph import (DeltaView, DynamicNetwork, EdgeStream, Snapshot, degree_of_changes, delta, ingest_edge_stream,
                       largest_connected_component, slice_stream)
from .ensemble import (CombinedEmbedding, EnsembleConfig, EnsembleModel, assign_dims, assign_restarts, combine,
                       embed_network, rescale_minmax_columns, step_offline, step_online, variant_config)
from .sampler import WalkConfig, build_alias_tables, generate_walks, rwr_walk, walk_statistics
from .sgns import LearnerState, TrainConfig, extract_pairs, init_incremental, init_offline, sgd_train
from .synthgen import BAConfig, ba_dynamic, ba_generate

__version__ = "0.1.0"
