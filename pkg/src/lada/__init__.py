"""Distributed averaging with lifted nonreversible Markov chains."""

from .clustering import (
    Clustering,
    build_induced_graph,
    distributed_clustering,
    run_centralized_grid,
    run_clada,
    sample_clustered,
    tessellation_clusters,
)
from .engine import (
    ConsensusRun,
    averaging_time,
    count_messages,
    run_pa1,
    run_pa2,
    worst_case_averaging_time,
)
from .lifting import (
    LiftedChain,
    build_baseline_chain,
    build_grid_chain,
    build_lada_chain,
    build_ladau_chain,
    stationary,
    validate_lifting,
)
from .metrics import axis_cut_conductance, fill_time, mixing_time, scaling_fit
from .topology import Network, classify_neighbors, make_grid, sample_geometric

__version__ = "0.1.0"
