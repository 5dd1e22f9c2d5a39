"""Bernoulli and self-destructive site percolation on finite truncations of
non-amenable graphs, with exact small-instance oracles."""

from .errors import (
    BracketError,
    InvarianceError,
    RegimeError,
    ResourceLimitError,
    UsageError,
)
from .graphs import (
    FiniteGraph,
    IsoProfile,
    build_regular_tree,
    build_rooted_tree,
    build_torus,
    build_tree_cycle,
    isoperimetric_profile,
    make_graph,
)
from .fields import Configuration, LabelField, Seed, config_ops, level_set, sample_field
from .clusters import (
    ClusterLabeling,
    count_infinite,
    infinite_proxy,
    label_clusters,
    sweep_curve,
)

__version__ = "0.1.0"
