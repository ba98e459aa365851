"""End-to-end applications: sparse NMF and regularized matrix completion."""
from .mcp import McpInstance, McpProblem, mcp_initial_point, mcp_run, palm_mcp, rmse
from .nmf import SparseNmfInstance, SparseNmfProblem, sparse_nmf_run
from .synth import low_rank_ratings, planted_nmf, synthesize_instances
