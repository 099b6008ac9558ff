"""Executable edit trajectories for discrete sequence refinement.

Shortest edit scripts, script parsing and execution, consistency-gated
rewards, group-relative policy objectives, evaluation metrics and an
Edit Flows loss and sampler.
"""

__version__ = "0.1.0"

from .align import edit_distance, shortest_edit_script
from .script import EditOp, EditScript, OpKind, execute, parse_script, render_script
from .seq import AlphabetKind, TokenSequence, detokenize, tokenize
from .trace import Trajectory, parse_completion, render_completion, verify_consistency

__all__ = [
    "AlphabetKind", "EditOp", "EditScript", "OpKind", "TokenSequence", "Trajectory",
    "detokenize", "edit_distance", "execute", "parse_completion", "parse_script",
    "render_completion", "render_script", "shortest_edit_script", "tokenize",
    "verify_consistency",
]
