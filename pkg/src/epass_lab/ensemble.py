"""Combining the outputs of several projector heads into one embedding."""
from enum import Enum

from . import numcore as nc
from .errors import DimensionMismatch


class EnsembleStrategy(str, Enum):
    MEAN = "mean"
    SUM = "sum"
    CONCAT = "concat"

    def output_dim(self, proj_dim, num_projectors):
        return proj_dim * num_projectors if self is EnsembleStrategy.CONCAT else proj_dim


def combine(embeddings, strategy=EnsembleStrategy.MEAN):
    """Aggregate raw projector embeddings, then L2-normalize.

    ``embeddings`` is a list of P vectors (or P equally shaped row batches).
    Works on plain arrays and on tape nodes.
    """
    strategy = EnsembleStrategy(strategy)
    if not embeddings:
        raise DimensionMismatch("need at least one embedding")
    shapes = {nc.value(e).shape for e in embeddings}
    if len(shapes) != 1:
        raise DimensionMismatch(f"embeddings disagree in shape: {sorted(shapes)}")
    if strategy is EnsembleStrategy.CONCAT:
        agg = nc.concat(embeddings, axis=-1)
    else:
        # norm(sum / P) == norm(sum): the 1/P of the mean cancels in the
        # normalization, and skipping it avoids a second rounding step
        agg = nc.stack_sum(embeddings)
    return nc.l2_normalize(agg)
