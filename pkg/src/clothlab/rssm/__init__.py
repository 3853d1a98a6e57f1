from .augment import augment_goal, augment_trajectory, transform_actions
from .loss import FilterCache, TrajectoryBatch, elbo_loss, overshoot_loss
from .model import GoalConditionedRSSM, LatentState, RSSMConfig
from .train import sample_chunk_batch, train, train_step

__all__ = [
    "GoalConditionedRSSM", "LatentState", "RSSMConfig",
    "TrajectoryBatch", "FilterCache", "elbo_loss", "overshoot_loss",
    "augment_goal", "augment_trajectory", "transform_actions",
    "sample_chunk_batch", "train", "train_step",
]
