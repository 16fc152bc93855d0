from .convlstm import ConvLSTMCell
from .gridgen import (
    GridGenConfig,
    GridGenerator,
    build_scene_encoder,
    build_trajectory_encoder,
    decode_grids,
    desk_config,
    forward_probabilities,
    grid_loss,
    pretrain_scene_encoder,
)
from .sampler import (
    SamplerConfig,
    TrajectorySampler,
    TrajectorySet,
    desk_sampler_config,
    sample_trajectories,
    to_world,
    variety_loss,
)
