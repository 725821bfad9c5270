from .base import EpisodeStep, ExportUnavailableError, Featurizer, MDPEnv, encode_observation
from .grid import GridObservation, GridTask, GridTaskConfig, build_grid_task
from .rooms import HALLWAY, RoomsObservation, RoomsWorld, RoomsWorldConfig, build_rooms_world

__all__ = [
    "EpisodeStep",
    "ExportUnavailableError",
    "Featurizer",
    "GridObservation",
    "GridTask",
    "GridTaskConfig",
    "HALLWAY",
    "MDPEnv",
    "RoomsObservation",
    "RoomsWorld",
    "RoomsWorldConfig",
    "build_grid_task",
    "build_rooms_world",
    "encode_observation",
]
