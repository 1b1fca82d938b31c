from .episodes import Episode, Phase, sample_episode
from .scenes import ClassInfo, Scene, SceneSource
from .shape_world import ShapeWorld, build_world

__all__ = ['ClassInfo', 'Episode', 'Phase', 'Scene', 'SceneSource', 'ShapeWorld', 'build_world', 'sample_episode']
