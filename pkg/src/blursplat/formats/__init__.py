# Readers and writers for the on-disk formats of scenes, trajectories, images,
# events and point clouds.

from .scene_file import SceneFormatError, load_scene, save_scene
from .tum import read_tum, write_tum
