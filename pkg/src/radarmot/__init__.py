"""Moving-object detection and tracking for 4D automotive radar point clouds.

The pipeline runs per frame: a point feature encoder and inter-frame cost
volume, backward scene-flow estimation with a recurrent global state,
motion segmentation plus density clustering into class-agnostic objects,
and differentiable association of clusters to existing tracks.
"""

__version__ = "0.1.0"
