"""Tabletop object-existence prediction laboratory.

A geometric tabletop simulator with controlled occlusion, a recurrent
agent trained jointly with policy-gradient and supervised losses under a
four-stage curriculum, and an evaluation harness with scripted baselines
and a holdout-generalization protocol.
"""

from .catalog import Catalog, default_catalog, load_catalog, save_catalog
from .geometry import (
    Action,
    ObjectSpec,
    OcclusionLevel,
    PlacedObject,
    Point3,
    RingParams,
    SizeCategory,
    TableParams,
    Viewpoint,
    camera_pose,
    occlusion_level,
    visible_set,
)
from .scenegen import (
    DataLevel,
    Sample,
    SceneGenerator,
    SceneType,
    generate_sample,
    make_holdout,
)

__version__ = "0.1.0"
