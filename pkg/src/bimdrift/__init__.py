"""Drift correction for plane-based SLAM by matching detected planes to floorplan walls."""

from .bim import BimModel, WallSegment, load_bim, parse_bim, save_bim, split_walls
from .errors import (BimDriftError, CollinearInput, EmptyMatchSet, GeometryError, NonCoplanarInput, NonFiniteCost,
                     OutOfOrderKeyframe, ParseError, SingularCovariance, UnknownWallId, ValidationError,
                     WaypointOutsideScene)
from .estimation import EstimationConfig, EstimationResult, estimate_transform, initial_alignment
from .geometry import Plane, RigidTransform, compose, invert, plane_from_corners, transform_plane
from .matching import MatchConfig, MatchSet, mahalanobis_distance, match_planes
from .metrics import ComparisonReport, MetricsSample, compare_variants, evaluate_keyframe
from .session import KeyframeObservation, Session, SessionConfig, process_keyframe, read_log, write_log

__version__ = "0.1.0"
