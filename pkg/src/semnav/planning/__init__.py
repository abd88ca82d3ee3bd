"""Route finding and local trajectory generation.

Global routing prefers the ego's own past trail and falls back to an
offline road graph. Local planning runs over a timestamped occupancy
grid: a sampling planner finds an initial collision-free polyline and a
spline pass smooths it and assigns headings.
"""

from .grid import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    GridObstacle,
    OccupancyGrid,
    disc_offsets,
    update_local_map,
)
from .roads import (
    CONNECT_RADIUS_M,
    EmptyGraph,
    RoadGraph,
    Unreachable,
    WaypointSequence,
    dijkstra,
    global_plan,
)
from .rrt import (
    InitialTrajectory,
    NoPathFound,
    RrtParams,
    RrtReport,
    StartOrGoalOccupied,
    informed_rrt_star,
    plan_rrt,
)
from .spline import (
    DegenerateInput,
    OrientedTrajectory,
    SplineParams,
    smooth_bspline,
)

__all__ = [
    "CONNECT_RADIUS_M", "FREE", "OCCUPIED", "UNKNOWN",
    "DegenerateInput", "EmptyGraph", "GridObstacle", "InitialTrajectory",
    "NoPathFound", "OccupancyGrid", "OrientedTrajectory", "RoadGraph",
    "RrtParams", "RrtReport", "SplineParams", "StartOrGoalOccupied",
    "Unreachable", "WaypointSequence", "dijkstra", "disc_offsets",
    "global_plan", "informed_rrt_star", "plan_rrt", "smooth_bspline",
    "update_local_map",
]
