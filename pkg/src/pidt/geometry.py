"""Oriented-rectangle overlap and lane-corridor containment tests."""

import numpy as np


def box_corners(pose, dims) -> np.ndarray:
    """Corners of a rectangle centred at ``pose[:2]`` with heading ``pose[2]``.

    ``dims`` is ``(length, width)``; length runs along the heading.
    Returns a ``(4, 2)`` array in counter-clockwise order.
    """
    x, y, yaw = pose[0], pose[1], pose[2]
    hl, hw = 0.5 * dims[0], 0.5 * dims[1]
    c, s = np.cos(yaw), np.sin(yaw)
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def _axes(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, s], [-s, c]])


def obb_overlap(pose_a, dims_a, pose_b, dims_b) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts as overlap)."""
    dx = pose_b[0] - pose_a[0]
    dy = pose_b[1] - pose_a[1]
    # Cheap reject on circumscribed circles.
    ra = 0.5 * np.hypot(dims_a[0], dims_a[1])
    rb = 0.5 * np.hypot(dims_b[0], dims_b[1])
    if dx * dx + dy * dy > (ra + rb) ** 2:
        return False
    ca = box_corners(pose_a, dims_a)
    cb = box_corners(pose_b, dims_b)
    for axis in np.vstack([_axes(pose_a[2]), _axes(pose_b[2])]):
        pa = ca @ axis
        pb = cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def point_segment_distance(p, a, b) -> np.ndarray:
    """Distance from points ``p`` to segments ``a -> b``; broadcasts over leading axes."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.clip(np.sum(ap * ab, axis=-1) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


class LaneSegments:
    """Flattened lane-centre segments for fast corridor queries."""

    def __init__(self, starts, ends, half_widths):
        self.starts = starts
        self.ends = ends
        self.half_widths = half_widths

    @classmethod
    def from_roadgraph(cls, roadgraph):
        starts, ends, hws = [], [], []
        for poly in roadgraph:
            if poly.kind != "lane_center" or len(poly.points) < 2:
                continue
            starts.append(poly.points[:-1])
            ends.append(poly.points[1:])
            hws.append(np.full(len(poly.points) - 1, poly.lane_half_width))
        if not starts:
            raise ValueError("roadgraph has no lane_center polylines")
        return cls(np.concatenate(starts), np.concatenate(ends), np.concatenate(hws))

    def corridor_excess(self, points) -> np.ndarray:
        """Per point: distance to the nearest lane centre minus that lane's half-width."""
        pts = np.asarray(points, float).reshape(-1, 2)
        d = point_segment_distance(pts[:, None, :], self.starts[None], self.ends[None])
        j = np.argmin(d, axis=1)
        return d[np.arange(len(pts)), j] - self.half_widths[j]


def off_road_test(pose, dims, roadgraph) -> bool:
    """True iff any corner lies farther from its nearest lane centre than that lane's half-width.

    ``roadgraph`` may be a sequence of polylines or a prebuilt :class:`LaneSegments`.
    """
    lanes = roadgraph if isinstance(roadgraph, LaneSegments) else LaneSegments.from_roadgraph(roadgraph)
    return bool(np.any(lanes.corridor_excess(box_corners(pose, dims)) > 0.0))
