"""Shared domain types.

Conventions
-----------
* Timestamps are integer microseconds on a named clock (master or client).
* Points are float64 numpy arrays of shape ``(3,)``, meters.
* Rotations are unit quaternions ``(w, x, y, z)`` with ``w >= 0``.
* A :class:`RigidTransform` ``T_ab`` maps coordinates from frame ``b`` into
  frame ``a``: ``p_a = R p_b + t``.
* Euler angles only appear at reporting boundaries and use the intrinsic
  Z-Y-X (yaw, pitch, roll) sequence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometryError, InputError

Timestamp = int  # microseconds

EULER_SEQ = "ZYX"
US_PER_S = 1_000_000


class Frame(enum.Enum):
    STATION1 = "Station1"
    STATION2 = "Station2"
    STATION3 = "Station3"
    ROBOT = "Robot"

    # The common frame is the frame of station 1.
    COMMON = "Station1"

    @property
    def index(self) -> int:
        """1-based station number (also the index of the prism it tracks)."""
        return STATIONS.index(self) + 1

    @classmethod
    def station(cls, number: int) -> "Frame":
        return STATIONS[number - 1]


STATIONS = (Frame.STATION1, Frame.STATION2, Frame.STATION3)


class Status(enum.Enum):
    OK = "Ok"
    PRISM_NOT_DETECTED = "PrismNotDetected"
    PRISM_TOO_CLOSE = "PrismTooClose"
    NOT_LEVELLED = "NotLevelled"
    INVALID = "Invalid"

    @property
    def code(self) -> int:
        return _STATUS_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "Status":
        return _CODE_STATUS.get(code, cls.INVALID)

    @classmethod
    def parse(cls, text: str) -> "Status":
        """Parse a status name or numeric code; unknown values map to INVALID."""
        text = text.strip()
        for s in cls:
            if s.value.lower() == text.lower():
                return s
        try:
            return cls.from_code(int(text))
        except ValueError:
            return cls.INVALID


_STATUS_CODES = {
    Status.OK: 0,
    Status.PRISM_NOT_DETECTED: 1,
    Status.PRISM_TOO_CLOSE: 2,
    Status.NOT_LEVELLED: 3,
    Status.INVALID: 255,
}
_CODE_STATUS = {v: k for k, v in _STATUS_CODES.items()}


@dataclass(frozen=True)
class RawMeasurement:
    """One total-station observation in the station's own frame.

    ``va`` is a zenith angle unless stated otherwise by the reader.
    """

    station: Frame
    ha: float
    va: float
    range: float
    t_client: Timestamp
    status: Status = Status.OK

    def __post_init__(self):
        if self.t_client < 0:
            raise InputError(f"negative timestamp {self.t_client}")
        if self.status is Status.OK:
            if not self.range > 0:
                raise InputError(f"range must be positive for Ok status, got {self.range}")
            if not 0.0 <= self.va <= math.pi:
                raise InputError(f"vertical angle out of [0, pi]: {self.va}")
            if not 0.0 <= self.ha < 2 * math.pi:
                raise InputError(f"horizontal angle out of [0, 2pi): {self.ha}")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


def point(x, y=None, z=None) -> np.ndarray:
    if y is None:
        arr = np.asarray(x, dtype=float).reshape(3)
    else:
        arr = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"non-finite point {arr}")
    return arr


def distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("distance of non-finite points")
    return float(np.linalg.norm(a - b))


# quaternion helpers, (w, x, y, z)

def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not n > 0:
        raise DegenerateGeometryError("zero quaternion")
    q = q / n
    return -q if q[0] < 0 else q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return quat_normalize([w, x, y, z])


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a rotation matrix, accurate near zero."""
    s = np.linalg.norm(R - R.T) / (2 * math.sqrt(2))
    c = (np.trace(R) - 1) / 2
    return float(math.atan2(s, c))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise InputError(f"rotation quaternion not unit: |q|={np.linalg.norm(q)}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", point(self.translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(matrix_to_quat(np.asarray(R, dtype=float)), np.asarray(t, dtype=float))

    @classmethod
    def from_euler(cls, yaw: float, pitch: float, roll: float, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        R = Rotation.from_euler(EULER_SEQ, [yaw, pitch, roll]).as_matrix()
        return cls.from_matrix(R, t)

    @property
    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        return quat_to_matrix(self.rotation)

    def homogeneous(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.matrix
        H[:3, 3] = self.translation
        return H

    def apply(self, points) -> np.ndarray:
        """Map a point ``(3,)`` or an array of points ``(n, 3)``."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + self.translation

    __call__ = apply

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def euler_zyx(self) -> np.ndarray:
        """(yaw, pitch, roll) in radians."""
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w]).as_euler(EULER_SEQ)

    def angle_to(self, other: "RigidTransform") -> float:
        return rotation_angle(self.matrix.T @ other.matrix)

    def isclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return (np.linalg.norm(self.translation - other.translation) <= atol
                and self.angle_to(other) <= atol)

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: maps x to a(b(x))."""
    q = quat_normalize(quat_multiply(a.rotation, b.rotation))
    return RigidTransform(q, a.matrix @ b.translation + a.translation)


def triangle_area(p1, p2, p3) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(np.asarray(p2) - p1, np.asarray(p3) - p1)))


# Reference inter-prism distances measured in the lab, meters.
TABLE_D12 = 0.987
TABLE_D13 = 0.681
TABLE_D23 = 0.815
# Reference distance between the two GNSS antennas, meters.
GNSS_BASELINE = 0.810
# Height of the prism plane above the robot frame origin in the default layout.
DEFAULT_PRISM_HEIGHT = 0.2


@dataclass(frozen=True, eq=False)
class PrismLayout:
    """Prism positions in the robot frame plus their reference distances."""

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    d12: float
    d13: float
    d23: float

    def __post_init__(self):
        for name in ("p1", "p2", "p3"):
            object.__setattr__(self, name, point(getattr(self, name)))
        if triangle_area(self.p1, self.p2, self.p3) <= 1e-4:
            raise DegenerateGeometryError("prism layout is (nearly) collinear")
        for (a, b), d in zip(((self.p1, self.p2), (self.p1, self.p3), (self.p2, self.p3)),
                             (self.d12, self.d13, self.d23)):
            if abs(distance(a, b) - d) > 1e-9:
                raise InputError(f"stored distance {d} disagrees with points ({distance(a, b)})")

    @classmethod
    def from_points(cls, p1, p2, p3) -> "PrismLayout":
        p1, p2, p3 = point(p1), point(p2), point(p3)
        return cls(p1, p2, p3, distance(p1, p2), distance(p1, p3), distance(p2, p3))

    @classmethod
    def from_distances(cls, d12: float = TABLE_D12, d13: float = TABLE_D13, d23: float = TABLE_D23,
                       height: float = DEFAULT_PRISM_HEIGHT) -> "PrismLayout":
        """Triangle with the given sides, lying flat at ``height`` above the
        robot origin and centred over it; prism 1 to prism 2 runs along +x."""
        x3 = (d12 ** 2 + d13 ** 2 - d23 ** 2) / (2 * d12)
        y3_sq = d13 ** 2 - x3 ** 2
        if y3_sq <= 0:
            raise DegenerateGeometryError("distances violate the triangle inequality")
        pts = np.array([[0.0, 0.0, 0.0], [d12, 0.0, 0.0], [x3, math.sqrt(y3_sq), 0.0]])
        pts -= pts.mean(axis=0)
        pts[:, 2] = height
        return cls.from_points(*pts)

    @classmethod
    def default(cls) -> "PrismLayout":
        return cls.from_distances()

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.p1, self.p2, self.p3])

    @property
    def distances(self) -> tuple[float, float, float]:
        return (self.d12, self.d13, self.d23)


@dataclass(frozen=True)
class PoseSample:
    """Robot pose (robot frame -> common frame) at a master-clock time."""

    t: Timestamp
    pose: Optional[RigidTransform]
    residual_rms: float
    valid: bool

    @classmethod
    def invalid(cls, t: Timestamp) -> "PoseSample":
        return cls(t, None, float("nan"), False)
