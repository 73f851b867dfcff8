"""Posture correction of 3D landmark clouds.

The canonical frame puts the midpoint of the mouth corners at the origin, the
corner line on the X axis (right corner on +X) and the upper reference landmark
in the XY plane on the +Y side. Correction runs translate -> yaw -> roll ->
pitch: yaw and roll are fixed by the corners alone, pitch needs the extra
reference point.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import DegenerateCloudError
from app.core.logging import logger
from app.tools.models.geometry_model import (
    FaceCloud,
    PoseAngles,
    RigidTransform,
)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _corners(cloud: FaceCloud) -> Tuple[np.ndarray, np.ndarray]:
    return cloud.points[cloud.corner_left_idx], cloud.points[cloud.corner_right_idx]


def _rotate(cloud: FaceCloud, rotation: np.ndarray) -> Tuple[FaceCloud, RigidTransform]:
    transform = RigidTransform(rotation=rotation)
    return cloud.with_points(transform.apply(cloud.points)), transform


def translate_to_mouth_origin(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform]:
    """Shift the cloud so the midpoint of the mouth corners is the origin."""
    left, right = _corners(cloud)
    if np.linalg.norm(right - left) < settings.DEGENERACY_EPS_MM:
        raise DegenerateCloudError(f"frame {cloud.frame_index}: mouth corners coincide")
    transform = RigidTransform(translation=-(left + right) / 2.0)
    return cloud.with_points(transform.apply(cloud.points)), transform


def yaw_correct(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform]:
    """Rotate about Y so both corners have z = 0; Y coordinates are untouched."""
    left, right = _corners(cloud)
    dx, dz = right[0] - left[0], right[2] - left[2]
    if math.hypot(dx, dz) < settings.DEGENERACY_EPS_MM:
        raise DegenerateCloudError(f"frame {cloud.frame_index}: corners coincide in the XZ projection")
    return _rotate(cloud, rot_y(math.atan2(dz, dx)))


def roll_correct(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform]:
    """Rotate about Z so both corners have y = 0."""
    left, right = _corners(cloud)
    dx, dy = right[0] - left[0], right[1] - left[1]
    if math.hypot(dx, dy) < settings.DEGENERACY_EPS_MM:
        raise DegenerateCloudError(f"frame {cloud.frame_index}: corners coincide in the XY projection")
    return _rotate(cloud, rot_z(-math.atan2(dy, dx)))


def pitch_correct(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform]:
    """Rotate about X so the upper reference landmark lands in the XY plane with y > 0."""
    ref = cloud.points[cloud.upper_ref_idx]
    y, z = ref[1], ref[2]
    if math.hypot(y, z) < settings.DEGENERACY_EPS_MM:
        raise DegenerateCloudError(f"frame {cloud.frame_index}: upper reference lies on the X axis")
    return _rotate(cloud, rot_x(-math.atan2(z, y)))


def angles_of(yaw: RigidTransform, roll: RigidTransform, pitch: RigidTransform) -> PoseAngles:
    """Right-handed angle of each single-axis correction, read back from its matrix."""
    return PoseAngles(
        yaw=math.atan2(yaw.rotation[0, 2], yaw.rotation[0, 0]),
        roll=math.atan2(roll.rotation[1, 0], roll.rotation[0, 0]),
        pitch=math.atan2(pitch.rotation[2, 1], pitch.rotation[1, 1]),
    )


def correct_posture_with_angles(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform, PoseAngles]:
    """Full correction, also reporting the yaw/roll/pitch angles removed."""
    moved, t_translate = translate_to_mouth_origin(cloud)
    moved, t_yaw = yaw_correct(moved)
    moved, t_roll = roll_correct(moved)
    moved, t_pitch = pitch_correct(moved)
    transform = t_translate.then(t_yaw).then(t_roll).then(t_pitch)
    angles = angles_of(t_yaw, t_roll, t_pitch)
    logger.debug(
        "posture_corrected",
        frame_index=cloud.frame_index,
        yaw=angles.yaw,
        roll=angles.roll,
        pitch=angles.pitch,
    )
    return moved, transform, angles


def correct_posture(cloud: FaceCloud) -> Tuple[FaceCloud, RigidTransform]:
    """Translate, then correct yaw, roll and pitch; returns the composed rigid map."""
    moved, transform, _ = correct_posture_with_angles(cloud)
    return moved, transform


def pose_transform(yaw: float, roll: float, pitch: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Head pose (radians, mm) as a rigid map.

    Composed so that correcting a posed canonical cloud removes exactly
    ``-yaw``, ``-roll`` and ``-pitch`` (for angles inside +-90 degrees).
    """
    rotation = rot_y(yaw) @ rot_z(roll) @ rot_x(pitch)
    return RigidTransform(rotation=rotation, translation=np.asarray(translation, dtype=np.float64))


def apply_pose(cloud: FaceCloud, transform: RigidTransform) -> FaceCloud:
    return cloud.with_points(transform.apply(cloud.points))
