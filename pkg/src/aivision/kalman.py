"""Constant-velocity Kalman filter over box state (cx, cy, w, h).

State is an 8-vector (cx, cy, w, h, vcx, vcy, vw, vh) in pixels and
pixels/frame. Noise scales are relative to box height: process position std
h/20 and velocity std h/160, measurement std h/20.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import BBox

STD_POSITION = 1.0 / 20.0
STD_VELOCITY = 1.0 / 160.0
_MIN_SIZE = 1e-3

_F = np.eye(8)
for _i in range(4):
    _F[_i, _i + 4] = 1.0
_H = np.zeros((4, 8))
_H[:4, :4] = np.eye(4)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray        # shape (8,)
    covariance: np.ndarray  # shape (8, 8), symmetric PSD

    def box(self) -> BBox:
        cx, cy, w, h = self.mean[:4]
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _measurement(box: BBox) -> np.ndarray:
    return np.array([box.x + box.w / 2.0, box.y + box.h / 2.0, box.w, box.h])


def _clamp_size(mean: np.ndarray) -> np.ndarray:
    if mean[2] < _MIN_SIZE or mean[3] < _MIN_SIZE:
        mean = mean.copy()
        mean[2] = max(mean[2], _MIN_SIZE)
        mean[3] = max(mean[3], _MIN_SIZE)
    return mean


def kalman_initiate(box: BBox) -> KalmanState:
    """Fresh state centered on a measurement with zero velocity."""
    z = _measurement(box)
    h = z[3]
    std = [2 * STD_POSITION * h] * 4 + [10 * STD_VELOCITY * h] * 4
    return KalmanState(mean=np.concatenate([z, np.zeros(4)]),
                       covariance=np.diag(np.square(std)))


def kalman_predict(s: KalmanState) -> KalmanState:
    """Advance one frame under constant velocity, inflating covariance."""
    h = s.mean[3]
    std = [STD_POSITION * h] * 4 + [STD_VELOCITY * h] * 4
    q = np.diag(np.square(std))
    mean = _clamp_size(_F @ s.mean)
    cov = _F @ s.covariance @ _F.T + q
    return KalmanState(mean=mean, covariance=(cov + cov.T) / 2.0)


def kalman_update(s: KalmanState, z: BBox) -> KalmanState:
    """Correct the state with a box measurement."""
    if z.w <= 0 or z.h <= 0:
        raise ValueError(f"degenerate measurement w={z.w} h={z.h}")
    h = s.mean[3]
    r = np.diag([np.square(STD_POSITION * h)] * 4)
    innovation_cov = _H @ s.covariance @ _H.T + r
    gain = np.linalg.solve(innovation_cov.T, (s.covariance @ _H.T).T).T
    innovation = _measurement(z) - _H @ s.mean
    mean = _clamp_size(s.mean + gain @ innovation)
    cov = (np.eye(8) - gain @ _H) @ s.covariance
    return KalmanState(mean=mean, covariance=(cov + cov.T) / 2.0)


def kalman_two_point(prev: BBox, curr: BBox) -> KalmanState:
    """Re-initialize from two consecutive measurements.

    Applied once, on a track's second hit. Two points fully determine a
    constant-velocity state, so the state is rebuilt as [z1, z1 - z0]; a
    zero-velocity start cannot acquire fast motion quickly enough under
    the small velocity process noise, and correcting only the velocity
    leaves a position bias that takes dozens of frames to bleed off.

    Covariance follows from z0, z1 being independent with noise R:
    Cov[z1] = R, Cov[z1 - z0] = 2R, Cov[z1, z1 - z0] = R.
    """
    z0 = _measurement(prev)
    z1 = _measurement(curr)
    mean = np.concatenate([z1, z1 - z0])
    r = np.square(STD_POSITION * curr.h)
    cov = np.zeros((8, 8))
    cov[:4, :4] = np.eye(4) * r
    cov[:4, 4:] = np.eye(4) * r
    cov[4:, :4] = np.eye(4) * r
    cov[4:, 4:] = np.eye(4) * (2 * r)
    return KalmanState(mean=mean, covariance=cov)
