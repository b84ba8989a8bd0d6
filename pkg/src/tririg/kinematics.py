"""Serial revolute chains: forward kinematics, Jacobians, differential IK.

A chain is base_pose, then per joint (parent_offset then rotation about a fixed
local axis), then tool_offset.  Hot paths (FK, Jacobian) run through numba
kernels on packed float arrays; the public API speaks Pose.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .transforms import Pose, quat_conjugate, quat_mul, quat_to_rotvec


class ChainError(ValueError):
    """Malformed chain description or mismatched joint vector."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent_offset: Pose
    axis: np.ndarray  # unit, local frame
    limit_lo: float
    limit_hi: float
    center: float | None = None  # None -> midpoint of limits

    def __post_init__(self) -> None:
        axis = np.array(self.axis, dtype=np.float64).reshape(3)
        n = math.sqrt(float(axis @ axis))
        if abs(n - 1.0) > 1e-9:
            if n < 1e-12:
                raise ChainError(f"joint {self.name}: zero-norm axis")
            axis = axis / n
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        if not self.limit_lo < self.limit_hi:
            raise ChainError(f"joint {self.name}: limit_lo must be < limit_hi")
        c = self.resolved_center
        if not self.limit_lo <= c <= self.limit_hi:
            raise ChainError(f"joint {self.name}: center {c} outside limits")

    @property
    def resolved_center(self) -> float:
        if self.center is None:
            return 0.5 * (self.limit_lo + self.limit_hi)
        return float(self.center)


@dataclass(frozen=True)
class KinematicChain:
    name: str
    base_pose: Pose
    joints: tuple[Joint, ...]
    tool_offset: Pose

    # packed forms for the numba kernels, filled in __post_init__
    _off_q: np.ndarray = field(repr=False, default=None)
    _off_t: np.ndarray = field(repr=False, default=None)
    _axes: np.ndarray = field(repr=False, default=None)
    _lo: np.ndarray = field(repr=False, default=None)
    _hi: np.ndarray = field(repr=False, default=None)
    _centers: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if len(self.joints) == 0:
            raise ChainError(f"chain {self.name}: no joints")
        js = tuple(self.joints)
        object.__setattr__(self, "joints", js)
        packs = {
            "_off_q": np.stack([j.parent_offset.q for j in js]),
            "_off_t": np.stack([j.parent_offset.t for j in js]),
            "_axes": np.stack([j.axis for j in js]),
            "_lo": np.array([j.limit_lo for j in js]),
            "_hi": np.array([j.limit_hi for j in js]),
            "_centers": np.array([j.resolved_center for j in js]),
        }
        for k, v in packs.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def joint_centers(self) -> np.ndarray:
        return self._centers

    @property
    def limits_lo(self) -> np.ndarray:
        return self._lo

    @property
    def limits_hi(self) -> np.ndarray:
        return self._hi

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=np.float64), self._lo, self._hi)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dof,):
            raise ChainError(f"chain {self.name}: expected {self.dof} joint values, got shape {q.shape}")
        return q


# ---------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True)
def _fk_kernel(base_q, base_t, off_q, off_t, axes, qvec, out_q, out_t):
    n = qvec.shape[0]
    cw, cx, cy, cz = base_q[0], base_q[1], base_q[2], base_q[3]
    tx, ty, tz = base_t[0], base_t[1], base_t[2]
    for i in range(n):
        # translate by rotated offset
        vx, vy, vz = off_t[i, 0], off_t[i, 1], off_t[i, 2]
        ux = 2.0 * (cy * vz - cz * vy)
        uy = 2.0 * (cz * vx - cx * vz)
        uz = 2.0 * (cx * vy - cy * vx)
        tx += vx + cw * ux + (cy * uz - cz * uy)
        ty += vy + cw * uy + (cz * ux - cx * uz)
        tz += vz + cw * uz + (cx * uy - cy * ux)
        # compose offset rotation
        bw, bx, by, bz = off_q[i, 0], off_q[i, 1], off_q[i, 2], off_q[i, 3]
        nw = cw * bw - cx * bx - cy * by - cz * bz
        nx = cw * bx + cx * bw + cy * bz - cz * by
        ny = cw * by - cx * bz + cy * bw + cz * bx
        nz = cw * bz + cx * by - cy * bx + cz * bw
        cw, cx, cy, cz = nw, nx, ny, nz
        # joint rotation about local axis
        half = 0.5 * qvec[i]
        s = math.sin(half)
        bw = math.cos(half)
        bx = axes[i, 0] * s
        by = axes[i, 1] * s
        bz = axes[i, 2] * s
        nw = cw * bw - cx * bx - cy * by - cz * bz
        nx = cw * bx + cx * bw + cy * bz - cz * by
        ny = cw * by - cx * bz + cy * bw + cz * bx
        nz = cw * bz + cx * by - cy * bx + cz * bw
        cw, cx, cy, cz = nw, nx, ny, nz
        out_q[i, 0], out_q[i, 1], out_q[i, 2], out_q[i, 3] = cw, cx, cy, cz
        out_t[i, 0], out_t[i, 1], out_t[i, 2] = tx, ty, tz


@njit(cache=True, nogil=True)
def _apply_tool(out_q, out_t, tool_q, tool_t, n):
    cw, cx, cy, cz = out_q[n - 1, 0], out_q[n - 1, 1], out_q[n - 1, 2], out_q[n - 1, 3]
    vx, vy, vz = tool_t[0], tool_t[1], tool_t[2]
    ux = 2.0 * (cy * vz - cz * vy)
    uy = 2.0 * (cz * vx - cx * vz)
    uz = 2.0 * (cx * vy - cy * vx)
    out_t[n, 0] = out_t[n - 1, 0] + vx + cw * ux + (cy * uz - cz * uy)
    out_t[n, 1] = out_t[n - 1, 1] + vy + cw * uy + (cz * ux - cx * uz)
    out_t[n, 2] = out_t[n - 1, 2] + vz + cw * uz + (cx * uy - cy * ux)
    bw, bx, by, bz = tool_q[0], tool_q[1], tool_q[2], tool_q[3]
    out_q[n, 0] = cw * bw - cx * bx - cy * by - cz * bz
    out_q[n, 1] = cw * bx + cx * bw + cy * bz - cz * by
    out_q[n, 2] = cw * by - cx * bz + cy * bw + cz * bx
    out_q[n, 3] = cw * bz + cx * by - cy * bx + cz * bw


@njit(cache=True, nogil=True)
def _jacobian_kernel(frames_q, frames_t, axes, out_j):
    n = axes.shape[0]
    px, py, pz = frames_t[n, 0], frames_t[n, 1], frames_t[n, 2]
    for i in range(n):
        qw, qx, qy, qz = frames_q[i, 0], frames_q[i, 1], frames_q[i, 2], frames_q[i, 3]
        vx, vy, vz = axes[i, 0], axes[i, 1], axes[i, 2]
        ux = 2.0 * (qy * vz - qz * vy)
        uy = 2.0 * (qz * vx - qx * vz)
        uz = 2.0 * (qx * vy - qy * vx)
        wx = vx + qw * ux + (qy * uz - qz * uy)
        wy = vy + qw * uy + (qz * ux - qx * uz)
        wz = vz + qw * uz + (qx * uy - qy * ux)
        rx = px - frames_t[i, 0]
        ry = py - frames_t[i, 1]
        rz = pz - frames_t[i, 2]
        out_j[0, i] = wy * rz - wz * ry
        out_j[1, i] = wz * rx - wx * rz
        out_j[2, i] = wx * ry - wy * rx
        out_j[3, i] = wx
        out_j[4, i] = wy
        out_j[5, i] = wz


def _frames_arrays(chain: KinematicChain, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = chain.dof
    out_q = np.empty((n + 1, 4))
    out_t = np.empty((n + 1, 3))
    _fk_kernel(chain.base_pose.q, chain.base_pose.t, chain._off_q, chain._off_t, chain._axes, q, out_q, out_t)
    _apply_tool(out_q, out_t, chain.tool_offset.q, chain.tool_offset.t, n)
    return out_q, out_t


# ---------------------------------------------------------------------------
# public API

def forward_kinematics(chain: KinematicChain, q) -> list[Pose]:
    """World pose of every joint frame plus the tool frame (dof + 1 entries)."""
    q = chain.check_q(q)
    fq, ft = _frames_arrays(chain, q)
    return [Pose(ft[i], fq[i]) for i in range(chain.dof + 1)]


def tool_pose(chain: KinematicChain, q) -> Pose:
    q = chain.check_q(q)
    fq, ft = _frames_arrays(chain, q)
    return Pose(ft[-1], fq[-1])


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian of the tool frame, rows [vx vy vz wx wy wz]."""
    q = chain.check_q(q)
    fq, ft = _frames_arrays(chain, q)
    J = np.empty((6, chain.dof))
    _jacobian_kernel(fq, ft, chain._axes, J)
    return J


def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """6-vector [position error; rotation-vector error] taking current to target."""
    e = np.empty(6)
    e[:3] = target.t - current.t
    e[3:] = quat_to_rotvec(quat_mul(target.q, quat_conjugate(current.q)))
    return e


@dataclass
class IKReport:
    converged: bool
    iterations: int
    pos_err: float
    rot_err: float
    # per applied step: raw (pre-clamp) |dq|, applied |dq|, |error| at step start
    raw_step_norms: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    err_norms: list[float] = field(default_factory=list)
    q_iterates: list[np.ndarray] = field(default_factory=list)


def _split_err(e: np.ndarray) -> tuple[float, float]:
    return float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:]))


def _clamp_step(dq: np.ndarray, step_clamp: float) -> np.ndarray:
    m = float(np.max(np.abs(dq))) if dq.size else 0.0
    if m > step_clamp > 0.0:
        return dq * (step_clamp / m)
    return dq


def ik_dls(
    chain: KinematicChain,
    q0,
    target: Pose,
    *,
    lam: float = 0.02,
    max_iters: int = 100,
    pos_tol: float = 1e-4,
    rot_tol: float = 1e-3,
    step_clamp: float = 0.1,
) -> tuple[np.ndarray, IKReport]:
    """Damped least squares: dq = J^T (J J^T + lam^2 I)^-1 e.

    lam trades singularity robustness against convergence speed; 0.02 keeps
    late-iteration crawl short near singular draws while the step clamp
    bounds the step growth that light damping allows.

    Never raises on non-convergence; the report says what happened.  The raw
    step obeys |dq| <= |e| / (2 lam) (largest singular value of the damped
    inverse), then is direction-preservingly clamped and joint-limit-clipped.
    """
    q = chain.clamp(chain.check_q(q0))
    report = IKReport(False, 0, math.inf, math.inf)
    lam2 = lam * lam
    eye6 = np.eye(6)
    for it in range(max_iters + 1):
        fq, ft = _frames_arrays(chain, q)
        e = pose_error(Pose(ft[-1], fq[-1]), target)
        report.pos_err, report.rot_err = _split_err(e)
        if report.pos_err <= pos_tol and report.rot_err <= rot_tol:
            report.converged = True
            report.iterations = it
            return q, report
        if it == max_iters:
            break
        J = np.empty((6, chain.dof))
        _jacobian_kernel(fq, ft, chain._axes, J)
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye6, e)
        report.raw_step_norms.append(float(np.linalg.norm(dq)))
        report.err_norms.append(float(np.linalg.norm(e)))
        dq = _clamp_step(dq, step_clamp)
        report.step_norms.append(float(np.linalg.norm(dq)))
        q = np.clip(q + dq, chain._lo, chain._hi)
        report.q_iterates.append(q.copy())
    report.iterations = max_iters
    return q, report


def ik_regularized(
    chain: KinematicChain,
    q0,
    target: Pose,
    *,
    w_center: float = 0.01,
    w_disp: float = 0.0025,
    max_iters: int = 100,
    pos_tol: float = 1e-4,
    rot_tol: float = 1e-3,
    step_clamp: float = 0.1,
) -> tuple[np.ndarray, IKReport]:
    """Differential IK whose step minimizes
    |J dq - e|^2 + w_center |(q + dq) - q_center|^2 + w_disp |dq|^2.

    With w_center = 0 and w_disp = lam^2 the step equals the DLS step.  Same
    non-convergence contract as ik_dls.
    """
    q = chain.clamp(chain.check_q(q0))
    report = IKReport(False, 0, math.inf, math.inf)
    w = w_center + w_disp
    eye = np.eye(chain.dof)
    centers = chain._centers
    for it in range(max_iters + 1):
        fq, ft = _frames_arrays(chain, q)
        e = pose_error(Pose(ft[-1], fq[-1]), target)
        report.pos_err, report.rot_err = _split_err(e)
        if report.pos_err <= pos_tol and report.rot_err <= rot_tol:
            report.converged = True
            report.iterations = it
            return q, report
        if it == max_iters:
            break
        J = np.empty((6, chain.dof))
        _jacobian_kernel(fq, ft, chain._axes, J)
        rhs = J.T @ e - w_center * (q - centers)
        dq = np.linalg.solve(J.T @ J + w * eye, rhs)
        report.raw_step_norms.append(float(np.linalg.norm(dq)))
        report.err_norms.append(float(np.linalg.norm(e)))
        dq = _clamp_step(dq, step_clamp)
        report.step_norms.append(float(np.linalg.norm(dq)))
        q = np.clip(q + dq, chain._lo, chain._hi)
        report.q_iterates.append(q.copy())
    report.iterations = max_iters
    return q, report


def centering_cost(chain: KinematicChain, q) -> float:
    d = chain.check_q(q) - chain._centers
    return float(d @ d)


# ---------------------------------------------------------------------------
# serialization

def _pose_to_dict(p: Pose) -> dict:
    return {"t": [float(v) for v in p.t], "q": [float(v) for v in p.q]}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(np.asarray(d["t"], dtype=np.float64), np.asarray(d["q"], dtype=np.float64))


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "name": chain.name,
        "base_pose": _pose_to_dict(chain.base_pose),
        "tool_offset": _pose_to_dict(chain.tool_offset),
        "joints": [
            {
                "name": j.name,
                "parent_offset": _pose_to_dict(j.parent_offset),
                "axis": [float(v) for v in j.axis],
                "limits": [j.limit_lo, j.limit_hi],
                **({"center": j.center} if j.center is not None else {}),
            }
            for j in chain.joints
        ],
    }


def chain_from_dict(d: dict) -> KinematicChain:
    try:
        joints = tuple(
            Joint(
                name=j["name"],
                parent_offset=_pose_from_dict(j["parent_offset"]),
                axis=np.asarray(j["axis"], dtype=np.float64),
                limit_lo=float(j["limits"][0]),
                limit_hi=float(j["limits"][1]),
                center=float(j["center"]) if "center" in j else None,
            )
            for j in d["joints"]
        )
        return KinematicChain(
            name=d["name"],
            base_pose=_pose_from_dict(d["base_pose"]),
            joints=joints,
            tool_offset=_pose_from_dict(d["tool_offset"]),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ChainError(f"malformed chain description: {exc}") from exc


def chain_checksum(chain: KinematicChain) -> str:
    """sha256 of the canonical JSON form; identifies the geometry exactly."""
    blob = json.dumps(chain_to_dict(chain), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_chain(path: str | Path) -> KinematicChain:
    with open(path) as f:
        return chain_from_dict(json.load(f))


def save_chain(chain: KinematicChain, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(chain_to_dict(chain), f, indent=2, sort_keys=True)
        f.write("\n")
