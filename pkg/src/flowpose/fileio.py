"""On-disk formats: .flo flow fields, JSON tracks, scene directories, config.

All writes are atomic (temp file in the destination directory, then
rename), so an interrupted run never leaves truncated files behind.

The .flo layout is the standard flow-interchange binary: a 4-byte tag equal
to the little-endian float32 ``202021.25``, the width and height as
little-endian int32, then row-major interleaved ``(u, v)`` float32 pairs.

Track files are JSON with an explicit ``format`` tag, a ``kind`` of
``pose`` / ``camera`` / ``detections``, dimensions, a free-form ``units``
string that round-trips verbatim, and nested row-major arrays.  Floats are
serialized with full precision, so a write/read round trip is exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, SchemaError
from .geometry import (MODE_2D, MODE_3D, CameraTrack, DetectionTrack,
                       FlowField, PoseTrack, SceneBundle, SkeletonTopology)
from .pipeline import CycleSchedule, FlowRefineParams, FlowStage, PoseStage
from .pose_refine import PoseHyperParams

FLO_MAGIC = float(np.float32(202021.25))

_DEFAULT_UNITS = {"pose": "meters", "camera": "pixels", "detections": "pixels"}


# ---------------------------------------------------------------------------
# atomic writes

def _atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise SchemaError(f"{context}: missing field '{key}'")
    return doc[key]


def _numeric_array(doc: dict, key: str, context: str) -> np.ndarray:
    raw = _require(doc, key, context)
    try:
        arr = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{context}: field '{key}' is not a numeric array") from exc
    return arr


# ---------------------------------------------------------------------------
# .flo flow fields

def write_flo(path, field: FlowField) -> None:
    """Write a flow field; values are stored at float32 precision."""
    header = struct.pack("<f", FLO_MAGIC) + struct.pack("<ii", field.width, field.height)
    _atomic_write_bytes(path, header + field.uv.astype("<f4").tobytes())


def read_flo(path) -> FlowField:
    """Read a .flo file, rejecting bad magic, bad dimensions and truncation."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    magic = struct.unpack("<f", data[:4])[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if len(data) < 12:
        raise FormatError(f"{path}: truncated dimensions", offset=len(data))
    width, height = struct.unpack("<ii", data[4:12])
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}", offset=4)
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {width}x{height}, got {len(data)}",
            offset=min(len(data), expected))
    uv = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=12)
    try:
        return FlowField(uv.astype(np.float64).reshape(height, width, 2))
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_flow_dir(path) -> list[FlowField]:
    """Read every .flo file in a directory, ordered by filename."""
    d = Path(path)
    if not d.is_dir():
        raise FormatError(f"{path}: not a directory")
    files = sorted(d.glob("*.flo"))
    if not files:
        raise FormatError(f"{path}: no .flo files found")
    return [read_flo(f) for f in files]


def write_flow_dir(path, flows) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(flows):
        write_flo(d / f"flow_{i:06d}.flo", f)


# ---------------------------------------------------------------------------
# track files

def write_track(path, track, units: str | None = None) -> None:
    """Write a pose, camera or detection track as a JSON document."""
    if isinstance(track, PoseTrack):
        kind = "pose"
        body = {"frames": track.frames, "joints": track.joints,
                "positions": track.positions.tolist()}
    elif isinstance(track, CameraTrack):
        kind = "camera"
        body = {"frames": track.frames, "params": track.params.tolist()}
    elif isinstance(track, DetectionTrack):
        kind = "detections"
        body = {"frames": track.frames, "joints": track.joints,
                "pixels": track.pixels.tolist(),
                "confidence": track.confidence.tolist()}
    else:
        raise InvalidInputError(f"unsupported track type {type(track).__name__}")
    doc = {"format": "track-v1", "kind": kind,
           "units": units if units is not None else _DEFAULT_UNITS[kind]}
    doc.update(body)
    _atomic_write_text(path, _dump_json(doc))


def read_track(path):
    """Read a track file; returns ``(track, units)``."""
    doc = _load_json(path)
    ctx = str(path)
    if _require(doc, "format", ctx) != "track-v1":
        raise SchemaError(f"{ctx}: unsupported format {doc['format']!r}")
    kind = _require(doc, "kind", ctx)
    units = str(_require(doc, "units", ctx))
    frames = _require(doc, "frames", ctx)
    try:
        if kind == "pose":
            joints = _require(doc, "joints", ctx)
            arr = _numeric_array(doc, "positions", ctx)
            if arr.shape != (frames, joints, 3):
                raise SchemaError(
                    f"{ctx}: positions shape {arr.shape} does not match "
                    f"frames={frames}, joints={joints}")
            return PoseTrack(arr), units
        if kind == "camera":
            arr = _numeric_array(doc, "params", ctx)
            if arr.shape != (frames, 3):
                raise SchemaError(
                    f"{ctx}: params shape {arr.shape} does not match frames={frames}")
            return CameraTrack(arr), units
        if kind == "detections":
            joints = _require(doc, "joints", ctx)
            px = _numeric_array(doc, "pixels", ctx)
            w = _numeric_array(doc, "confidence", ctx)
            if px.shape != (frames, joints, 2):
                raise SchemaError(
                    f"{ctx}: pixels shape {px.shape} does not match "
                    f"frames={frames}, joints={joints}")
            return DetectionTrack(px, w), units
    except InvalidInputError as exc:
        raise SchemaError(f"{ctx}: {exc}") from exc
    raise SchemaError(f"{ctx}: unknown track kind {kind!r}")


# ---------------------------------------------------------------------------
# topology files

def write_topology(path, topo: SkeletonTopology) -> None:
    doc = {"format": "topology-v1", "joint_count": topo.joint_count,
           "bones": [list(b) for b in topo.bones],
           "names": list(topo.names) if topo.names is not None else None,
           "eval_subset": list(topo.eval_subset) if topo.eval_subset is not None else None}
    _atomic_write_text(path, _dump_json(doc))


def read_topology(path) -> SkeletonTopology:
    doc = _load_json(path)
    ctx = str(path)
    if _require(doc, "format", ctx) != "topology-v1":
        raise SchemaError(f"{ctx}: unsupported format {doc['format']!r}")
    try:
        return SkeletonTopology(
            joint_count=int(_require(doc, "joint_count", ctx)),
            bones=tuple(tuple(b) for b in _require(doc, "bones", ctx)),
            names=tuple(doc["names"]) if doc.get("names") else None,
            eval_subset=tuple(doc["eval_subset"]) if doc.get("eval_subset") else None)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise SchemaError(f"{ctx}: {exc}") from exc


# ---------------------------------------------------------------------------
# scene directories

def write_bundle(dirpath, bundle: SceneBundle) -> None:
    """Write a scene as a directory of track files plus a flow subdirectory."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"format": "bundle-v1", "mode": bundle.mode, "width": bundle.width,
            "height": bundle.height, "frames": bundle.frames}
    _atomic_write_text(d / "meta.json", _dump_json(meta))
    write_topology(d / "topology.json", bundle.topology)
    write_track(d / "detections.json", bundle.detections)
    if bundle.pose is not None:
        write_track(d / "pose.json", bundle.pose)
    if bundle.camera is not None:
        write_track(d / "camera.json", bundle.camera)
    write_flow_dir(d / "flows", bundle.flows)


def read_bundle(dirpath) -> SceneBundle:
    d = Path(dirpath)
    meta = _load_json(d / "meta.json")
    ctx = str(d / "meta.json")
    if _require(meta, "format", ctx) != "bundle-v1":
        raise SchemaError(f"{ctx}: unsupported format {meta['format']!r}")
    mode = _require(meta, "mode", ctx)
    if mode not in (MODE_3D, MODE_2D):
        raise SchemaError(f"{ctx}: unknown mode {mode!r}")
    topo = read_topology(d / "topology.json")
    detections, _ = read_track(d / "detections.json")
    if not isinstance(detections, DetectionTrack):
        raise SchemaError(f"{d / 'detections.json'}: expected a detections track")
    pose = camera = None
    if mode == MODE_3D or (d / "pose.json").exists():
        pose, _ = read_track(d / "pose.json")
        if not isinstance(pose, PoseTrack):
            raise SchemaError(f"{d / 'pose.json'}: expected a pose track")
    if mode == MODE_3D or (d / "camera.json").exists():
        camera, _ = read_track(d / "camera.json")
        if not isinstance(camera, CameraTrack):
            raise SchemaError(f"{d / 'camera.json'}: expected a camera track")
    flows = read_flow_dir(d / "flows")
    try:
        return SceneBundle(topology=topo, width=int(_require(meta, "width", ctx)),
                           height=int(_require(meta, "height", ctx)),
                           detections=detections, flows=tuple(flows), mode=mode,
                           pose=pose, camera=camera)
    except InvalidInputError as exc:
        raise SchemaError(f"{dirpath}: {exc}") from exc


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunPaths:
    """Input and output locations for a pipeline run."""

    pose: str | None = None
    camera: str | None = None
    detections: str | None = None
    flows: str | None = None
    topology: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; defaults match the shipped settings."""

    mode: str = MODE_3D
    seed: int = 0
    schedule: CycleSchedule | None = None
    pose_params: PoseHyperParams = PoseHyperParams()
    flow_params: FlowRefineParams = FlowRefineParams()
    paths: RunPaths = RunPaths()

    def __post_init__(self):
        if self.mode not in (MODE_3D, MODE_2D):
            raise InvalidInputError(f"mode must be '3d' or '2d', got {self.mode!r}")
        if self.schedule is None:
            object.__setattr__(self, "schedule", CycleSchedule.default(self.mode))


def config_to_dict(cfg: RunConfig) -> dict:
    hp = cfg.pose_params
    fp = cfg.flow_params
    return {
        "format": "config-v1",
        "mode": cfg.mode,
        "seed": cfg.seed,
        "schedule": [{"kind": "flow" if isinstance(s, FlowStage) else "pose",
                      "epochs": s.epochs} for s in cfg.schedule.stages],
        "pose": {"lam_opt": hp.lam_opt, "lam_3d": hp.lam_3d, "lam_2d": hp.lam_2d,
                 "lam_pos": hp.lam_pos, "lam_cam": hp.lam_cam,
                 "lam_bone": hp.lam_bone, "lr": hp.lr, "epochs": hp.epochs},
        "flow": {"stride": fp.stride, "sigma": fp.sigma, "lr": fp.lr,
                 "radius": fp.radius},
        "paths": {"pose": cfg.paths.pose, "camera": cfg.paths.camera,
                  "detections": cfg.paths.detections, "flows": cfg.paths.flows,
                  "topology": cfg.paths.topology, "output": cfg.paths.output},
    }


def config_from_dict(doc: dict, context: str = "config") -> RunConfig:
    if _require(doc, "format", context) != "config-v1":
        raise SchemaError(f"{context}: unsupported format {doc['format']!r}")
    try:
        stages = []
        for i, s in enumerate(_require(doc, "schedule", context)):
            kind = _require(s, "kind", f"{context}: schedule[{i}]")
            epochs = int(_require(s, "epochs", f"{context}: schedule[{i}]"))
            if kind == "flow":
                stages.append(FlowStage(epochs))
            elif kind == "pose":
                stages.append(PoseStage(epochs))
            else:
                raise SchemaError(f"{context}: schedule[{i}]: unknown kind {kind!r}")
        hp_doc = _require(doc, "pose", context)
        fp_doc = _require(doc, "flow", context)
        paths_doc = doc.get("paths") or {}
        return RunConfig(
            mode=_require(doc, "mode", context),
            seed=int(doc.get("seed", 0)),
            schedule=CycleSchedule(tuple(stages)),
            pose_params=PoseHyperParams(**hp_doc),
            flow_params=FlowRefineParams(**fp_doc),
            paths=RunPaths(**paths_doc))
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise SchemaError(f"{context}: {exc}") from exc


def write_config(path, cfg: RunConfig) -> None:
    _atomic_write_text(path, _dump_json(config_to_dict(cfg)))


def read_config(path) -> RunConfig:
    return config_from_dict(_load_json(path), context=str(path))


# ---------------------------------------------------------------------------
# stage reports

def write_report(path, records) -> None:
    """Per-stage metrics report mirroring the pipeline log."""
    doc = {"format": "report-v1",
           "stages": [{"index": r.index, "kind": r.kind, "epochs": r.epochs,
                       "final_loss": r.final_loss, "mpjpe": r.mpjpe,
                       "epe": r.epe, "drift_warning": r.drift_warning}
                      for r in records]}
    _atomic_write_text(path, _dump_json(doc))


def scene_paths(dirpath) -> RunPaths:
    """The canonical member paths of a scene directory."""
    d = Path(dirpath)
    return RunPaths(pose=str(d / "pose.json"), camera=str(d / "camera.json"),
                    detections=str(d / "detections.json"),
                    flows=str(d / "flows"), topology=str(d / "topology.json"),
                    output=None)


__all__ = [
    "FLO_MAGIC", "RunConfig", "RunPaths",
    "read_flo", "write_flo", "read_flow_dir", "write_flow_dir",
    "read_track", "write_track", "read_topology", "write_topology",
    "read_bundle", "write_bundle", "read_config", "write_config",
    "config_to_dict", "config_from_dict", "write_report", "scene_paths",
]
