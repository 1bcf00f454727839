"""
On-disk formats: point clouds (CSV or PCLF binary), feature maps (FMAP
binary), calibration JSON and the CSV tables the tools emit.
"""
import csv
import logging
import numpy as np
import struct
from pathlib import Path
from typing import Iterable, List, Sequence

from components.geometry import FeatureMap, PointCloud
from models.camera import CameraModel

logger = logging.getLogger(__name__)

PCLF_MAGIC = b"PCLF"
FMAP_MAGIC = b"FMAP"
POINTS_CSV_HEADER = ["x", "y", "z", "intensity", "frame"]
CORRESPONDENCE_HEADER = ["point_index", "u", "v"]

_PCLF_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("intensity", "<f8"), ("frame", "<u4")])


def format_value(value) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: str | Path, header: Sequence[str]) -> List[List[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except Exception as e:
        logger.error(f"Failed to read {path}: {e}")
        raise
    if not rows or [h.strip() for h in rows[0]] != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def write_points_csv(path: str | Path, cloud: PointCloud):
    rows = (
        (float(p[0]), float(p[1]), float(p[2]), float(i), int(f))
        for p, i, f in zip(cloud.positions, cloud.intensity, cloud.frame)
    )
    write_csv(path, POINTS_CSV_HEADER, rows)


def read_points_csv(path: str | Path) -> PointCloud:
    rows = read_csv(path, POINTS_CSV_HEADER)
    if not rows:
        return PointCloud.from_arrays(np.zeros((0, 3)))
    table = np.asarray(rows, dtype=np.float64)
    cloud = PointCloud.from_arrays(table[:, :3], table[:, 3])
    return PointCloud(cloud.positions, cloud.intensity, table[:, 4].astype(np.int64), cloud.source_index)


def write_points_pclf(path: str | Path, cloud: PointCloud):
    records = np.zeros(len(cloud), dtype=_PCLF_RECORD)
    records["x"], records["y"], records["z"] = cloud.positions.T
    records["intensity"] = cloud.intensity
    records["frame"] = cloud.frame
    with open(path, "wb") as handle:
        handle.write(PCLF_MAGIC + struct.pack("<I", len(cloud)))
        handle.write(records.tobytes())


def read_points_pclf(path: str | Path) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except Exception as e:
        logger.error(f"Failed to read point cloud {path}: {e}")
        raise
    if raw[:4] != PCLF_MAGIC:
        raise ValueError(f"{path}: not a PCLF file")
    (count,) = struct.unpack("<I", raw[4:8])
    expected = 8 + count * _PCLF_RECORD.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {count} points, found {len(raw)}")
    records = np.frombuffer(raw, dtype=_PCLF_RECORD, count=count, offset=8)
    positions = np.stack([records["x"], records["y"], records["z"]], axis=1).astype(np.float64)
    return PointCloud(
        positions=positions,
        intensity=records["intensity"].astype(np.float64),
        frame=records["frame"].astype(np.int64),
        source_index=np.arange(count, dtype=np.int64),
    )


def read_points(path: str | Path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_points_csv(path)
    if suffix == ".pclf":
        return read_points_pclf(path)
    raise ValueError(f"unsupported point cloud format: {path}")


def write_feature_map(path: str | Path, fm: FeatureMap):
    with open(path, "wb") as handle:
        handle.write(FMAP_MAGIC + struct.pack("<IIId", fm.height, fm.width, fm.channels, fm.scale))
        handle.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_feature_map(path: str | Path) -> FeatureMap:
    try:
        raw = Path(path).read_bytes()
    except Exception as e:
        logger.error(f"Failed to read feature map {path}: {e}")
        raise
    if raw[:4] != FMAP_MAGIC:
        raise ValueError(f"{path}: not an FMAP file")
    height, width, channels, scale = struct.unpack("<IIId", raw[4:24])
    count = height * width * channels
    if len(raw) != 24 + 4 * count:
        raise ValueError(f"{path}: data length does not match {height}x{width}x{channels}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=24).reshape(height, width, channels)
    return FeatureMap(data=data.astype(np.float32), scale=scale)


def write_camera(path: str | Path, cam: CameraModel):
    Path(path).write_text(cam.model_dump_json(indent=2))


def read_camera(path: str | Path) -> CameraModel:
    try:
        return CameraModel.model_validate_json(Path(path).read_text())
    except Exception as e:
        logger.error(f"Failed to load calibration {path}: {e}")
        raise


def write_correspondences(path: str | Path, table: np.ndarray):
    rows = ((int(r[0]), float(r[1]), float(r[2])) for r in table)
    write_csv(path, CORRESPONDENCE_HEADER, rows)


def read_correspondences(path: str | Path) -> np.ndarray:
    rows = read_csv(path, CORRESPONDENCE_HEADER)
    if not rows:
        return np.zeros((0, 3))
    return np.asarray(rows, dtype=np.float64)
