# data: datasets, IDX ingestion, measurements and the results store
#
# IDX image files (optionally gzip-compressed):
#   [0]   >u4 magic 0x00000803
#   [4]   >u4 count
#   [8]   >u4 rows
#   [12]  >u4 cols
#   [16]  count*rows*cols unsigned bytes, row-major
# Labels use magic 0x00000801 with a single dimension; they are checked for
# consistency and otherwise ignored.

from __future__ import annotations

import datetime as dt
import gzip
import json
import logging
import math
import os
import struct
import threading
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import requests

from model import DimensionMismatch, MeasurementModel

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX
    fcntl = None

LOGGER = logging.getLogger('admm_dad')

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SCHEMA_VERSION = 1

MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}

PathLike = Union[str, os.PathLike]


# -----------------------------
# Errors
# -----------------------------
class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class TruncatedFile(IdxError):
    pass


class ShapeMismatch(IdxError):
    pass


class SchemaVersionMismatch(ValueError):
    pass


# -----------------------------
# Datasets
# -----------------------------
@dataclass(frozen=True, eq=False)
class Dataset:
    signals: np.ndarray                      # n x count
    measurements: Optional[np.ndarray] = None  # m x count
    split: str = "train"
    provenance: str = ""

    @property
    def x(self) -> np.ndarray:
        return self.signals

    @property
    def y(self) -> np.ndarray:
        if self.measurements is None:
            raise ValueError(f"{self.split} dataset has no measurements yet")
        return self.measurements

    @property
    def count(self) -> int:
        return int(self.signals.shape[1])

    def head(self, count: int) -> "Dataset":
        meas = None if self.measurements is None else self.measurements[:, :count]
        return replace(self, signals=self.signals[:, :count], measurements=meas)


def generate_synthetic(n: int, s_train: int, s_test: int, seed) -> Tuple[Dataset, Dataset]:
    if min(n, s_train, s_test) < 1:
        raise ValueError("n, s_train and s_test must be >= 1")
    rng = np.random.default_rng(seed)
    train = rng.standard_normal((n, s_train))
    test = rng.standard_normal((n, s_test))
    tag = f"synthetic:seed={seed}"
    return Dataset(train, split="train", provenance=tag), Dataset(test, split="test", provenance=tag)


def measure(signals, mm: MeasurementModel, noise_std: float, seed) -> np.ndarray:
    x = np.asarray(signals, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != mm.n:
        raise DimensionMismatch(f"signals have {x.shape[0]} rows, A expects {mm.n}")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    y = mm.a @ x
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    return y


def measure_dataset(ds: Dataset, mm: MeasurementModel, noise_std: float, seed) -> Dataset:
    return replace(ds, measurements=measure(ds.signals, mm, noise_std, seed))


def b_in(ds: Dataset) -> float:
    """Largest measurement norm in the set."""
    return float(np.max(np.linalg.norm(ds.y, axis=0)))


def max_signal_norm(ds: Dataset) -> float:
    return float(np.max(np.linalg.norm(ds.signals, axis=0)))


def mean_predictor_mse(train: Dataset, test: Dataset) -> float:
    mu = np.mean(train.signals, axis=1, keepdims=True)
    diff = test.signals - mu
    return float(np.sum(diff * diff)) / test.count


# -----------------------------
# IDX
# -----------------------------
def _read_bytes(path: PathLike) -> bytes:
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:2] == b'\x1f\x8b':
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as err:
            raise TruncatedFile(f"{path}: corrupt gzip stream ({err})") from err
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, source: str) -> Tuple[Tuple[int, ...], memoryview]:
    head_size = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFile(f"{source}: shorter than the IDX magic")
    (found,) = struct.unpack_from('>I', raw, 0)
    if found != magic:
        raise BadMagic(f"{source}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < head_size:
        raise TruncatedFile(f"{source}: IDX header truncated")
    dims = struct.unpack_from('>' + 'I' * ndim, raw, 4)
    if 0 in dims:
        raise ShapeMismatch(f"{source}: empty IDX shape {dims}")
    expected = math.prod(dims)
    payload = len(raw) - head_size
    if payload < expected:
        raise TruncatedFile(f"{source}: {payload} data bytes, expected {expected} for shape {dims}")
    if payload > expected:
        raise ShapeMismatch(f"{source}: {payload - expected} trailing bytes after shape {dims}")
    return dims, memoryview(raw)[head_size:]


def read_idx_images(path: PathLike) -> np.ndarray:
    """(count, rows, cols) uint8 array."""
    dims, data = _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, 3, os.fspath(path))
    return np.frombuffer(data, dtype=np.uint8).reshape(dims).copy()


def read_idx_labels(path: PathLike) -> np.ndarray:
    dims, data = _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, 1, os.fspath(path))
    return np.frombuffer(data, dtype=np.uint8).reshape(dims).copy()


def write_idx_images(path: PathLike, images) -> None:
    arr = np.asarray(images)
    if arr.ndim != 3:
        raise ShapeMismatch(f"IDX images need shape (count, rows, cols), got {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("pixels must lie in 0..255")
        arr = arr.astype(np.uint8)
    raw = struct.pack('>IIII', IDX_IMAGES_MAGIC, *arr.shape) + np.ascontiguousarray(arr).tobytes()
    if os.fspath(path).endswith('.gz'):
        raw = gzip.compress(raw)
    with open(path, 'wb') as f:
        f.write(raw)


def load_mnist_idx(images_path: PathLike, labels_path: Optional[PathLike] = None,
                   split: str = "train", limit: Optional[int] = None) -> Dataset:
    """Vectorized images as columns, pixels scaled to [0, 1]."""
    images = read_idx_images(images_path)
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise ShapeMismatch(f"{labels.shape[0]} labels for {images.shape[0]} images")
    if limit is not None:
        if limit < 1:
            raise ValueError(f"limit must be >= 1, got {limit}")
        images = images[:limit]
    count = images.shape[0]
    signals = images.reshape(count, -1).T.astype(np.float64) / 255.0
    LOGGER.info("Loaded %d images (%dx%d) from %s", count, images.shape[1], images.shape[2], images_path)
    return Dataset(signals, split=split, provenance=f"idx:{os.fspath(images_path)}:scale=1/255")


def load_mnist_dir(directory: PathLike, limit_train: Optional[int] = None,
                   limit_test: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    base = Path(directory)

    def _find(key: str) -> Path:
        gz = base / MNIST_FILES[key]
        plain = base / MNIST_FILES[key][:-3]
        if gz.exists():
            return gz
        if plain.exists():
            return plain
        raise FileNotFoundError(f"{MNIST_FILES[key]} not found in {base}")

    train = load_mnist_idx(_find("train_images"), _find("train_labels"), "train", limit_train)
    test = load_mnist_idx(_find("test_images"), _find("test_labels"), "test", limit_test)
    return train, test


def fetch_mnist(dest_dir: PathLike, base_url: str = MNIST_BASE_URL, timeout: float = 60.0,
                session: Optional[requests.Session] = None) -> List[Path]:
    """Download the four MNIST files unless already present."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    sess = session or requests.Session()
    written: List[Path] = []
    for name in MNIST_FILES.values():
        target = dest / name
        if target.exists() and target.stat().st_size > 0:
            written.append(target)
            continue
        url = base_url.rstrip('/') + '/' + name
        LOGGER.info("Fetching %s", url)
        resp = sess.get(url, stream=True, timeout=timeout)
        if resp.status_code >= 300:
            LOGGER.warning("fetch_mnist HTTP %s for %s", resp.status_code, url)
            raise OSError(f"HTTP {resp.status_code} fetching {url}")
        tmp = target.with_suffix(target.suffix + '.part')
        with open(tmp, 'wb') as f:
            for chunk in resp.iter_content(chunk_size=1 << 16):
                if chunk:
                    f.write(chunk)
        os.replace(tmp, target)
        written.append(target)
    return written


# -----------------------------
# Experiment records
# -----------------------------
@dataclass
class ExperimentRecord:
    config: Dict[str, object]
    metrics: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)
    bounds: Dict[str, object] = field(default_factory=dict)
    status: str = "ok"
    error: str = ""
    timestamp: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentRecord":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(f"record schema {version}, expected {SCHEMA_VERSION}")
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


class ResultsStore:
    """Append-only JSON-lines file shared by worker threads and processes."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: ExperimentRecord) -> None:
        if not record.timestamp:
            record.timestamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec='seconds')
        line = record.to_json() + "\n"
        with self._lock:
            with open(self.path, 'a', encoding='utf-8') as f:
                if fcntl is not None:
                    fcntl.flock(f.fileno(), fcntl.LOCK_EX)
                try:
                    f.write(line)
                    f.flush()
                finally:
                    if fcntl is not None:
                        fcntl.flock(f.fileno(), fcntl.LOCK_UN)

    def load(self) -> List[ExperimentRecord]:
        if not self.path.exists():
            return []
        out: List[ExperimentRecord] = []
        with self._lock, open(self.path, 'r', encoding='utf-8') as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as err:
                    raise OSError(f"{self.path}:{lineno}: malformed record ({err})") from err
                out.append(ExperimentRecord.from_dict(data))
        return out


def persist_record(record: ExperimentRecord, path: PathLike) -> None:
    ResultsStore(path).append(record)


def load_records(path: PathLike) -> List[ExperimentRecord]:
    return ResultsStore(path).load()
