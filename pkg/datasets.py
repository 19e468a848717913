"""
Datasets for the desk-scale networks: IDX files (MNIST), a download client
for them, and seeded synthetic 2-D data.
"""
import gzip
import logging
import os
import struct
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import requests

from errors import BadMagic, CountMismatch, DownloadFailed, TruncatedFile

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DEFAULT_MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist"
MNIST_FILES = {
    'train_images': 'train-images-idx3-ubyte',
    'train_labels': 'train-labels-idx1-ubyte',
    'test_images': 't10k-images-idx3-ubyte',
    'test_labels': 't10k-labels-idx1-ubyte',
}

_MAX_RETRIES = 3
_RETRY_SLEEP = 3  # seconds between attempts on transient errors

# Transient errors that warrant a retry.
_RETRYABLE = (
    requests.exceptions.ChunkedEncodingError,
    requests.exceptions.ConnectionError,
    requests.exceptions.Timeout,
)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


# ----------------------------------------------------------------------
# IDX
# ----------------------------------------------------------------------

def _read_idx(path: str, expected_magic: int) -> np.ndarray:
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path} is too short for an IDX header")
    (magic,) = struct.unpack('>I', raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFile(f"{path} ends inside its dimension sizes")
    shape = struct.unpack(f'>{ndim}I', raw[4:header_len])
    count = int(np.prod(shape))
    if len(raw) - header_len < count:
        raise TruncatedFile(f"{path}: expected {count} payload bytes, found {len(raw) - header_len}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len).reshape(shape)


def load_idx_dataset(images_path: str, labels_path: str) -> Dataset:
    """
    Load an IDX image/label pair.

    Pixels are scaled to [0, 1] as float32; images keep their (N, rows, cols)
    shape.

    Raises:
        BadMagic: wrong magic number in either file
        TruncatedFile: payload shorter than the header declares
        CountMismatch: image and label counts differ
    """
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = (images.astype(np.float32) / np.float32(255.0))
    logger.info("Loaded %d images of shape %s from %s", len(labels), images.shape[1:], images_path)
    return Dataset(X=X, y=labels.astype(np.int64))


def write_idx(path: str, data: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (images if 3-D, labels if 1-D)."""
    data = np.asarray(data, dtype=np.uint8)
    with open(path, 'wb') as f:
        f.write(struct.pack('>I', 0x00000800 | data.ndim))
        f.write(struct.pack(f'>{data.ndim}I', *data.shape))
        f.write(data.tobytes())


# ----------------------------------------------------------------------
# Synthetic data
# ----------------------------------------------------------------------

def synth_dataset(kind: str, n_samples: int, seed: int = 0, separation: float = 10.0) -> Dataset:
    """
    Deterministic labelled 2-D data.

    'blobs' places two unit-variance Gaussians `separation` sigma apart
    (linearly separable at the default). 'xor' draws uniform points in
    [-1, 1]^2 labelled by the sign of x1 * x2.
    """
    if n_samples < 2:
        raise ValueError(f"Need at least 2 samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    if kind == 'blobs':
        y = np.arange(n_samples) % 2
        centers = np.where(y[:, None] == 0, -separation / 2.0, separation / 2.0) / np.sqrt(2.0)
        X = centers + rng.standard_normal((n_samples, 2))
    elif kind == 'xor':
        X = rng.uniform(-1.0, 1.0, size=(n_samples, 2))
        y = (X[:, 0] * X[:, 1] < 0).astype(np.int64)
    else:
        raise ValueError(f"Unknown synthetic dataset '{kind}' (expected 'blobs' or 'xor')")
    order = rng.permutation(n_samples)
    return Dataset(X=X[order].astype(np.float32), y=y[order].astype(np.int64))


def perceptron_separable(ds: Dataset, epochs: int = 100) -> bool:
    """True when a perceptron reaches zero training errors within `epochs`."""
    X = np.hstack([ds.X.astype(np.float64), np.ones((len(ds), 1))])
    t = np.where(ds.y == 1, 1.0, -1.0)
    w = np.zeros(X.shape[1])
    for _ in range(epochs):
        errors = 0
        for xi, ti in zip(X, t):
            if ti * (xi @ w) <= 0:
                w += ti * xi
                errors += 1
        if errors == 0:
            return True
    return False


# ----------------------------------------------------------------------
# Download
# ----------------------------------------------------------------------

class MnistClient:
    """Fetches the gzipped MNIST IDX files into a local directory."""

    def __init__(self, base_url: Optional[str] = None, timeout: int = 60):
        self.base_url = (base_url or os.getenv("MNIST_BASE_URL") or DEFAULT_MNIST_URL).rstrip('/')
        self.timeout = timeout

    def _get_with_retry(self, url: str) -> bytes:
        """
        GET one file with up to _MAX_RETRIES attempts on transient errors.

        HTTP error statuses are not retried.
        """
        for attempt in range(1, _MAX_RETRIES + 1):
            try:
                resp = requests.get(url, timeout=self.timeout)
                resp.raise_for_status()
                return resp.content
            except _RETRYABLE as exc:
                if attempt == _MAX_RETRIES:
                    raise DownloadFailed(f"Giving up on {url} after {_MAX_RETRIES} attempts: {exc}") from exc
                logger.warning(
                    "Download of %s attempt %d/%d failed (%s: %s). Retrying in %ds...",
                    url, attempt, _MAX_RETRIES, type(exc).__name__, exc, _RETRY_SLEEP,
                )
                time.sleep(_RETRY_SLEEP)
            except requests.exceptions.HTTPError as exc:
                raise DownloadFailed(f"{url} returned {exc.response.status_code}") from exc

    def download(self, data_dir: str) -> Dict[str, str]:
        """
        Make sure every MNIST IDX file exists uncompressed under data_dir.

        Returns:
            Mapping of file role to local path
        """
        os.makedirs(data_dir, exist_ok=True)
        paths = {}
        for role, name in MNIST_FILES.items():
            path = os.path.join(data_dir, name)
            paths[role] = path
            if os.path.exists(path):
                logger.debug("%s already present", path)
                continue
            url = f"{self.base_url}/{name}.gz"
            logger.info("Downloading %s", url)
            payload = gzip.decompress(self._get_with_retry(url))
            tmp_path = f"{path}.tmp"
            with open(tmp_path, 'wb') as f:
                f.write(payload)
            os.replace(tmp_path, path)
        return paths


def find_mnist(data_dir: str) -> Optional[Dict[str, str]]:
    """Local MNIST paths when all four files exist, else None."""
    paths = {role: os.path.join(data_dir, name) for role, name in MNIST_FILES.items()}
    if all(os.path.exists(p) for p in paths.values()):
        return paths
    return None


def load_mnist(paths: Dict[str, str], limit: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Train and test sets shaped (N, 1, 28, 28) for the CNN."""
    sets = []
    for prefix in ('train', 'test'):
        ds = load_idx_dataset(paths[f'{prefix}_images'], paths[f'{prefix}_labels'])
        X = ds.X[:, None, :, :]
        y = ds.y
        if limit is not None:
            X, y = X[:limit], y[:limit]
        sets.append(Dataset(X=X, y=y))
    return sets[0], sets[1]
