"""Benchmark dataset handling: download with checksum pinning, parsing, subsetting.

Four datasets are supported: mnist, fmnist (28x28 grayscale, IDX files),
cifar10 (32x32 color, upstream binary batches) and svhn (32x32 color, ingested
through the project's flat-tensor container; see README for the one-time
conversion recipe). Images are stored [count, channels, height, width] as
float64 in [0, 1]; flattening for the MLPs is channel-major, so the first
``height*width`` entries of a flattened sample are channel 0.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import os
import struct
import tarfile
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(Exception):
    """Base class for dataset failures."""


class FormatError(DatasetError):
    """A file does not follow its declared binary format."""


class IntegrityError(DatasetError):
    """A file's checksum does not match the manifest."""


class FetchError(DatasetError):
    """A download could not be completed."""


class ConfigError(DatasetError):
    """Unknown dataset name or unusable manifest."""


class InvalidDatasetError(DatasetError):
    """Parsed data violates the dataset invariants."""


def default_cache_dir() -> Path:
    env = os.environ.get("FFBENCH_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "ffbench"


@dataclass(frozen=True)
class ImageDataset:
    """One split of one dataset: images in [0,1], integer labels."""

    images: np.ndarray  # [count, channels, height, width], float64 in [0, 1]
    labels: np.ndarray  # [count], int64, values in [0, num_classes)
    num_classes: int
    name: str
    split: str  # "train" or "test"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise InvalidDatasetError(f"images must be 4-D, got {self.images.shape}")
        count = self.images.shape[0]
        if count == 0:
            raise InvalidDatasetError("dataset is empty")
        if self.labels.shape != (count,):
            raise InvalidDatasetError(
                f"labels shape {self.labels.shape} does not match {count} images"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidDatasetError(
                f"labels outside [0, {self.num_classes}): "
                f"min {self.labels.min()}, max {self.labels.max()}"
            )
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise InvalidDatasetError(f"pixels outside [0, 1]: min {lo}, max {hi}")

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.images.shape[1:]))

    def flat(self) -> np.ndarray:
        """Images flattened channel-major to [count, channels*height*width]."""
        return np.ascontiguousarray(self.images.reshape(self.count, -1))


@dataclass(frozen=True)
class DatasetManifest:
    """Where a dataset's files come from and what they must hash to."""

    name: str
    format: str  # idx-gzip | cifar10-binary | flat-tensor
    urls: tuple[str, ...] = ()
    sha256: tuple[str, ...] = ()

    def __post_init__(self):
        if self.format not in ("idx-gzip", "cifar10-binary", "flat-tensor"):
            raise ConfigError(f"manifest {self.name!r}: unknown format {self.format!r}")
        if len(self.urls) != len(self.sha256):
            raise ConfigError(f"manifest {self.name!r}: urls and sha256 lists differ in length")
        for url, digest in zip(self.urls, self.sha256):
            if not digest or len(digest) != 64:
                raise ConfigError(f"manifest {self.name!r}: url {url} has no valid sha256")


# Upstream locations; checksums are pinned locally on first fetch (--pin)
# because shipping unverified digests would defeat the point of verifying.
DATASET_URLS: dict[str, dict] = {
    "mnist": {
        "format": "idx-gzip",
        "urls": [
            "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
            "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
            "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-images-idx3-ubyte.gz",
            "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-labels-idx1-ubyte.gz",
        ],
        "splits": {
            "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
            "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
        },
    },
    "fmnist": {
        "format": "idx-gzip",
        "urls": [
            "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-images-idx3-ubyte.gz",
            "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-labels-idx1-ubyte.gz",
            "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-images-idx3-ubyte.gz",
            "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-labels-idx1-ubyte.gz",
        ],
        "splits": {
            "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
            "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
        },
    },
    "cifar10": {
        "format": "cifar10-binary",
        "urls": ["https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"],
        "splits": {
            "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
            "test": ("test_batch.bin",),
        },
    },
    # SVHN has no direct download: its upstream container is out of scope and
    # users convert it once to the flat-tensor format (see README).
    "svhn": {
        "format": "flat-tensor",
        "urls": [],
        "splits": {"train": ("svhn_train.ftns",), "test": ("svhn_test.ftns",)},
    },
}

DATASET_NAMES = tuple(DATASET_URLS)


def _url_basename(url: str) -> str:
    return url.rsplit("/", 1)[-1]


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url: str, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    try:
        with urllib.request.urlopen(url) as resp, open(tmp, "wb") as out:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
    except (urllib.error.URLError, OSError) as exc:
        tmp.unlink(missing_ok=True)
        raise FetchError(f"download failed for {url}: {exc}") from exc
    tmp.replace(dest)


def fetch_dataset(manifest: DatasetManifest, cache_dir: Path | str) -> list[Path]:
    """Ensure every manifest file is cached and checksum-verified.

    Cached files with a matching checksum are never re-downloaded. A cached
    file with a wrong checksum is deleted and downloaded once more; if the
    fresh copy still mismatches it is deleted and IntegrityError is raised.
    """
    cache_dir = Path(cache_dir)
    out = []
    for url, digest in zip(manifest.urls, manifest.sha256):
        dest = cache_dir / manifest.name / _url_basename(url)
        if dest.exists():
            if _sha256_file(dest) == digest:
                out.append(dest)
                continue
            dest.unlink()
        _download(url, dest)
        actual = _sha256_file(dest)
        if actual != digest:
            dest.unlink()
            raise IntegrityError(
                f"{dest.name}: sha256 {actual} does not match manifest {digest}"
            )
        out.append(dest)
    return out


def load_manifests(path: Path | str) -> dict[str, DatasetManifest]:
    """Parse a manifest file: a JSON array of {name, urls, sha256, format}."""
    with open(path) as f:
        entries = json.load(f)
    out = {}
    for e in entries:
        m = DatasetManifest(
            name=e["name"],
            format=e["format"],
            urls=tuple(e["urls"]),
            sha256=tuple(e["sha256"]),
        )
        out[m.name] = m
    return out


def write_manifests(manifests: dict[str, DatasetManifest], path: Path | str) -> None:
    entries = [
        {"name": m.name, "format": m.format, "urls": list(m.urls), "sha256": list(m.sha256)}
        for m in manifests.values()
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)
        f.write("\n")


def manifest_path_for(cache_dir: Path | str) -> Path:
    return Path(cache_dir) / "manifests.json"


def get_manifest(name: str, cache_dir: Path | str, manifest_path: Path | str | None = None) -> DatasetManifest:
    """Look up the pinned manifest for a known dataset name."""
    if name not in DATASET_URLS:
        raise ConfigError(f"unknown dataset {name!r}; known: {', '.join(DATASET_NAMES)}")
    path = Path(manifest_path) if manifest_path else manifest_path_for(cache_dir)
    if path.exists():
        manifests = load_manifests(path)
        if name in manifests:
            return manifests[name]
    if not DATASET_URLS[name]["urls"]:  # svhn: nothing to download
        return DatasetManifest(name=name, format=DATASET_URLS[name]["format"])
    raise ConfigError(
        f"no pinned checksums for {name!r}; run `ffbench fetch {name} --pin` once "
        f"(writes {path})"
    )


def pin_manifest(name: str, cache_dir: Path | str, manifest_path: Path | str | None = None) -> DatasetManifest:
    """Download a dataset's files and pin their checksums (trust on first use).

    Already-cached files are hashed as they are. Subsequent fetches verify
    against the pinned digests and refuse anything that changed.
    """
    if name not in DATASET_URLS:
        raise ConfigError(f"unknown dataset {name!r}; known: {', '.join(DATASET_NAMES)}")
    spec = DATASET_URLS[name]
    cache_dir = Path(cache_dir)
    digests = []
    for url in spec["urls"]:
        dest = cache_dir / name / _url_basename(url)
        if not dest.exists():
            _download(url, dest)
        digests.append(_sha256_file(dest))
    manifest = DatasetManifest(
        name=name, format=spec["format"], urls=tuple(spec["urls"]), sha256=tuple(digests)
    )
    path = Path(manifest_path) if manifest_path else manifest_path_for(cache_dir)
    manifests = load_manifests(path) if path.exists() else {}
    manifests[name] = manifest
    write_manifests(manifests, path)
    return manifest


# ---------------------------------------------------------------------------
# IDX files (MNIST distribution format)
#
# Header: two zero bytes, one dtype byte (0x08 = unsigned byte), one byte with
# the number of dimensions, then one big-endian uint32 per dimension. Data
# bytes follow in row-major order. Files may be gzip-compressed; detected by
# the 0x1f 0x8b magic.
# ---------------------------------------------------------------------------


def load_idx(path: Path | str) -> np.ndarray:
    """Parse an IDX file (raw or gzipped) into a uint8 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: bad gzip stream: {exc}") from exc
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic")
    if raw[2] != 0x08:
        raise FormatError(f"{path}: unsupported IDX type code 0x{raw[2]:02x}")
    ndim = raw[3]
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 0
    if len(raw) != header_len + count:
        raise FormatError(
            f"{path}: payload is {len(raw) - header_len} bytes, header promises {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def load_idx_pair(images_path: Path | str, labels_path: Path | str, name: str, split: str) -> ImageDataset:
    """Combine an IDX image file and an IDX label file into a dataset."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected [count, height, width] images")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise FormatError(f"{labels_path}: label count does not match image count")
    n, h, w = images.shape
    return ImageDataset(
        images=images.reshape(n, 1, h, w).astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        num_classes=10,
        name=name,
        split=split,
    )


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches: each record is 1 label byte followed by 3072 pixel
# bytes (3 channel planes of 32x32, red first).
# ---------------------------------------------------------------------------

CIFAR_RECORD = 3073


def load_cifar10_binary(paths: list[Path | str], split: str = "train", name: str = "cifar10") -> ImageDataset:
    """Parse CIFAR-10 binary batch files into one dataset."""
    all_labels, all_images = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        all_labels.append(records[:, 0])
        all_images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    return ImageDataset(
        images=np.concatenate(all_images).astype(np.float64) / 255.0,
        labels=np.concatenate(all_labels).astype(np.int64),
        num_classes=10,
        name=name,
        split=split,
    )


# ---------------------------------------------------------------------------
# Flat-tensor container (project-defined, bit-exact):
#   magic "FTNS", u8 version=1, u8 rank, rank x u32 LE dims, u32 LE
#   num_classes, dims-many u8 pixels row-major, dims[0] u8 labels.
# ---------------------------------------------------------------------------

FLAT_MAGIC = b"FTNS"
FLAT_VERSION = 1


def save_flat_tensor(path: Path | str, ds: ImageDataset) -> None:
    dims = ds.images.shape
    pixels = np.round(ds.images * 255.0).astype(np.uint8)
    header = FLAT_MAGIC + struct.pack("<BB", FLAT_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<I", ds.num_classes)
    with open(path, "wb") as f:
        f.write(header)
        f.write(pixels.tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_flat_tensor(path: Path | str, name: str | None = None, split: str = "train") -> ImageDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != FLAT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated header")
    version, rank = struct.unpack("<BB", raw[4:6])
    if version != FLAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header_len = 6 + 4 * rank + 4
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}I", raw[6 : 6 + 4 * rank])
    (num_classes,) = struct.unpack("<I", raw[6 + 4 * rank : header_len])
    count = dims[0] if rank else 0
    payload = int(np.prod(dims, dtype=np.int64)) if rank else 0
    if len(raw) != header_len + payload + count:
        raise FormatError(
            f"{path}: payload is {len(raw) - header_len} bytes, "
            f"header promises {payload} pixels + {count} labels"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=header_len, count=payload).reshape(dims)
    labels = np.frombuffer(raw, dtype=np.uint8, offset=header_len + payload, count=count)
    return ImageDataset(
        images=pixels.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        num_classes=int(num_classes),
        name=name or Path(path).stem,
        split=split,
    )


def make_subset(ds: ImageDataset, classes: list[int]) -> ImageDataset:
    """Keep only the given classes, relabelled 0..len(classes)-1 in list order."""
    if not classes:
        raise ValueError("classes must be non-empty")
    if len(set(classes)) != len(classes):
        raise ValueError(f"classes contains duplicates: {classes}")
    for c in classes:
        if not 0 <= c < ds.num_classes:
            raise ValueError(f"class {c} out of range [0, {ds.num_classes})")
    remap = -np.ones(ds.num_classes, dtype=np.int64)
    for new, old in enumerate(classes):
        remap[old] = new
    keep = np.isin(ds.labels, classes)
    return ImageDataset(
        images=ds.images[keep],
        labels=remap[ds.labels[keep]],
        num_classes=len(classes),
        name=ds.name,
        split=ds.split,
    )


def _cifar_batch_paths(cache_dir: Path, archive: Path, wanted: tuple[str, ...]) -> list[Path]:
    extract_dir = cache_dir / "cifar10" / "extracted"
    paths = [extract_dir / n for n in wanted]
    if all(p.exists() for p in paths):
        return paths
    extract_dir.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive, "r:gz") as tar:
        for member in tar.getmembers():
            base = Path(member.name).name
            if member.isfile() and base.endswith(".bin"):
                with tar.extractfile(member) as src, open(extract_dir / base, "wb") as out:
                    out.write(src.read())
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise FormatError(f"{archive}: archive is missing {missing}")
    return paths


def load_dataset(
    name: str,
    split: str,
    cache_dir: Path | str | None = None,
    manifest_path: Path | str | None = None,
) -> ImageDataset:
    """Fetch (from cache or network) and parse one split of a known dataset."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    manifest = get_manifest(name, cache_dir, manifest_path)
    wanted = DATASET_URLS[name]["splits"][split]
    if manifest.format == "flat-tensor":
        path = cache_dir / name / wanted[0]
        if not path.exists():
            raise ConfigError(
                f"{path} not found; convert the upstream data to the flat-tensor "
                f"format first (see README)"
            )
        return load_flat_tensor(path, name=name, split=split)
    fetched = {p.name: p for p in fetch_dataset(manifest, cache_dir)}
    if manifest.format == "idx-gzip":
        return load_idx_pair(fetched[wanted[0]], fetched[wanted[1]], name=name, split=split)
    archive = next(iter(fetched.values()))
    paths = _cifar_batch_paths(cache_dir, archive, wanted)
    return load_cifar10_binary(paths, split=split, name=name)
