"""CSI preprocessing: magnitude normalization, unit-power standardization,
smoothing, fingerprint reshape, target encoding and dataset splitting.

A packet's 3x3x56 integer CSI matrix becomes a real 9x56 fingerprint:

  1. per receive antenna, normalize magnitudes so the mean squared
     magnitude per subcarrier is 1 (energy 56 over each antenna slice),
  2. per antenna pair, standardize the 56-vector to mean 0 / variance 1
     (population divisor),
  3. smooth each pair with a centered moving average (window 8, shrinking
     at the edges),
  4. reshape receive-antenna-major into 9 rows of 56 subcarriers.

Fingerprint collections round-trip through the .csids file format:
magic b"CSIDS01\\0" | u32 count | u8 rows | u8 cols | u16 reserved, then
per record: u16 label | f32 x | f32 y | rows*cols f32 values row-major.
"""
from __future__ import annotations

import glob
import math
import os
import re
import struct
from dataclasses import dataclass

import numpy as np

from .codec import CsiPacket, filter_packets, read_log_file
from .synth import label_to_position

DATASET_MAGIC = b"CSIDS01\x00"
_DS_HEADER = struct.Struct("<8sIBBH")
_REC_HEAD = struct.Struct("<Hff")

N_GRIDS = 63
DEFAULT_WINDOW = 8
DEFAULT_FRACTIONS = (0.75, 0.10, 0.15)

__all__ = [
    "PreprocessError",
    "Fingerprint",
    "DatasetSplit",
    "magnitude_normalize",
    "unit_power",
    "moving_average",
    "to_fingerprint",
    "pipeline",
    "fingerprint_from_packet",
    "encode_targets",
    "split_indices",
    "split_dataset",
    "write_dataset",
    "read_dataset",
    "load_log_directory",
    "stack_fingerprints",
    "DEFAULT_WINDOW",
    "DEFAULT_FRACTIONS",
]


class PreprocessError(ValueError):
    """Input violates a preprocessing precondition."""


@dataclass
class Fingerprint:
    """One 9x56 network input image with its grid label and position."""

    values: np.ndarray
    label: int
    position: tuple[float, float]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (9, 56):
            raise PreprocessError(f"fingerprint must be 9x56, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise PreprocessError("fingerprint contains non-finite values")
        if not (1 <= self.label <= N_GRIDS):
            raise PreprocessError(f"label must be in 1..{N_GRIDS}, got {self.label}")


@dataclass
class DatasetSplit:
    train: list[Fingerprint]
    validation: list[Fingerprint]
    test: list[Fingerprint]
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS


def magnitude_normalize(omega: np.ndarray) -> np.ndarray:
    """Normalized CSI magnitudes from a raw complex 3x3x56 matrix.

    Each entry becomes sqrt(|w|^2 / mean_over_pair_and_tone(|w|^2)) with the
    mean taken per receive antenna, so every receive antenna slice has a
    sum of squares of exactly 56. Scale-invariant per receive antenna.
    """
    w = np.asarray(omega, dtype=complex)
    if w.shape != (3, 3, 56):
        raise PreprocessError(f"expected 3x3x56 CSI, got shape {w.shape}")
    sq = (w * w.conj()).real
    denom = sq.sum(axis=(1, 2), keepdims=True) / 56.0
    if np.any(denom <= 0.0):
        bad = int(np.flatnonzero(denom.ravel() <= 0.0)[0])
        raise PreprocessError(f"receive antenna {bad + 1} has all-zero CSI")
    return np.sqrt(sq / denom)


def unit_power(pair_vector: np.ndarray) -> np.ndarray:
    """Standardize along the last axis: mean 0, population variance 1.

    Accepts a single 56-vector or any (..., n) stack of them; raises on a
    constant vector (population standard deviation <= 1e-12).
    """
    v = np.asarray(pair_vector, dtype=float)
    mean = v.mean(axis=-1, keepdims=True)
    centered = v - mean
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    if np.any(std <= 1e-12):
        raise PreprocessError("constant vector: zero variance over subcarriers")
    return centered / std


def moving_average(values: np.ndarray, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Centered moving mean along the last axis with shrinking edge windows.

    For even windows the extra element sits to the left: output t averages
    indices t - window//2 .. t + window - 1 - window//2, clipped to range.
    Window contributions are summed in ascending index order.
    """
    if window < 1:
        raise PreprocessError(f"window must be >= 1, got {window}")
    v = np.asarray(values, dtype=float)
    n = v.shape[-1]
    left = window // 2
    acc = np.zeros_like(v)
    cnt = np.zeros(n)
    for d in range(-left, window - left):
        t0 = max(0, -d)
        t1 = min(n, n - d)
        if t0 >= t1:
            continue
        acc[..., t0:t1] += v[..., t0 + d:t1 + d]
        cnt[t0:t1] += 1.0
    return acc / cnt


def to_fingerprint(omega_hat: np.ndarray) -> np.ndarray:
    """Reshape a 3x3x56 stack into the 9x56 image, receive-antenna-major.

    Row index is (i - 1) * 3 + j for receive antenna i and transmit antenna j.
    """
    a = np.asarray(omega_hat, dtype=float)
    if a.shape != (3, 3, 56):
        raise PreprocessError(f"expected 3x3x56 input, got shape {a.shape}")
    return a.reshape(9, 56)


def pipeline(packet: CsiPacket, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Full per-packet preparation: normalize, standardize, smooth, reshape."""
    if filter_packets([packet]) == []:
        raise PreprocessError(
            "packet fails the validity filter (needs err_info=0, nr=nc=3, num_tones=56)")
    omega_bar = magnitude_normalize(packet.csi.data)
    omega_hat = unit_power(omega_bar)
    smoothed = moving_average(omega_hat, window)
    return to_fingerprint(smoothed)


def fingerprint_from_packet(packet: CsiPacket, label: int,
                            window: int = DEFAULT_WINDOW) -> Fingerprint:
    return Fingerprint(pipeline(packet, window), label, label_to_position(label))


def encode_targets(label: int) -> tuple[np.ndarray, np.ndarray]:
    """Regression and classification targets for a grid label.

    Returns (position in meters, one-hot 63-vector with the 1 at the
    label'th slot)."""
    position = np.asarray(label_to_position(label), dtype=float)
    onehot = np.zeros(N_GRIDS)
    onehot[label - 1] = 1.0
    return position, onehot


def _allocate(n: int, fractions) -> list[int]:
    # largest-remainder rounding; ties go to the earlier class
    quotas = [n * f for f in fractions]
    base = [math.floor(q) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda c: (-(quotas[c] - base[c]), c))
    for c in order[:leftover]:
        base[c] += 1
    return base


def split_indices(labels, seed: int, fractions=DEFAULT_FRACTIONS):
    """Stratified split of label positions into (train, validation, test).

    Each grid's items are shuffled by the seed and allocated with
    largest-remainder rounding, so the result is a partition and every
    per-grid size is within one item of the exact proportion.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise PreprocessError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise PreprocessError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    parts = [[], [], []]
    for label in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == label))
        n_train, n_val, _ = _allocate(len(idx), fractions)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.concatenate(p) if p else np.array([], dtype=int) for p in parts)


def split_dataset(fingerprints, seed: int, fractions=DEFAULT_FRACTIONS) -> DatasetSplit:
    labels = [fp.label for fp in fingerprints]
    train_idx, val_idx, test_idx = split_indices(labels, seed, fractions)
    pick = lambda idx: [fingerprints[i] for i in idx]
    return DatasetSplit(pick(train_idx), pick(val_idx), pick(test_idx), tuple(fractions))


def write_dataset(fingerprints, path) -> None:
    """Write fingerprints to a .csids file (values stored as f32)."""
    blob = [_DS_HEADER.pack(DATASET_MAGIC, len(fingerprints), 9, 56, 0)]
    for fp in fingerprints:
        blob.append(_REC_HEAD.pack(fp.label, fp.position[0], fp.position[1]))
        blob.append(fp.values.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def read_dataset(path) -> list[Fingerprint]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DS_HEADER.size:
        raise PreprocessError(f"dataset file too short: {len(data)} bytes")
    magic, count, rows, cols, _ = _DS_HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise PreprocessError(f"bad dataset magic {magic!r}")
    if (rows, cols) != (9, 56):
        raise PreprocessError(f"unsupported fingerprint shape {rows}x{cols}")
    rec_size = _REC_HEAD.size + rows * cols * 4
    need = _DS_HEADER.size + count * rec_size
    if len(data) < need:
        raise PreprocessError(f"dataset truncated: needed {need} bytes, got {len(data)}")
    out = []
    offset = _DS_HEADER.size
    for _ in range(count):
        label, x, y = _REC_HEAD.unpack_from(data, offset)
        offset += _REC_HEAD.size
        values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
        offset += rows * cols * 4
        out.append(Fingerprint(values.reshape(rows, cols).astype(float), label, (x, y)))
    return out


def load_log_directory(log_dir, window: int = DEFAULT_WINDOW) -> list[Fingerprint]:
    """Read every grid_<label>.csilog in a directory into fingerprints.

    Packets failing the validity filter are dropped, mirroring how broken
    captures are discarded before localization processing.
    """
    paths = sorted(glob.glob(os.path.join(log_dir, "grid_*.csilog")))
    if not paths:
        raise PreprocessError(f"no grid_*.csilog files in {log_dir!r}")
    fingerprints = []
    for path in paths:
        match = re.fullmatch(r"grid_(\d+)\.csilog", os.path.basename(path))
        if not match:
            continue
        label = int(match.group(1))
        result = read_log_file(path)
        for packet in filter_packets(result.packets):
            fingerprints.append(fingerprint_from_packet(packet, label, window))
    return fingerprints


def stack_fingerprints(fingerprints):
    """Fingerprint list -> (X of shape (n, 9, 56, 1), labels (n,), positions (n, 2))."""
    if not fingerprints:
        return (np.zeros((0, 9, 56, 1)), np.zeros(0, dtype=int), np.zeros((0, 2)))
    x = np.stack([fp.values for fp in fingerprints])[..., None]
    labels = np.array([fp.label for fp in fingerprints], dtype=int)
    positions = np.array([fp.position for fp in fingerprints], dtype=float)
    return x, labels, positions
