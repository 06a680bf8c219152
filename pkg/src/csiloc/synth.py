"""Synthetic 63-grid environment and seeded CSI packet-log generation.

The test area is a 9 x 7 grid of 45 cm cells. Every grid cell gets nine
deterministic multipath profiles (one per receive/transmit antenna pair)
derived from a master seed, so a dataset is reproducible byte for byte.
Per-packet variation is a small Rayleigh scatter on top of the fixed mean
response plus channel-estimation noise.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .channel import Rayleigh, Rician, Tap, TapProfile, apply_awgn, freq_response
from .codec import CsiMatrix, CsiPacket, write_log_file

__all__ = [
    "EnvironmentSpec",
    "GRID_ENV",
    "GenConfig",
    "ManifestRow",
    "coords",
    "label_from_coords",
    "label_to_position",
    "grid_channel",
    "planned_counts",
    "generate_dataset",
    "MANIFEST_NAME",
]

MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class EnvironmentSpec:
    """Rectangular grid environment; defaults give the 4.05 m x 3.15 m area."""

    cols: int = 9
    rows: int = 7
    cell: float = 0.45

    @property
    def n_grids(self) -> int:
        return self.cols * self.rows

    @property
    def labels(self) -> range:
        return range(1, self.n_grids + 1)


GRID_ENV = EnvironmentSpec()


def coords(label: int, env: EnvironmentSpec = GRID_ENV) -> tuple[int, int]:
    """Grid label -> (X, Y) cell coordinates, X in 1..cols, Y in 1..rows.

    Labels are row-major: label = (Y - 1) * cols + X.
    """
    if not (1 <= label <= env.n_grids):
        raise ValueError(f"label must be in 1..{env.n_grids}, got {label}")
    y, x = divmod(label - 1, env.cols)
    return x + 1, y + 1


def label_from_coords(x: int, y: int, env: EnvironmentSpec = GRID_ENV) -> int:
    if not (1 <= x <= env.cols and 1 <= y <= env.rows):
        raise ValueError(f"coordinates ({x}, {y}) outside {env.cols} x {env.rows} grid")
    return (y - 1) * env.cols + x


def label_to_position(label: int, env: EnvironmentSpec = GRID_ENV) -> tuple[float, float]:
    """Grid label -> center position in meters, e.g. (X, Y) = (3, 1) -> (1.35, 0.45)."""
    x, y = coords(label, env)
    return x * env.cell, y * env.cell


@dataclass(frozen=True)
class GenConfig:
    """Dataset generation knobs.

    packets_per_grid is either a fixed count or a (min, max, median) triple;
    the triple draws per-grid counts from a Beta(1, b) stretched over
    [min, max] with b solved so the draw's median lands on the target,
    mimicking the heavy per-grid imbalance of real measurement campaigns.
    scatter_ratio is the fraction of per-packet channel power that is
    random rather than the fixed grid response.
    """

    master_seed: int = 0
    packets_per_grid: int | tuple[int, int, int] = (1208, 2365, 1343)
    scatter_ratio: float = 0.05
    csi_noise_sigma2: float = 0.01
    tap_count_range: tuple[int, int] = (4, 8)
    rician_k_first_tap: float = 3.0

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError("master_seed must be >= 0")
        if not (0.0 <= self.scatter_ratio < 1.0):
            raise ValueError(f"scatter_ratio must be in [0, 1), got {self.scatter_ratio}")
        if self.csi_noise_sigma2 < 0.0:
            raise ValueError("csi_noise_sigma2 must be >= 0")
        lo, hi = self.tap_count_range
        if not (1 <= lo <= hi):
            raise ValueError(f"bad tap_count_range {self.tap_count_range}")
        if isinstance(self.packets_per_grid, int):
            if self.packets_per_grid < 1:
                raise ValueError("packets_per_grid must be >= 1")
        else:
            cmin, cmax, cmed = self.packets_per_grid
            if not (1 <= cmin <= cmed <= cmax):
                raise ValueError(f"bad packet count triple {self.packets_per_grid}")


@dataclass(frozen=True)
class ManifestRow:
    label: int
    x_cell: int
    y_cell: int
    x_m: float
    y_m: float
    count: int


def grid_channel(label: int, rx_antenna: int, tx_antenna: int, master_seed: int,
                 tap_count_range: tuple[int, int] = (4, 8),
                 rician_k: float = 3.0, fft_size: int = 56) -> TapProfile:
    """Deterministic multipath profile for one grid and antenna pair.

    The first tap carries the line-of-sight component (Rician), later taps
    are pure scatter with exponentially decaying powers normalized to 1.
    """
    if not (1 <= rx_antenna <= 3 and 1 <= tx_antenna <= 3):
        raise ValueError(f"antenna indices must be in 1..3, got ({rx_antenna}, {tx_antenna})")
    coords(label)  # label range check
    rng = np.random.default_rng(
        np.random.SeedSequence([master_seed, label, rx_antenna, tx_antenna]))
    lo, hi = tap_count_range
    n_taps = int(rng.integers(lo, hi + 1))
    delays = [0]
    for _ in range(n_taps - 1):
        delays.append(delays[-1] + int(rng.integers(1, 4)))
    tau = rng.uniform(2.0, 6.0)
    raw = np.exp(-np.asarray(delays, dtype=float) / tau)
    powers = raw / raw.sum()
    taps = [Tap(delays[0], float(powers[0]), Rician(K=rician_k))]
    taps += [Tap(d, float(p), Rayleigh()) for d, p in zip(delays[1:], powers[1:])]
    return TapProfile(tuple(taps), fft_size=fft_size)


def _count_for_grid(config: GenConfig, label: int) -> int:
    if isinstance(config.packets_per_grid, int):
        return config.packets_per_grid
    cmin, cmax, cmed = config.packets_per_grid
    if cmax == cmin:
        return cmin
    # median of Beta(1, b) is 1 - 0.5**(1/b); solve b for the target quantile
    q = min(max((cmed - cmin) / (cmax - cmin), 1e-6), 1.0 - 1e-6)
    b = math.log(0.5) / math.log(1.0 - q)
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, label, 3]))
    return cmin + int(round((cmax - cmin) * rng.beta(1.0, b)))


def planned_counts(config: GenConfig, labels=None,
                   env: EnvironmentSpec = GRID_ENV) -> dict[int, int]:
    """Per-grid packet counts the generator will produce for this config."""
    labels = list(env.labels) if labels is None else list(labels)
    return {label: _count_for_grid(config, label) for label in labels}


def _mean_responses(config: GenConfig, label: int) -> np.ndarray:
    """Fixed 3x3x56 mean channel for one grid: one seeded realization per pair."""
    h = np.empty((3, 3, 56), dtype=complex)
    for i in range(1, 4):
        for j in range(1, 4):
            profile = grid_channel(label, i, j, config.master_seed,
                                   config.tap_count_range, config.rician_k_first_tap)
            rng = np.random.default_rng(
                np.random.SeedSequence([config.master_seed, label, i, j, 1]))
            h[i - 1, j - 1] = freq_response(profile, rng)
    return h


def _rssi_value(power: float) -> int:
    if power <= 0.0:
        return 0
    return int(min(max(round(10.0 * math.log10(power)), 0), 255))


def _grid_packets(config: GenConfig, label: int, count: int) -> list[CsiPacket]:
    h_mean = _mean_responses(config, label)
    pair_power = np.mean(np.abs(h_mean) ** 2, axis=2, keepdims=True)
    rho = config.scatter_ratio
    keep = math.sqrt(1.0 - rho)
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, label, 2]))

    packets = []
    for index in range(count):
        scatter = (rng.standard_normal((3, 3, 56)) + 1j * rng.standard_normal((3, 3, 56)))
        scatter *= np.sqrt(pair_power / 2.0)
        h = keep * h_mean + math.sqrt(rho) * scatter
        h = apply_awgn(h, config.csi_noise_sigma2, rng)

        max_comp = max(float(np.abs(h.real).max()), float(np.abs(h.imag).max()), 1e-30)
        scale = 1000.0 / max_comp
        quantized = np.round(h.real * scale) + 1j * np.round(h.imag * scale)

        powers = np.sum(quantized.real**2 + quantized.imag**2, axis=(1, 2))
        packet = CsiPacket.build(
            CsiMatrix(quantized),
            timestamp=index * 1000,
            channel=2462,
            bandwidth=0,
            err_info=0,
            noise_floor=0,
            rate=0,
            rssi=_rssi_value(float(powers.sum())),
            rssi1=_rssi_value(float(powers[0])),
            rssi2=_rssi_value(float(powers[1])),
            rssi3=_rssi_value(float(powers[2])),
        )
        packets.append(packet)
    return packets


def log_filename(label: int) -> str:
    return f"grid_{label}.csilog"


def generate_dataset(config: GenConfig, out_dir, labels=None,
                     env: EnvironmentSpec = GRID_ENV) -> list[ManifestRow]:
    """Write one .csilog per grid plus a manifest.csv into out_dir.

    Identical configs produce byte-identical files regardless of how the
    per-grid work is scheduled, since every grid derives its own seeds.
    """
    labels = list(env.labels) if labels is None else list(labels)
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for label in labels:
        count = _count_for_grid(config, label)
        packets = _grid_packets(config, label, count)
        write_log_file(os.path.join(out_dir, log_filename(label)), packets)
        x_cell, y_cell = coords(label, env)
        x_m, y_m = label_to_position(label, env)
        rows.append(ManifestRow(label, x_cell, y_cell, x_m, y_m, count))

    with open(os.path.join(out_dir, MANIFEST_NAME), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "X", "Y", "x_m", "y_m", "count"])
        for row in rows:
            writer.writerow([row.label, row.x_cell, row.y_cell,
                             repr(row.x_m), repr(row.y_m), row.count])
    return rows
