"""Synthetic clean/adversarial activations with a known geometry.

A fixed random subset of coordinates is designated non-robust. Class centres
are the vertices of a simplex, ``center_scale * e_c`` shifted so their mean is
the origin, placed on ``K`` of the non-robust coordinates; the class signal is
therefore carried by features an attacker can move. Clean points are centre
plus isotropic Gaussian noise with per-coordinate standard deviation
``noise_sigma``.

Each adversarial point is built from a clean test point ``x`` by adding
``t * (mu_wrong - x)`` on the non-robust coordinates only, with the wrong class
drawn uniformly among the other ``K - 1``. With ``t > 1/2`` the shifted point
crosses the ambient decision boundary. Robust coordinates are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rsad.errors import InvalidConfigError
from rsad.prototype import ActivationSet, Truth

ADV_SUFFIX = "-adv"


@dataclass(frozen=True)
class SyntheticConfig:
    K: int = 4
    d: int = 128
    n_per_class: int = 500
    center_scale: float = 10.0
    noise_sigma: float = 1.0
    shift_fraction: float = 0.6
    nonrobust_fraction: float = 0.25
    seed: int = 0
    layer_id: str = "penultimate"

    def __post_init__(self) -> None:
        if self.K < 2:
            raise InvalidConfigError(f"K must be >= 2, got {self.K}")
        if self.d < 1 or self.n_per_class < 1:
            raise InvalidConfigError("d and n_per_class must be positive")
        if self.center_scale <= 0:
            raise InvalidConfigError("center_scale must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be non-negative")
        if not 0.0 < self.shift_fraction <= 1.0:
            raise InvalidConfigError("shift_fraction must lie in (0, 1]")
        if not 0.0 < self.nonrobust_fraction <= 1.0:
            raise InvalidConfigError("nonrobust_fraction must lie in (0, 1]")
        if self.n_nonrobust < self.K:
            raise InvalidConfigError(
                f"{self.n_nonrobust} non-robust coordinates cannot hold {self.K} class centres"
            )
        if not 0 <= self.seed < 2**64:
            raise InvalidConfigError("seed must fit in 64 bits")

    @property
    def n_nonrobust(self) -> int:
        return max(1, int(round(self.nonrobust_fraction * self.d)))


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Generated sets plus the ground-truth geometry behind them.

    ``shifts[i]`` is the exact float64 difference between adversarial test
    record ``n_clean + i`` and its clean source, so subtracting it recovers the
    stored clean vector bit for bit.
    """

    config: SyntheticConfig
    calibration: ActivationSet
    test: ActivationSet
    centers: np.ndarray
    nonrobust_mask: np.ndarray
    wrong_labels: np.ndarray
    shifts: np.ndarray


def _rng(cfg: SyntheticConfig, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *path]))


def simplex_centers(cfg: SyntheticConfig, coords: np.ndarray) -> np.ndarray:
    centers = np.zeros((cfg.K, cfg.d))
    centers[np.arange(cfg.K), coords[: cfg.K]] = cfg.center_scale
    centers[:, coords[: cfg.K]] -= cfg.center_scale / cfg.K
    return centers


def _clean_points(cfg: SyntheticConfig, centers: np.ndarray, split: int) -> np.ndarray:
    blocks = []
    for c in range(cfg.K):
        noise = _rng(cfg, split, c).standard_normal((cfg.n_per_class, cfg.d))
        blocks.append(centers[c] + cfg.noise_sigma * noise)
    return np.concatenate(blocks).astype(np.float32)


def generate_dataset(cfg: SyntheticConfig) -> SyntheticData:
    layout = _rng(cfg, 0)
    nonrobust_coords = layout.permutation(cfg.d)[: cfg.n_nonrobust]
    mask = np.zeros(cfg.d, dtype=bool)
    mask[nonrobust_coords] = True
    centers = simplex_centers(cfg, nonrobust_coords)

    labels = np.repeat(np.arange(cfg.K, dtype=np.int32), cfg.n_per_class)
    index = np.tile(np.arange(cfg.n_per_class), cfg.K)
    cal_vecs = _clean_points(cfg, centers, split=1)
    clean_vecs = _clean_points(cfg, centers, split=2)

    wrong = np.empty_like(labels)
    for c in range(cfg.K):
        offsets = _rng(cfg, 3, c).integers(1, cfg.K, size=cfg.n_per_class)
        wrong[labels == c] = (c + offsets) % cfg.K
    clean64 = clean_vecs.astype(np.float64)
    target = clean64 + cfg.shift_fraction * (centers[wrong] - clean64) * mask
    adv_vecs = target.astype(np.float32)
    # float32 values differ by an exactly representable float64 amount.
    shifts = adv_vecs.astype(np.float64) - clean64

    cal_ids = tuple(f"cal-{c}-{i:06d}" for c, i in zip(labels, index))
    clean_ids = tuple(f"test-{c}-{i:06d}" for c, i in zip(labels, index))
    adv_ids = tuple(s + ADV_SUFFIX for s in clean_ids)
    n = labels.size

    calibration = ActivationSet(
        cfg.layer_id, cfg.K, cal_ids, labels, np.full(n, Truth.CLEAN), cal_vecs
    )
    test = ActivationSet(
        cfg.layer_id,
        cfg.K,
        clean_ids + adv_ids,
        np.concatenate([labels, labels]),
        np.concatenate([np.full(n, Truth.CLEAN), np.full(n, Truth.ADVERSARIAL)]),
        np.concatenate([clean_vecs, adv_vecs]),
    )
    return SyntheticData(cfg, calibration, test, centers, mask, wrong, shifts)


def generate(cfg: SyntheticConfig) -> tuple[ActivationSet, ActivationSet]:
    """Return ``(calibration, test)`` activation sets for ``cfg``.

    Calibration holds ``n_per_class`` clean points per class. The test set holds
    ``n_per_class`` fresh clean points per class followed by one adversarial
    twin for each, whose sample id is the clean id plus ``"-adv"``.
    """
    data = generate_dataset(cfg)
    return data.calibration, data.test


def clean_source_id(sample_id: str) -> str | None:
    """Sample id of the clean record an adversarial record was derived from."""
    if sample_id.endswith(ADV_SUFFIX):
        return sample_id[: -len(ADV_SUFFIX)]
    return None
