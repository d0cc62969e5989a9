"""Seeded synthetic generators for the robustness studies, plus ratings
ingestion and corruption injectors.

Every generator takes an explicit numpy Generator, marks which rows (or
users) were corrupted, and records the generating constants in a truth
dict, so downstream diagnostics can score themselves against known labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit

from .core import Dataset
from .errors import DomainError, InsufficientItems, ParseError
from .models import PFDataset

__all__ = [
    "LabeledDataset",
    "gen_poisson_outliers",
    "gen_missing_group",
    "gen_linreg_misspec",
    "gen_skewnormal_mixture",
    "gen_pf_synthetic",
    "load_movielens",
    "corrupt_users",
    "train_test_split",
]


@dataclass
class LabeledDataset:
    data: Union[Dataset, PFDataset]
    corrupted_mask: np.ndarray
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        mask = np.asarray(self.corrupted_mask, dtype=bool)
        n = (
            self.data.n_users
            if isinstance(self.data, PFDataset)
            else self.data.n_obs
        )
        if mask.shape != (n,):
            raise ValueError("mask length must match observation (or user) count")
        self.corrupted_mask = mask


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def gen_poisson_outliers(
    n: int, f: float, rng, rate_lo: float = 5.0, rate_hi: float = 50.0
) -> LabeledDataset:
    """(1-f) of the counts from rate_lo, round(f*n) of them from rate_hi,
    in shuffled order; the mask marks the high-rate block."""

    if not 0 <= f < 1:
        raise DomainError("corruption fraction must lie in [0, 1)")
    k = _round_half_up(f * n)
    y = np.concatenate(
        [rng.poisson(rate_lo, n - k), rng.poisson(rate_hi, k)]
    ).astype(float)
    mask = np.concatenate([np.zeros(n - k, bool), np.ones(k, bool)])
    perm = rng.permutation(n)
    return LabeledDataset(
        Dataset(y[perm]),
        mask[perm],
        {"rate_lo": rate_lo, "rate_hi": rate_hi, "f": f, "n_corrupted": k},
    )


def gen_missing_group(
    n: int, f: float, rng, slope_dom: float = 0.5, slope_min: float = 0.01
) -> LabeledDataset:
    """Binary responses from a dominant-slope logistic model, with a
    minority block of round(f*n) rows generated under a near-zero slope;
    the mask marks the minority block."""

    if not 0 <= f < 1:
        raise DomainError("minority fraction must lie in [0, 1)")
    k = _round_half_up(f * n)
    x = rng.uniform(-10.0, 10.0, n)
    slopes = np.concatenate([np.full(n - k, slope_dom), np.full(k, slope_min)])
    mask = np.concatenate([np.zeros(n - k, bool), np.ones(k, bool)])
    perm = rng.permutation(n)
    x, slopes, mask = x[perm], slopes[perm], mask[perm]
    y = (rng.uniform(size=n) < expit(slopes * x)).astype(float)
    return LabeledDataset(
        Dataset(y, x[:, None]),
        mask,
        {"slope_dom": slope_dom, "slope_min": slope_min, "f": f, "n_minority": k},
    )


LINREG_VARIANTS = ("interaction", "quadratic", "missing-covariate")


def gen_linreg_misspec(n: int, variant: str, rng) -> LabeledDataset:
    """Responses from the true structure of one misspecification variant:
    an interaction term, a quadratic term, or an extra covariate the fitted
    model will not see. Covariates stored are the ones the misspecified fit
    uses; truth records every generating coefficient."""

    if variant not in LINREG_VARIANTS:
        raise DomainError(f"unknown variant {variant!r}")
    x1 = rng.normal(10.0, 5.0, n)
    x2 = rng.normal(0.0, 10.0, n)
    b = rng.uniform(-10.0, 10.0, 4)
    eps = rng.standard_normal(n)
    if variant == "interaction":
        y = b[0] + b[1] * x1 + b[2] * x2 + b[3] * x1 * x2 + eps
        cov = np.column_stack([x1, x2])
    elif variant == "quadratic":
        y = b[0] + b[1] * x1 + b[2] * x2 + b[3] * x2 * x2 + eps
        cov = np.column_stack([x1, x2])
    else:
        y = b[0] + b[1] * x1 + b[2] * x2 + eps
        cov = x1[:, None]
    return LabeledDataset(
        Dataset(y, cov),
        np.zeros(n, bool),  # the mismatch is structural, not row-level
        {"beta": b, "variant": variant},
    )


SKEW_LOCS = np.array([[-2.0, -2.0], [3.0, 0.0], [-5.0, 7.0]])
SKEW_SCALES = np.array([[2.0, 2.0], [2.0, 4.0], [4.0, 2.0]])
SKEW_SHAPES = np.array([-5.0, 10.0, 15.0])
SKEW_PROPS = np.array([0.3, 0.3, 0.4])


def _skewnormal(xi, omega, alpha, size, rng):
    """X = xi + omega (delta |Z0| + sqrt(1-delta^2) Z1)."""

    delta = alpha / np.sqrt(1.0 + alpha * alpha)
    z0 = np.abs(rng.standard_normal(size))
    z1 = rng.standard_normal(size)
    return xi + omega * (delta * z0 + np.sqrt(1.0 - delta * delta) * z1)


def gen_skewnormal_mixture(rng, n: int = 2000) -> LabeledDataset:
    """Three-component 2-D skew-normal mixture; the skew itself is the
    mismatch, so no row is marked corrupted."""

    comp = rng.choice(3, size=n, p=SKEW_PROPS)
    pts = np.empty((n, 2))
    for k in range(3):
        idx = np.where(comp == k)[0]
        for d in range(2):
            pts[idx, d] = _skewnormal(
                SKEW_LOCS[k, d], SKEW_SCALES[k, d], SKEW_SHAPES[k], idx.size, rng
            )
    return LabeledDataset(
        Dataset(np.zeros(n), pts),
        np.zeros(n, bool),
        {
            "components": comp,
            "locations": SKEW_LOCS,
            "scales": SKEW_SCALES,
            "shapes": SKEW_SHAPES,
            "proportions": SKEW_PROPS,
        },
    )


def gen_pf_synthetic(
    n_users: int,
    n_items: int,
    rng,
    k: int = 5,
    user_shape: float = 10.0,
    user_rate: float = 10.0,
    item_shape: float = 0.1,
    item_rate: float = 8.0,
    binarize: bool = True,
) -> LabeledDataset:
    """Gamma-Poisson generative draw of a sparse user-item count matrix,
    optionally binarized to implicit feedback.

    Users share a common activity profile (high-shape Gamma factors) while
    item popularity is sparse and heterogeneous, so per-user row
    likelihoods are comparable across users and row-level weight
    diagnostics respond to mismatch rather than to activity volume."""

    theta = rng.gamma(user_shape, 1.0 / user_rate, size=(n_users, k))
    beta = rng.gamma(item_shape, 1.0 / item_rate, size=(n_items, k))
    counts = rng.poisson(theta @ beta.T)
    if binarize:
        counts = (counts > 0).astype(np.int64)
    users, items = np.nonzero(counts)
    data = PFDataset(n_users, n_items, users, items, counts[users, items])
    return LabeledDataset(
        data,
        np.zeros(n_users, bool),
        {
            "k": k,
            "user_shape": user_shape,
            "user_rate": user_rate,
            "item_shape": item_shape,
            "item_rate": item_rate,
        },
    )


def load_movielens(path) -> PFDataset:
    """Parse `UserID::MovieID::Rating::Timestamp` lines into a binarized
    user-item matrix: every observed pair becomes a 1 regardless of rating.
    Ids are densified to 0-based contiguous indices; the maps are attached
    as `user_ids` / `item_ids` attributes on the returned dataset."""

    raw_pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: expected 4 '::'-separated fields")
            try:
                uid, mid = int(parts[0]), int(parts[1])
                float(parts[2])
                int(parts[3])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric field") from None
            raw_pairs.append((uid, mid))
    if not raw_pairs:
        raise ParseError("no ratings found")
    pairs = np.array(raw_pairs, dtype=np.int64)
    uniq = np.unique(pairs, axis=0)
    dropped = pairs.shape[0] - uniq.shape[0]
    if dropped:
        warnings.warn(f"collapsed {dropped} duplicate (user, movie) pairs")
    user_ids, users = np.unique(uniq[:, 0], return_inverse=True)
    item_ids, items = np.unique(uniq[:, 1], return_inverse=True)
    data = PFDataset(
        user_ids.size, item_ids.size, users, items, np.ones(uniq.shape[0], np.int64)
    )
    object.__setattr__(data, "user_ids", user_ids)
    object.__setattr__(data, "item_ids", item_ids)
    return data


def corrupt_users(
    data: PFDataset, pct_users: float, ratio_r: float, rng
) -> LabeledDataset:
    """Replace a fraction ratio_r of each selected user's items with
    uniformly random items that user has not interacted with."""

    if not 0 < pct_users <= 1:
        raise DomainError("pct_users must lie in (0, 1]")
    if not 0 < ratio_r <= 1:
        raise DomainError("ratio_r must lie in (0, 1]")
    n_pick = _round_half_up(pct_users * data.n_users)
    active = np.unique(data.users)  # users with no entries have nothing to corrupt
    if active.size < n_pick:
        raise InsufficientItems("fewer active users than the requested pick")
    picked = rng.choice(active, size=n_pick, replace=False)
    mask = np.zeros(data.n_users, bool)
    mask[picked] = True

    users = data.users.copy()
    items = data.items.copy()
    counts = data.counts.copy()
    all_items = np.arange(data.n_items)
    for u in picked:
        row = np.where(users == u)[0]
        k = _round_half_up(ratio_r * row.size)
        if k == 0:
            continue
        owned = set(items[row].tolist())
        candidates = np.array([i for i in all_items if i not in owned])
        if candidates.size < k:
            raise InsufficientItems(
                f"user {u}: cannot replace {k} items without collision"
            )
        swap = rng.choice(row, size=k, replace=False)
        items[swap] = rng.choice(candidates, size=k, replace=False)
    out = PFDataset(data.n_users, data.n_items, users, items, counts)
    return LabeledDataset(
        out, mask, {"pct_users": pct_users, "ratio_r": ratio_r, "picked": picked}
    )


def train_test_split(labeled: LabeledDataset, test_frac: float, rng):
    """Disjoint, jointly exhaustive row split of a Dataset study instance;
    masks and covariates follow their rows."""

    data = labeled.data
    if isinstance(data, PFDataset):
        raise DomainError("row splits apply to Dataset studies only")
    n = data.n_obs
    k = _round_half_up(test_frac * n)
    perm = rng.permutation(n)
    test_idx, train_idx = np.sort(perm[:k]), np.sort(perm[k:])

    def take(idx):
        cov = None if data.covariates is None else data.covariates[idx]
        return LabeledDataset(
            Dataset(data.responses[idx], cov),
            labeled.corrupted_mask[idx],
            dict(labeled.truth),
        )

    return take(train_idx), take(test_idx)
