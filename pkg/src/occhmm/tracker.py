"""Per-camera discriminative tracker: sparse features + online naive Bayes.

A deliberately small tracking-by-detection stack, just enough to exercise the
learning-rate control loop: random sparse linear features over a resampled
patch, Gaussian class-conditional scores, local sliding-window search, and a
convex model blend with rate ``lam``.  ``lam = 1`` freezes the model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VAR_FLOOR",
    "BoundingBox",
    "SparseFeatureExtractor",
    "TrackerModel",
    "classify",
    "extract",
    "init_model",
    "iou",
    "sample_negative_boxes",
    "search",
    "update_model",
]

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left pixel (x, y), extents (w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")

    def within(self, frame_shape: tuple[int, int]) -> bool:
        height, width = frame_shape
        return 0 <= self.x and 0 <= self.y and self.x + self.w <= width and self.y + self.h <= height

    def shifted(self, dy: int, dx: int) -> "BoundingBox":
        return BoundingBox(x=self.x + dx, y=self.y + dy, w=self.w, h=self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.w * a.h + b.w * b.h - inter)


class SparseFeatureExtractor:
    """Random sparse signed-sum features over a patch resampled to a fixed size.

    Each of ``num_features`` features touches 2 to 4 pixels of the
    (height, width) patch with signed weights; the construction is
    deterministic given ``seed``.
    """

    def __init__(self, num_features: int, patch_dims: tuple[int, int], seed: int):
        if num_features < 1:
            raise ValueError("need at least one feature")
        height, width = patch_dims
        if height < 1 or width < 1:
            raise ValueError("patch dims must be positive")
        self.num_features = num_features
        self.patch_dims = (int(height), int(width))
        self.seed = int(seed)
        dim = height * width
        rng = np.random.default_rng(self.seed)
        entries: list[list[tuple[int, float]]] = []
        matrix = np.zeros((num_features, dim))
        for i in range(num_features):
            count = int(rng.integers(2, 5))
            pixels = rng.choice(dim, size=min(count, dim), replace=False)
            weights = rng.uniform(0.5, 1.5, size=pixels.size) * rng.choice([-1.0, 1.0], size=pixels.size)
            entries.append([(int(p), float(w)) for p, w in zip(pixels, weights)])
            matrix[i, pixels] = weights
        self.entries = entries
        self._matrix = matrix

    def resample(self, frame: np.ndarray, box: BoundingBox) -> np.ndarray:
        """Nearest-neighbour resample of the box content to the patch size."""
        frame = np.asarray(frame)
        if frame.ndim != 2:
            raise ValueError("frame must be a 2-D intensity array")
        if not box.within(frame.shape):
            raise ValueError(f"box {box} is outside frame of shape {frame.shape}")
        ph, pw = self.patch_dims
        rows = box.y + (np.arange(ph) * box.h) // ph
        cols = box.x + (np.arange(pw) * box.w) // pw
        return frame[np.ix_(rows, cols)].astype(float)

    def features(self, patch: np.ndarray) -> np.ndarray:
        """Feature vector of an already-resampled patch (flat or 2-D)."""
        return self._matrix @ np.asarray(patch, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class TrackerModel:
    """Gaussian class-conditional parameters per feature, plus the applied rate."""

    pos_mean: np.ndarray
    pos_var: np.ndarray
    neg_mean: np.ndarray
    neg_var: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        fields = {}
        for name in ("pos_mean", "pos_var", "neg_mean", "neg_var"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a flat per-feature vector")
            fields[name] = arr
        sizes = {a.size for a in fields.values()}
        if len(sizes) != 1:
            raise ValueError("all parameter vectors must share one length")
        if np.any(fields["pos_var"] < VAR_FLOOR) or np.any(fields["neg_var"] < VAR_FLOOR):
            raise ValueError(f"variances must be >= {VAR_FLOOR}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        for name, arr in fields.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_features(self) -> int:
        return int(self.pos_mean.size)


def extract(fx: SparseFeatureExtractor, frame: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Feature vector of the box content: sparse signed sums over the patch."""
    return fx.features(fx.resample(frame, box))


def classify(model: TrackerModel, features: np.ndarray) -> float:
    """Naive-Bayes log ratio: positive means the features look like the target."""
    f = np.asarray(features, dtype=float)
    if f.shape != (model.num_features,):
        raise ValueError(f"expected {model.num_features} features, got shape {f.shape}")
    log_pos = -0.5 * np.log(2.0 * np.pi * model.pos_var) - (f - model.pos_mean) ** 2 / (2.0 * model.pos_var)
    log_neg = -0.5 * np.log(2.0 * np.pi * model.neg_var) - (f - model.neg_mean) ** 2 / (2.0 * model.neg_var)
    return float((log_pos - log_neg).sum())


def search(
    model: TrackerModel,
    fx: SparseFeatureExtractor,
    frame: np.ndarray,
    prev: BoundingBox,
    radius: int,
) -> BoundingBox:
    """Best-scoring same-size box within Chebyshev ``radius`` of ``prev``.

    Candidates are clipped to the frame.  Ties keep the offset closest to
    ``prev``: candidates are ranked by (|dy|, |dx|, dy, dx) and only a
    strictly better score displaces the incumbent, so a constant frame
    returns ``prev`` itself.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    frame = np.asarray(frame)
    height, width = frame.shape
    offsets = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda o: (abs(o[0]), abs(o[1]), o[0], o[1]),
    )
    best_box = None
    best_score = -np.inf
    seen: set[tuple[int, int]] = set()
    for dy, dx in offsets:
        x = min(max(prev.x + dx, 0), width - prev.w)
        y = min(max(prev.y + dy, 0), height - prev.h)
        if (y, x) in seen:
            continue
        seen.add((y, x))
        box = BoundingBox(x=x, y=y, w=prev.w, h=prev.h)
        score = classify(model, extract(fx, frame, box))
        if score > best_score:
            best_score = score
            best_box = box
    assert best_box is not None
    return best_box


def init_model(
    pos_features: np.ndarray,
    neg_features_set: list[np.ndarray],
    init_var: float = 0.01,
    lam: float = 0.85,
) -> TrackerModel:
    """Bootstrap a model from the first frame's positive and negative samples."""
    pos = np.asarray(pos_features, dtype=float)
    var0 = np.full(pos.size, max(init_var, VAR_FLOOR))
    if neg_features_set:
        negs = np.stack([np.asarray(f, dtype=float) for f in neg_features_set])
        neg_mean = negs.mean(axis=0)
        neg_var = np.maximum(negs.var(axis=0), max(init_var, VAR_FLOOR))
    else:
        neg_mean = np.zeros(pos.size)
        neg_var = var0.copy()
    return TrackerModel(pos_mean=pos, pos_var=var0, neg_mean=neg_mean, neg_var=neg_var, lam=lam)


def update_model(
    model: TrackerModel,
    pos_features: np.ndarray,
    neg_features_set: list[np.ndarray],
    lam: float,
) -> TrackerModel:
    """Convex blend toward the new samples at rate ``1 - lam``.

    ``lam = 1`` performs no update at all and returns the input model.  The
    negative parameters blend toward the mean of the negative set; an empty
    set leaves them unchanged.  Variances blend the same way, against the
    residual to the updated mean, and are floored at VAR_FLOOR.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return model
    f_pos = np.asarray(pos_features, dtype=float)
    if f_pos.shape != (model.num_features,):
        raise ValueError(f"expected {model.num_features} features, got shape {f_pos.shape}")
    pos_mean = lam * model.pos_mean + (1.0 - lam) * f_pos
    pos_var = np.maximum(lam * model.pos_var + (1.0 - lam) * (f_pos - pos_mean) ** 2, VAR_FLOOR)
    if neg_features_set:
        f_neg = np.stack([np.asarray(f, dtype=float) for f in neg_features_set]).mean(axis=0)
        neg_mean = lam * model.neg_mean + (1.0 - lam) * f_neg
        neg_var = np.maximum(lam * model.neg_var + (1.0 - lam) * (f_neg - neg_mean) ** 2, VAR_FLOOR)
    else:
        neg_mean = model.neg_mean
        neg_var = model.neg_var
    return TrackerModel(pos_mean=pos_mean, pos_var=pos_var, neg_mean=neg_mean, neg_var=neg_var, lam=lam)


def sample_negative_boxes(
    box: BoundingBox,
    frame_shape: tuple[int, int],
    distance: int | None = None,
) -> list[BoundingBox]:
    """Ring of up to 8 same-size boxes around ``box``, clipped to the frame.

    The ring sits at Chebyshev distance >= half the box extent; candidates
    that clip onto the positive box's position are dropped.
    """
    if distance is None:
        distance = max(box.w, box.h) // 2 + 1
    height, width = frame_shape
    out: list[BoundingBox] = []
    seen: set[tuple[int, int]] = set()
    for dy in (-distance, 0, distance):
        for dx in (-distance, 0, distance):
            if dy == 0 and dx == 0:
                continue
            x = min(max(box.x + dx, 0), width - box.w)
            y = min(max(box.y + dy, 0), height - box.h)
            if (y, x) == (box.y, box.x) or (y, x) in seen:
                continue
            seen.add((y, x))
            out.append(BoundingBox(x=x, y=y, w=box.w, h=box.h))
    return out
