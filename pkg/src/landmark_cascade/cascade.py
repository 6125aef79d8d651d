"""Boosted random-fern cascade: training, inference and model files.

Shapes are regressed in the unit frame of each face box. Every stage draws
one feature pool, extracts pixel differences at the current estimates and
fits ``G`` ferns one after another, each on the residual left by the
previous ones.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .balance import AugmentationPlan, InitConfig, jitter_unit_shapes
from .features import DEFAULT_OFFSET_RADIUS, MODES, FeaturePool, extract_batch, sample_pool
from .geometry import BBox, ShapeError, as_shape

log = logging.getLogger(__name__)

MAGIC = "landmark-cascade-model"
FORMAT_VERSION = 1

# stream tags for derived seeds
_SEED_INIT, _SEED_STAGE, _SEED_PREDICT = 1, 2, 3


class ModelFormatError(ValueError):
    pass


class LandmarkCountError(ValueError):
    pass


class TrainingError(ArithmeticError):
    """Raised when a numerical training invariant is violated."""


@dataclass
class TrainConfig:
    stages: int = 10
    ferns: int = 100
    depth: int = 5
    anchors: int = 400
    pair_count: int = 400
    shrinkage: float = 1000.0
    restarts: int = 5
    seed: int = 0
    offset_radius: float = DEFAULT_OFFSET_RADIUS
    init: InitConfig = field(default_factory=InitConfig)
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.init, dict):
            self.init = InitConfig.from_dict(self.init)
        if self.stages < 1:
            raise ValueError("need at least one stage")
        if self.ferns < 0 or self.depth < 1 or self.anchors < 2:
            raise ValueError("ferns >= 0, depth >= 1 and anchors >= 2 required")
        if self.pair_count < self.depth:
            raise ValueError("pair_count must be at least the fern depth")
        if not self.shrinkage >= 0 or self.restarts < 1 or self.threads < 1:
            raise ValueError("shrinkage >= 0, restarts >= 1 and threads >= 1 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = self.init.to_dict()
        d.pop("threads")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(eq=False)
class Fern:
    slots: np.ndarray        # (F,) feature columns
    thresholds: np.ndarray   # (F,) integer cut points
    updates: np.ndarray      # (2**F, 2K) shape increments, unit box frame

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.int64)
        self.updates = np.asarray(self.updates, dtype=np.float64)
        f = len(self.slots)
        if f < 1 or len(self.thresholds) != f:
            raise ValueError("fern needs matching slots and thresholds, depth >= 1")
        if self.updates.ndim != 2 or self.updates.shape[0] != 2 ** f:
            raise ValueError("fern needs exactly 2**F bin updates")
        if not np.all(np.isfinite(self.updates)):
            raise ValueError("non-finite fern update")

    @property
    def depth(self) -> int:
        return len(self.slots)


def fern_bin(features, fern: Fern) -> int:
    """Bin index ``sum_f [feature[slot_f] >= threshold_f] * 2**f``."""
    feats = np.asarray(features)
    if np.any(fern.slots >= len(feats)) or np.any(fern.slots < 0):
        raise IndexError("fern slot beyond the feature vector")
    idx = 0
    for f, (slot, thr) in enumerate(zip(fern.slots, fern.thresholds)):
        if feats[slot] >= thr:
            idx |= 1 << f
    return idx


class FeatureStats:
    """Per-stage column statistics shared by all ferns of the stage."""

    def __init__(self, features):
        x = np.asarray(features)
        self.features = np.ascontiguousarray(x, dtype=np.int16)
        xf = x.astype(np.float64)
        self.centered = xf - xf.mean(axis=0)
        self.std = self.centered.std(axis=0)
        self.p5, self.p95 = np.percentile(xf, [5, 95], axis=0)


def _fit_fern(stats: FeatureStats, residuals: np.ndarray, depth: int, shrinkage: float,
              rng: np.random.Generator):
    n, m = stats.features.shape
    if depth > m:
        raise ValueError(f"fern depth {depth} exceeds feature count {m}")
    usable = stats.std > 0
    slots = np.empty(depth, dtype=np.int64)
    thresholds = np.empty(depth, dtype=np.int64)
    for f in range(depth):
        direction = rng.normal(size=residuals.shape[1])
        direction /= np.linalg.norm(direction)
        proj = residuals @ direction
        proj -= proj.mean()
        cov = stats.centered.T @ proj
        score = np.full(m, -1.0)
        score[usable] = np.abs(cov[usable]) / stats.std[usable]
        score[slots[:f]] = -np.inf
        slot = int(np.argmax(score))
        slots[f] = slot
        cut = rng.uniform(stats.p5[slot], stats.p95[slot])
        thresholds[f] = math.floor(cut + 0.5)
    bins = kernels.fern_bins(stats.features, slots, thresholds)
    sums, counts = kernels.bin_sums(bins, residuals, 2 ** depth)
    denom = counts.astype(np.float64) + shrinkage
    updates = np.zeros_like(sums)
    nz = counts > 0
    updates[nz] = sums[nz] / denom[nz, None]
    return Fern(slots, thresholds, updates), bins, sums, counts


def train_fern(features, residuals, depth: int, shrinkage: float,
               rng: np.random.Generator, stats: FeatureStats | None = None) -> Fern:
    """Fit one fern to ``residuals`` (``(N, D)``) from integer ``features`` (``(N, M)``).

    Each of the ``depth`` slots takes the feature column most correlated with
    a fresh random unit projection of the residuals; its threshold is drawn
    uniformly between the column's 5th and 95th percentiles. Bin updates are
    ``sum(residuals in bin) / (n_bin + shrinkage)``, zero for empty bins.
    """
    r = np.ascontiguousarray(residuals, dtype=np.float64)
    if r.ndim != 2 or len(r) == 0:
        raise ValueError("need a non-empty (N, D) residual array")
    if stats is None:
        stats = FeatureStats(features)
    if stats.features.shape[0] != len(r):
        raise ValueError("features and residuals differ in sample count")
    return _fit_fern(stats, r, depth, shrinkage, rng)[0]


@dataclass(eq=False)
class Stage:
    pool: FeaturePool
    ferns: list[Fern]

    def __post_init__(self):
        for fern in self.ferns:
            if np.any(fern.slots >= self.pool.n_features):
                raise ValueError("fern slot beyond the stage's feature pool")


@dataclass
class StageLog:
    stage: int
    mean_nme: float
    sse: float


@dataclass(eq=False)
class CascadeModel:
    k: int
    mode: str
    mean: np.ndarray
    stages: list[Stage]
    config: TrainConfig
    donors: np.ndarray
    train_log: list[StageLog] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.stages:
            raise ValueError("model needs at least one stage")
        if self.mean.shape != (self.k, 2):
            raise ValueError("mean shape does not match K")

    def check_k(self, k: int) -> None:
        if k != self.k:
            raise LandmarkCountError(f"model has K={self.k} landmarks, data has K={k}")


def _box_arrays(boxes) -> tuple[np.ndarray, np.ndarray]:
    arr = np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=np.float64).reshape(-1, 4)
    return arr[:, None, 0:2], arr[:, None, 2:4]


def _instance_nme(est, truth, wh) -> np.ndarray:
    d = np.linalg.norm((est - truth) * wh, axis=2).mean(axis=1)
    return d / np.sqrt(wh[:, 0, 0] * wh[:, 0, 1])


def train_cascade(samples, plan: AugmentationPlan, mode: str, cfg: TrainConfig) -> CascadeModel:
    """Train a cascade on annotated samples with ``plan.counts[s]`` inits each.

    Raises :class:`TrainingError` if any fern fails to reduce the training
    residual as required by the shrunk bin-mean identity.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty training set")
    if len(plan) != len(samples):
        raise ValueError("augmentation plan length differs from the sample count")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    k = None
    for s in samples:
        if s.truth is None:
            raise ValueError(f"sample {s.id!r} is not annotated")
        kk = as_shape(s.truth).shape[0]
        if k is None:
            k = kk
        elif kk != k:
            raise LandmarkCountError(f"sample {s.id!r} has K={kk}, expected {k}")

    bank = kernels.ImageBank([s.image for s in samples])
    xy, wh = _box_arrays([s.box for s in samples])
    truths = (np.stack([s.truth for s in samples]) - xy) / wh
    mean = truths.mean(axis=0)

    counts = np.asarray(plan.counts, dtype=np.int64)
    inst = np.repeat(np.arange(len(samples)), counts)
    est = np.concatenate([
        jitter_unit_shapes(truths, int(c), cfg.init, np.random.default_rng([cfg.seed, _SEED_INIT, s]))
        for s, c in enumerate(counts)
    ])
    target = truths[inst]
    ixy, iwh = xy[inst], wh[inst]
    n = len(inst)
    residual = (target - est).reshape(n, -1)

    def stage_log(t):
        entry = StageLog(t, float(_instance_nme(est, target, iwh).mean()),
                         float(np.sum(residual * residual)))
        log.info("stage %d: mean NME %.5f", t, entry.mean_nme)
        return entry

    history = [stage_log(0)]
    stages = []
    for t in range(1, cfg.stages + 1):
        rng = np.random.default_rng([cfg.seed, _SEED_STAGE, t])
        pool = sample_pool(mode, k, cfg.anchors, cfg.pair_count, rng, cfg.offset_radius)
        feats = extract_batch(bank, inst, est * iwh + ixy, pool, mean, threads=cfg.threads)
        stats = FeatureStats(feats)
        ferns = []
        sse = float(np.sum(residual * residual))
        for _ in range(cfg.ferns):
            fern, bins, sums, cnt = _fit_fern(stats, residual, cfg.depth, cfg.shrinkage, rng)
            delta = fern.updates[bins]
            residual -= delta
            est += delta.reshape(n, k, 2)
            _check_descent(sse, residual, sums, cnt, cfg.shrinkage)
            sse = float(np.sum(residual * residual))
            ferns.append(fern)
        stages.append(Stage(pool, ferns))
        history.append(stage_log(t))

    return CascadeModel(k, mode, mean, stages, cfg, truths, history)


def _check_descent(sse_old: float, residual, sums, counts, shrinkage: float) -> None:
    # per bin: SSE_new = SSE_old - n |mu|^2 (2c - c^2), c = n / (n + kappa)
    nz = counts > 0
    n = counts[nz].astype(np.float64)
    c = n / (n + shrinkage)
    mu2 = np.sum(sums[nz] ** 2, axis=1) / (n * n)
    drop = float(np.sum(n * mu2 * (2 * c - c * c)))
    sse_new = float(np.sum(residual * residual))
    tol = 1e-9 * max(sse_old, 1.0)
    if drop < 0 or sse_new > sse_old + tol or abs((sse_old - sse_new) - drop) > tol:
        raise TrainingError(f"fern increased training error: {sse_old} -> {sse_new} (expected drop {drop})")


# --- inference -------------------------------------------------------------

def initial_shapes(model: CascadeModel, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """Restart 0 is the mean shape, the rest are jittered training shapes."""
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    first = model.mean[None]
    if restarts == 1:
        return first.copy()
    rest = jitter_unit_shapes(model.donors, restarts - 1, model.config.init, rng)
    return np.concatenate([first, rest])


def run_stages(model: CascadeModel, bank, img_idx, unit_shapes, xy, wh,
               threads: int = 1) -> np.ndarray:
    est = np.array(unit_shapes, dtype=np.float64)
    n = len(est)
    for stage in model.stages:
        feats = extract_batch(bank, img_idx, est * wh + xy, stage.pool, model.mean, threads=threads)
        flat = est.reshape(n, -1)
        for fern in stage.ferns:
            flat += fern.updates[kernels.fern_bins(feats, fern.slots, fern.thresholds)]
    return est


def combine_restarts(results) -> np.ndarray:
    """Coordinate-wise median over restarts; ``results`` is ``(D, K, 2)``."""
    return np.median(np.asarray(results, dtype=np.float64), axis=0)


def predict_with_inits(model: CascadeModel, images, boxes, inits, threads: int = 1) -> np.ndarray:
    """Run explicit unit-frame initialisations ``(N, D, K, 2)``; returns pixel shapes."""
    inits = np.asarray(inits, dtype=np.float64)
    n, d = inits.shape[:2]
    if inits.shape[2:] != (model.k, 2):
        raise LandmarkCountError(f"initial shapes are not (K={model.k}, 2)")
    bank = kernels.ImageBank(images)
    xy, wh = _box_arrays(boxes)
    idx = np.repeat(np.arange(n), d)
    out = run_stages(model, bank, idx, inits.reshape(n * d, model.k, 2),
                     xy[idx], wh[idx], threads=threads)
    med = np.median(out.reshape(n, d, model.k, 2), axis=1)
    return med * wh + xy


def batch_inits(model: CascadeModel, n: int, restarts: int, seed: int) -> np.ndarray:
    return np.stack([initial_shapes(model, restarts, np.random.default_rng([seed, _SEED_PREDICT, i]))
                     for i in range(n)])


def predict_batch(model: CascadeModel, images, boxes, restarts: int | None = None,
                  seed: int = 0, threads: int = 1) -> np.ndarray:
    """Predict many faces; sample ``i`` draws its restarts from ``(seed, i)``."""
    images = list(images)
    d = restarts or model.config.restarts
    inits = batch_inits(model, len(images), d, seed)
    return predict_with_inits(model, images, boxes, inits, threads=threads)


def predict(model: CascadeModel, image, box: BBox, restarts: int | None = None,
            rng: np.random.Generator | None = None) -> np.ndarray:
    d = restarts or model.config.restarts
    rng = rng if rng is not None else np.random.default_rng(0)
    inits = initial_shapes(model, d, rng)[None]
    return predict_with_inits(model, [image], [box], inits)[0]


def inits_digest(inits) -> str:
    return hashlib.sha256(np.ascontiguousarray(inits, dtype="<f8").tobytes()).hexdigest()


# --- model files -----------------------------------------------------------

def _enc(arr: np.ndarray, dtype: str) -> dict:
    a = np.ascontiguousarray(arr, dtype=dtype)
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(obj: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        dtype = np.dtype(obj["dtype"])
        shape = tuple(int(v) for v in obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad array payload: {exc}") from exc
    if len(raw) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise ModelFormatError("array payload is truncated")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _pool_doc(pool: FeaturePool) -> dict:
    return {
        "mode": pool.mode,
        "base": _enc(pool.base, "<i8"), "j": _enc(pool.idx_j, "<i8"), "k": _enc(pool.idx_k, "<i8"),
        "alpha": _enc(pool.alpha, "<f8"), "beta": _enc(pool.beta, "<f8"),
        "offsets": _enc(pool.offsets, "<f8"), "pairs": _enc(pool.pairs, "<i8"),
    }


def _pool_from(doc: dict) -> FeaturePool:
    return FeaturePool(doc["mode"], _dec(doc["base"]), _dec(doc["j"]), _dec(doc["k"]),
                       _dec(doc["alpha"]), _dec(doc["beta"]), _dec(doc["offsets"]), _dec(doc["pairs"]))


def model_to_json(model: CascadeModel) -> str:
    stages = []
    for st in model.stages:
        ferns = {}
        if st.ferns:
            ferns = {
                "slots": _enc(np.stack([f.slots for f in st.ferns]), "<i8"),
                "thresholds": _enc(np.stack([f.thresholds for f in st.ferns]), "<i8"),
                "updates": _enc(np.stack([f.updates for f in st.ferns]), "<f8"),
            }
        stages.append({"pool": _pool_doc(st.pool), "ferns": ferns})
    doc = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "mode": model.mode,
        "mean": _enc(model.mean, "<f8"),
        "donors": _enc(model.donors, "<f8"),
        "train_config": model.config.to_dict(),
        "train_log": [asdict(e) for e in model.train_log],
        "stages": stages,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def model_from_json(text: str) -> CascadeModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON (truncated?): {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise ModelFormatError("not a landmark-cascade model file (bad magic)")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {doc.get('format_version')!r}")
    try:
        stages = []
        for sd in doc["stages"]:
            pool = _pool_from(sd["pool"])
            ferns = []
            if sd["ferns"]:
                slots, thr, upd = (_dec(sd["ferns"][key]) for key in ("slots", "thresholds", "updates"))
                ferns = [Fern(slots[g], thr[g], upd[g]) for g in range(len(slots))]
            stages.append(Stage(pool, ferns))
        model = CascadeModel(
            int(doc["k"]), doc["mode"], _dec(doc["mean"]), stages,
            TrainConfig.from_dict(doc["train_config"]), _dec(doc["donors"]),
            [StageLog(**e) for e in doc.get("train_log", [])],
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    return model


def save_model(model: CascadeModel) -> bytes:
    return model_to_json(model).encode("utf-8")


def load_model(data: bytes | str) -> CascadeModel:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError("model file is not UTF-8") from exc
    return model_from_json(data)
