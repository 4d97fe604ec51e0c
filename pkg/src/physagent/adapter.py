"""Keypoint-to-command adapter: the embodiment-specific half of the pipeline.

Each keypoint frame becomes a 40-dimensional feature vector (28 normalized
coordinates + 12 inter-keypoint link lengths), missing entries are imputed
with training-set column means, and fourteen independently boosted
regressors map features to the 14-dim command vector. Dataset collection
samples uniformly inside the joint limits and renders keypoints through the
simulator's forward kinematics, so the learning problem is exactly the
inverse of the projection pipeline.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import gbdt
from .errors import EmptyDataset, UnfittedModel
from .kinematics import (
    COMMAND_DIM,
    KEYPOINT_COUNT,
    KEYPOINT_NAMES,
    CameraModel,
    JointState,
    KeypointFrame,
    RobotModel,
    forward_kinematics,
    project,
)
from .world import Rollout

FEATURE_DIM = 40
N_COORD_FEATURES = 28
N_LINK_FEATURES = 12
IMPUTER_FALLBACK = 0.5

# Consecutive-keypoint pairs whose normalized distances form features 28..39:
# six per arm (J1-J2 .. J5-J6, J6-tip).
LINK_PAIRS = tuple((a + i, a + i + 1) for a in (0, 7) for i in range(6))


@dataclass(frozen=True)
class FeatureVector:
    """40 feature values with a per-entry presence mask; absent entries are NaN."""

    values: np.ndarray
    present_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.present_mask, dtype=bool)
        if v.shape != (FEATURE_DIM,) or m.shape != (FEATURE_DIM,):
            raise ValueError(f"expected {FEATURE_DIM} feature entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "present_mask", m)


def _features_from_arrays(uv: np.ndarray, vis: np.ndarray,
                          image_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized feature construction: (n,14,2) pixels -> (n,40) with NaN."""
    w, h = image_size
    norm = uv / np.array([float(w), float(h)])
    values = np.empty((uv.shape[0], FEATURE_DIM))
    mask = np.empty((uv.shape[0], FEATURE_DIM), dtype=bool)
    values[:, :N_COORD_FEATURES] = norm.reshape(uv.shape[0], N_COORD_FEATURES)
    mask[:, :N_COORD_FEATURES] = np.repeat(vis, 2, axis=1)
    for j, (a, b) in enumerate(LINK_PAIRS):
        diff = norm[:, b] - norm[:, a]
        values[:, N_COORD_FEATURES + j] = np.hypot(diff[:, 0], diff[:, 1])
        mask[:, N_COORD_FEATURES + j] = vis[:, a] & vis[:, b]
    values[~mask] = np.nan
    return values, mask


def extract_features(frame: KeypointFrame, image_size: tuple[int, int]) -> FeatureVector:
    """40-dim features: coordinates scaled by image size, then link lengths.

    A link-length entry is absent exactly when either endpoint keypoint is
    invisible; absent entries are NaN and flagged in the mask.
    """
    uv = np.array([[u, v] for u, v, _ in frame.points])
    vis = frame.visible()[None, :]
    values, mask = _features_from_arrays(uv[None, :, :], vis, image_size)
    return FeatureVector(values=values[0], present_mask=mask[0])


@dataclass(frozen=True)
class ImputerModel:
    """Mean imputation: absent entries take training-set column means."""

    column_means: np.ndarray
    fallback: float = IMPUTER_FALLBACK

    def __post_init__(self):
        m = np.asarray(self.column_means, dtype=float)
        if m.shape != (FEATURE_DIM,):
            raise ValueError(f"expected {FEATURE_DIM} column means")
        if not np.all(np.isfinite(m)):
            raise ValueError("column means must be finite")
        object.__setattr__(self, "column_means", m)

    def transform(self, values: np.ndarray) -> np.ndarray:
        filled = np.asarray(values, dtype=float).copy()
        absent = np.isnan(filled)
        filled[absent] = np.broadcast_to(self.column_means, filled.shape)[absent]
        return filled


def fit_imputer(features: np.ndarray) -> ImputerModel:
    """Column means over present (non-NaN) entries; all-missing columns fall back."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[0] < 1 or X.size == 0:
        raise EmptyDataset("imputer needs at least one sample")
    with np.errstate(invalid="ignore"):
        means = np.nanmean(X, axis=0)
    means[~np.isfinite(means)] = IMPUTER_FALLBACK
    return ImputerModel(column_means=means)


def apply_imputer(model: ImputerModel, fv: FeatureVector) -> FeatureVector:
    """Fill absent entries; present entries pass through untouched."""
    return FeatureVector(values=model.transform(fv.values), present_mask=fv.present_mask)


@dataclass(frozen=True)
class AdapterSample:
    frame: KeypointFrame
    target: JointState
    camera_id: str = "cam0"


@dataclass(frozen=True)
class AdapterDataset:
    samples: tuple[AdapterSample, ...]
    image_size: tuple[int, int]
    seed: int
    limits_lo: tuple[float, ...] = ()
    limits_hi: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.samples:
            raise EmptyDataset("dataset must be nonempty")

    def feature_matrix(self) -> np.ndarray:
        uv = np.array([[[u, v] for u, v, _ in s.frame.points] for s in self.samples])
        vis = np.array([s.frame.visible() for s in self.samples])
        values, _ = _features_from_arrays(uv, vis, self.image_size)
        return values

    def target_matrix(self) -> np.ndarray:
        return np.array([s.target.values for s in self.samples])


def collect_dataset(model: RobotModel, camera: CameraModel, n: int, seed: int,
                    visibility_dropout: float = 0.0,
                    camera_id: str = "cam0") -> AdapterDataset:
    """n samples at uniformly random in-limit states, keypoints by FK+projection.

    visibility_dropout randomly hides keypoints (on top of out-of-image
    culling) to exercise the imputation path.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = model.limits_lo(), model.limits_hi()
    samples = []
    for _ in range(n):
        values = rng.uniform(lo, hi)
        state = JointState(values=values)
        frame = project(camera, forward_kinematics(model, state))
        if visibility_dropout > 0.0:
            drops = rng.random(KEYPOINT_COUNT) < visibility_dropout
            frame = KeypointFrame(points=tuple(
                (u, v, vis and not drop)
                for (u, v, vis), drop in zip(frame.points, drops)))
        samples.append(AdapterSample(frame=frame, target=state, camera_id=camera_id))
    return AdapterDataset(
        samples=tuple(samples),
        image_size=camera.image_size,
        seed=seed,
        limits_lo=tuple(lo.tolist()),
        limits_hi=tuple(hi.tolist()),
    )


@dataclass
class AdapterModel:
    """Imputer plus 14 fitted boosted-tree regressors, one per output."""

    imputer: ImputerModel
    regressors: list[gbdt.GBDTModel]
    keypoint_ordering: tuple[str, ...] = KEYPOINT_NAMES
    training_report: dict = field(default_factory=dict)
    image_size: tuple[int, int] = (640, 480)
    limits_lo: tuple[float, ...] = ()
    limits_hi: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.regressors) != COMMAND_DIM:
            raise ValueError(f"expected {COMMAND_DIM} regressors")

    def predict_matrix(self, features: np.ndarray) -> np.ndarray:
        """(n, 14) clamped command predictions for imputed feature rows."""
        X = self.imputer.transform(features)
        out = np.column_stack([gbdt.predict(r, X) for r in self.regressors])
        if self.limits_lo and self.limits_hi:
            out = np.clip(out, self.limits_lo, self.limits_hi)
        return out

    def predict_commands(self, rollout: Rollout) -> list[JointState]:
        return predict_commands(self, rollout)


def _canonical_order(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row order independent of input permutation (ties broken by all columns)."""
    keys = np.hstack([features, targets])
    keys = np.nan_to_num(keys, nan=-1e300)
    return np.lexsort(keys.T[::-1])


def fit_adapter(dataset: AdapterDataset, config: gbdt.GBDTConfig | None = None,
                seed: int = 0, holdout_fraction: float = 0.1) -> AdapterModel:
    """Fit imputer + per-output regressors; report held-out MAE per output.

    Rows are first put in a canonical order so the fit is invariant to the
    dataset's row permutation, then shuffled with the given seed; the last
    holdout_fraction of the shuffle becomes the report split.
    """
    config = config or gbdt.GBDTConfig()
    n = len(dataset.samples)
    if n < 100:
        raise EmptyDataset(f"adapter fit needs >= 100 samples, got {n}")

    features = dataset.feature_matrix()
    targets = dataset.target_matrix()
    order = _canonical_order(features, targets)
    features, targets = features[order], targets[order]
    perm = np.random.default_rng(seed).permutation(n)
    features, targets = features[perm], targets[perm]

    n_holdout = max(1, int(round(holdout_fraction * n)))
    train_X, train_y = features[:-n_holdout], targets[:-n_holdout]
    hold_X, hold_y = features[-n_holdout:], targets[-n_holdout:]

    imputer = fit_imputer(train_X)
    train_Xi = imputer.transform(train_X)
    hold_Xi = imputer.transform(hold_X)

    regressors = []
    maes = []
    for k in range(COMMAND_DIM):
        cfg = replace(config, seed=config.seed + k)
        reg = gbdt.fit(train_Xi, train_y[:, k], cfg)
        regressors.append(reg)
        pred = gbdt.predict(reg, hold_Xi)
        maes.append(float(np.mean(np.abs(pred - hold_y[:, k]))))

    report = {
        "holdout_mae": maes,
        "n_train": int(train_X.shape[0]),
        "n_holdout": int(hold_X.shape[0]),
        "n_iterations": [len(r.trees) for r in regressors],
    }
    return AdapterModel(
        imputer=imputer,
        regressors=regressors,
        training_report=report,
        image_size=dataset.image_size,
        limits_lo=dataset.limits_lo,
        limits_hi=dataset.limits_hi,
    )


def predict_commands(model: AdapterModel, rollout: Rollout) -> list[JointState]:
    """One clamped JointState per rollout frame."""
    if not isinstance(model, AdapterModel) or not model.regressors:
        raise UnfittedModel("predict_commands requires a fitted AdapterModel")
    uv = np.array([[[u, v] for u, v, _ in f.points] for f in rollout.frames])
    vis = np.array([f.visible() for f in rollout.frames])
    values, _ = _features_from_arrays(uv, vis, model.image_size)
    preds = model.predict_matrix(values)
    dt = 1.0 / rollout.fps
    return [JointState(values=preds[i], timestamp=i * dt) for i in range(len(rollout.frames))]


class OracleDecoder:
    """Perfect adapter: replays the generator's stored joint trajectory.

    Useful as a loop component when the experiment should isolate
    reasoning/recovery behaviour from regression error.
    """

    image_size = None

    def predict_commands(self, rollout: Rollout) -> list[JointState]:
        if rollout.joint_trajectory is None:
            raise UnfittedModel("rollout carries no joint trajectory to replay")
        dt = 1.0 / rollout.fps
        return [JointState(values=row, timestamp=i * dt)
                for i, row in enumerate(rollout.joint_trajectory)]


# ---------------------------------------------------------------------------
# Dataset CSV persistence
# ---------------------------------------------------------------------------

def save_dataset_csv(path, dataset: AdapterDataset) -> None:
    """One row per sample: 28 keypoint coords, 14 visibility flags, 14 targets, seed."""
    cols = [c for i in range(KEYPOINT_COUNT) for c in (f"u{i}", f"v{i}")]
    cols += [f"vis{i}" for i in range(KEYPOINT_COUNT)]
    cols += [f"t{i}" for i in range(COMMAND_DIM)]
    cols.append("seed")
    with open(path, "w") as fh:
        fh.write("# physagent adapter dataset v1\n")
        fh.write(f"# image_size={dataset.image_size[0]},{dataset.image_size[1]}\n")
        fh.write(f"# limits_lo={','.join('%.17g' % x for x in dataset.limits_lo)}\n")
        fh.write(f"# limits_hi={','.join('%.17g' % x for x in dataset.limits_hi)}\n")
        fh.write(",".join(cols) + "\n")
        for s in dataset.samples:
            row = []
            for u, v, _ in s.frame.points:
                row += ["%.17g" % u, "%.17g" % v]
            row += [str(int(vis)) for vis in s.frame.visible()]
            row += ["%.17g" % t for t in s.target.values]
            row.append(str(dataset.seed))
            fh.write(",".join(row) + "\n")


def load_dataset_csv(path) -> AdapterDataset:
    image_size = (640, 480)
    limits_lo: tuple[float, ...] = ()
    limits_hi: tuple[float, ...] = ()
    samples = []
    seed = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("image_size="):
                    w, h = body.split("=", 1)[1].split(",")
                    image_size = (int(w), int(h))
                elif body.startswith("limits_lo="):
                    limits_lo = tuple(float(x) for x in body.split("=", 1)[1].split(","))
                elif body.startswith("limits_hi="):
                    limits_hi = tuple(float(x) for x in body.split("=", 1)[1].split(","))
                continue
            if line.startswith("u0,"):
                continue
            parts = line.split(",")
            uv = [float(x) for x in parts[:2 * KEYPOINT_COUNT]]
            vis = [bool(int(x)) for x in
                   parts[2 * KEYPOINT_COUNT:3 * KEYPOINT_COUNT]]
            targets = [float(x) for x in
                       parts[3 * KEYPOINT_COUNT:3 * KEYPOINT_COUNT + COMMAND_DIM]]
            seed = int(parts[-1])
            points = tuple((uv[2 * i], uv[2 * i + 1], vis[i])
                           for i in range(KEYPOINT_COUNT))
            samples.append(AdapterSample(
                frame=KeypointFrame(points=points),
                target=JointState(values=np.array(targets)),
            ))
    return AdapterDataset(samples=tuple(samples), image_size=image_size, seed=seed,
                          limits_lo=limits_lo, limits_hi=limits_hi)


# ---------------------------------------------------------------------------
# Model container persistence
# ---------------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def save_adapter(path, model: AdapterModel) -> None:
    """JSON container (gzipped when the path ends in .gz) with a format version."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "image_size": list(model.image_size),
        "keypoint_ordering": list(model.keypoint_ordering),
        "imputer": {
            "column_means": model.imputer.column_means.tolist(),
            "fallback": model.imputer.fallback,
        },
        "limits_lo": list(model.limits_lo),
        "limits_hi": list(model.limits_hi),
        "training_report": model.training_report,
        "regressors": [r.to_dict() for r in model.regressors],
    }
    data = json.dumps(doc, separators=(",", ":"), sort_keys=True)
    if str(path).endswith(".gz"):
        with gzip.open(path, "wt") as fh:
            fh.write(data)
    else:
        with open(path, "w") as fh:
            fh.write(data)


def load_adapter(path) -> AdapterModel:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rt") as fh:
            doc = json.load(fh)
    else:
        with open(path) as fh:
            doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported adapter format {doc.get('format_version')!r}")
    imputer = ImputerModel(
        column_means=np.asarray(doc["imputer"]["column_means"], dtype=float),
        fallback=float(doc["imputer"]["fallback"]),
    )
    return AdapterModel(
        imputer=imputer,
        regressors=[gbdt.GBDTModel.from_dict(d) for d in doc["regressors"]],
        keypoint_ordering=tuple(doc["keypoint_ordering"]),
        training_report=doc.get("training_report", {}),
        image_size=tuple(doc["image_size"]),
        limits_lo=tuple(doc.get("limits_lo", ())),
        limits_hi=tuple(doc.get("limits_hi", ())),
    )
