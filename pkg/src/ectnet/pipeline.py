"""End-to-end steps: synthetic data, ECT preprocessing, training, embedding and
the isometry-invariance analysis. Each step reads and writes plain files."""
from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .complex import (EmbeddedComplex, Isometry, apply_isometry, euler_characteristic,
                      normalize_scale, random_isometry, read_mesh, validate_complex, write_off)
from .config import ExperimentConfig
from .nn import (ModelParams, ShapeError, TrainConfig, compute_gradients, make_optimizer,
                 model_forward, octagon_targets, propagation_matrix, smooth_l1_loss)
from .sphere import icosphere
from .synth import CLASSES, EXPECTED_CHI, make_instance
from .topology import EctField, ect_field

log = logging.getLogger(__name__)

SPLITS = ("train", "eval")


class PipelineError(ValueError):
    """Invalid inputs to a pipeline step (as opposed to I/O failures)."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str   # relative to the manifest's directory, or absolute
    label: int
    split: str


@dataclass
class DatasetManifest:
    classes: list
    entries: list
    root: Path = Path(".")

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        out = {}
        for e in self.entries:
            out[(e.label, e.split)] = out.get((e.label, e.split), 0) + 1
        return out

    def validate(self, per_class_train: int | None = None, check_files: bool = True) -> None:
        C = len(self.classes)
        if not 1 <= C <= 8:
            raise PipelineError("manifest must name between 1 and 8 classes")
        labels = {e.label for e in self.entries}
        if labels != set(range(C)):
            raise PipelineError(f"labels must be exactly 0..{C - 1}, found {sorted(labels)}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise PipelineError(f"{e.path}: unknown split {e.split!r}")
            if check_files and not self.resolve(e).is_file():
                raise FileNotFoundError(f"mesh listed in manifest not found: {self.resolve(e)}")
        stems = [Path(e.path).stem for e in self.entries]
        if len(set(stems)) != len(stems):
            raise PipelineError("mesh file names must be unique (they name the ECT files)")
        if per_class_train is not None:
            counts = self.counts()
            for c in range(C):
                got = counts.get((c, "train"), 0)
                if got != per_class_train:
                    raise PipelineError(f"class {self.classes[c]!r} has {got} training meshes, "
                                        f"expected {per_class_train}")

    def to_json(self) -> str:
        return json.dumps({"classes": list(self.classes),
                           "entries": [{"path": e.path, "label": e.label, "split": e.split}
                                       for e in self.entries]}, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path, check_files: bool = True) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
            entries = [ManifestEntry(str(e["path"]), int(e["label"]), str(e["split"]))
                       for e in data["entries"]]
            classes = list(data["classes"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise PipelineError(f"{path}: malformed manifest ({exc})") from None
        m = cls(classes, entries, path.parent)
        m.validate(check_files=check_files)
        return m


def synth_dataset(out_dir, classes=CLASSES, per_class: int = 5, deform_seed: int = 0,
                  per_class_eval: int = 0, mesh_level: int = 3) -> DatasetManifest:
    """Write deformed meshes of each class as OFF files plus ``manifest.json``."""
    if per_class < 1:
        raise PipelineError("per_class must be at least 1")
    if per_class_eval < 0:
        raise PipelineError("per_class_eval must be non-negative")
    out = Path(out_dir)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for label, name in enumerate(classes):
        for i in range(per_class + per_class_eval):
            split = "train" if i < per_class else "eval"
            seed = int(np.random.SeedSequence([deform_seed, label, i]).generate_state(1)[0])
            K = make_instance(name, seed, level=mesh_level)
            chi = euler_characteristic(K)
            if chi != EXPECTED_CHI[name]:
                raise RuntimeError(f"{name} instance has chi {chi}, expected {EXPECTED_CHI[name]}")
            rel = f"meshes/{name}_{i:03d}.off"
            write_off(K, out / rel)
            entries.append(ManifestEntry(rel, label, split))
    manifest = DatasetManifest(list(classes), entries, out)
    manifest.save(out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# preprocessing


def mesh_to_field(K: EmbeddedComplex, directions, config: ExperimentConfig) -> EctField:
    """Normalise the scale of ``K`` and compute its discretised ECT."""
    return ect_field(normalize_scale(K), directions, a=config.a, t=config.resolution)


def ect_path(ect_dir, entry: ManifestEntry) -> Path:
    return Path(ect_dir) / (Path(entry.path).stem + ".ectf")


def load_mesh_checked(path) -> EmbeddedComplex:
    K = read_mesh(path)
    # the geometric intersection check is quadratic in faces; skipped here
    errors = [v for v in validate_complex(K, geometric=False) if v.severity == "error"]
    if errors:
        raise PipelineError(f"{path}: {errors[0].kind}: {errors[0].message}")
    return K


def preprocess_ect(manifest: DatasetManifest, config: ExperimentConfig, out_dir) -> dict:
    """Write one ``.ectf`` file per manifest entry; returns {mesh path: ectf path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    D, _ = icosphere(config.level)
    written = {}
    for e in manifest.entries:
        K = load_mesh_checked(manifest.resolve(e))
        field = mesh_to_field(K, D, config)
        dest = ect_path(out, e)
        field.save(dest)
        written[e.path] = dest
    return written


def load_fields(manifest: DatasetManifest, entries, ect_dir, config: ExperimentConfig) -> list:
    D, _ = icosphere(config.level)
    fields = []
    for e in entries:
        p = ect_path(ect_dir, e)
        if not p.is_file():
            raise FileNotFoundError(f"no ECT file for mesh {e.path} (expected {p}); run preprocess first")
        field = EctField.load(p)
        if field.curves.shape != (len(D), config.resolution) or field.a != config.a:
            raise ShapeError(f"{p}: field is {field.curves.shape} with a={field.a}, config expects "
                             f"({len(D)}, {config.resolution}) with a={config.a}")
        fields.append(field)
    return fields


# ---------------------------------------------------------------------------
# training and embedding


@dataclass
class TrainResult:
    params: ModelParams
    log: list          # (epoch, lr, mean batch loss)
    final_loss: float  # full train-set loss of the final weights


def fit(fields, labels, num_classes: int, level: int, cfg: TrainConfig) -> TrainResult:
    """Mini-batch training toward octagon targets; deterministic given ``cfg.seed``."""
    _, G = icosphere(level)
    prop = propagation_matrix(G, cfg.k)
    targets = octagon_targets(num_classes)
    data = [(f, targets[y]) for f, y in zip(fields, labels)]
    P = ModelParams.init(cfg.channels, cfg.seed)
    opt = make_optimizer(P, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    rows = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        lr = cfg.learning_rate(epoch)
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = [data[i] for i in order[s:s + cfg.batch_size]]
            loss, grads = compute_gradients(batch, prop, P, cfg)
            P = opt.step(P, grads, lr)
            total += loss * len(batch)
        rows.append((epoch, lr, total / len(data)))
    final = float(np.mean([smooth_l1_loss(model_forward(f, prop, P, cfg), t, cfg.beta)[0]
                           for f, t in data]))
    return TrainResult(P, rows, final)


def train_model(manifest: DatasetManifest, config: ExperimentConfig, ect_dir, out_dir) -> TrainResult:
    """Train on the manifest's train split; writes ``model.ectw`` and ``train_log.csv``."""
    entries = manifest.split("train")
    if not entries:
        raise PipelineError("manifest has no training meshes")
    if len(manifest.classes) != config.num_classes:
        raise PipelineError(f"manifest has {len(manifest.classes)} classes, config {config.num_classes}")
    fields = load_fields(manifest, entries, ect_dir, config)
    cfg = config.train_config()
    result = fit(fields, [e.label for e in entries], config.num_classes, config.level, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.params.save(out / "model.ectw", cfg)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss"])
        for epoch, lr, loss in result.log:
            w.writerow([epoch, fmt(lr), fmt(loss)])
    log.info("final train loss %.6g", result.final_loss)
    return result


def load_checkpoint(path, config: ExperimentConfig) -> ModelParams:
    P, meta = ModelParams.load(path)
    if meta["channels"] != config.channels:
        raise ShapeError(f"checkpoint has {meta['channels']} channels, config {config.channels}")
    if meta["k"] != config.k or meta["slope"] != config.slope:
        raise ShapeError(f"checkpoint was trained with k={meta['k']}, slope={meta['slope']}")
    if P.fc_weight.shape[0] != 2:
        raise ShapeError("checkpoint output is not 2-dimensional")
    return P


def _params(checkpoint, config) -> ModelParams:
    return checkpoint if isinstance(checkpoint, ModelParams) else load_checkpoint(checkpoint, config)


def embed_fields(fields, params: ModelParams, config: ExperimentConfig) -> np.ndarray:
    _, G = icosphere(config.level)
    cfg = config.train_config()
    prop = propagation_matrix(G, cfg.k)
    return np.array([model_forward(f, prop, params, cfg) for f in fields]).reshape(-1, 2)


def embed_meshes(manifest: DatasetManifest, checkpoint, config: ExperimentConfig, ect_dir,
                 out_csv=None) -> list:
    """Rows of (mesh path, label, x, y), one per manifest entry, in manifest order."""
    P = _params(checkpoint, config)
    Y = embed_fields(load_fields(manifest, manifest.entries, ect_dir, config), P, config)
    rows = [(e.path, e.label, float(x), float(y)) for e, (x, y) in zip(manifest.entries, Y)]
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mesh", "label", "x", "y"])
            for path, label, x, y in rows:
                w.writerow([path, label, fmt(x), fmt(y)])
    return rows


def nearest_centroid_accuracy(train_xy, train_labels, test_xy, test_labels) -> float:
    """Fraction of test points closer to their own class's train centroid than to any other."""
    train_xy, test_xy = np.asarray(train_xy), np.asarray(test_xy)
    train_labels, test_labels = np.asarray(train_labels), np.asarray(test_labels)
    classes = np.unique(train_labels)
    cent = np.array([train_xy[train_labels == c].mean(axis=0) for c in classes])
    d = np.linalg.norm(test_xy[:, None, :] - cent[None], axis=-1)
    return float(np.mean(classes[np.argmin(d, axis=1)] == test_labels))


# ---------------------------------------------------------------------------
# isometry-invariance error


def transform_seed(base: int, repeat: int, mesh: str, index: int) -> int:
    """Seed for one random isometry; depends on the mesh name, not its manifest position."""
    key = zlib.crc32(mesh.encode())
    return int(np.random.SeedSequence([base, repeat, key, index]).generate_state(1, np.uint64)[0])


def spread(points: np.ndarray) -> float:
    """Root-mean-square distance of the points from their mean."""
    points = np.asarray(points, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum((points - points.mean(axis=0)) ** 2, axis=1))))


@dataclass
class InvarianceResult:
    rows: list      # (repeat, mesh, label, spread)
    per_repeat: list
    error: float


def invariance_error_analysis(manifest: DatasetManifest, checkpoint, config: ExperimentConfig,
                              num_transforms: int | None = None, num_repeats: int | None = None,
                              entries=None, identity: bool = False, ect_dir=None,
                              out_csv=None) -> InvarianceResult:
    """Spread of embeddings under random rigid motions, averaged over meshes and repeats.

    Every transformed mesh is re-normalised and re-transformed from scratch. With
    ``invariance_mode == "retrain"`` a fresh model is trained for each repeat
    (seed ``config.seed + repeat``) from the preprocessed fields in ``ect_dir``;
    otherwise ``checkpoint`` is reused. ``identity`` replaces every isometry by the
    identity, which must give zero error.
    """
    T = num_transforms or config.num_transforms
    R = num_repeats or config.num_repeats
    entries = manifest.entries if entries is None else entries
    D, G = icosphere(config.level)
    cfg = config.train_config()
    prop = propagation_matrix(G, cfg.k)
    meshes = [load_mesh_checked(manifest.resolve(e)) for e in entries]
    rows, per_repeat = [], []
    P = None
    for r in range(R):
        if config.invariance_mode == "retrain":
            if ect_dir is None:
                raise PipelineError("retrain mode needs the preprocessed ECT directory")
            train = manifest.split("train")
            res = fit(load_fields(manifest, train, ect_dir, config), [e.label for e in train],
                      config.num_classes, config.level, replace(cfg, seed=cfg.seed + r))
            P = res.params
        elif P is None:
            P = _params(checkpoint, config)
        spreads = []
        for e, K in zip(entries, meshes):
            Y = []
            for s in range(T):
                iso = Isometry.identity(3) if identity else random_isometry(
                    transform_seed(config.transform_seed, r, e.path, s))
                field = mesh_to_field(apply_isometry(K, iso), D, config)
                Y.append(model_forward(field, prop, P, cfg))
            sp = spread(np.array(Y))
            spreads.append(sp)
            rows.append((r, e.path, e.label, sp))
        per_repeat.append(float(np.mean(spreads)))
    result = InvarianceResult(rows, per_repeat, float(np.mean(per_repeat)))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["repeat", "mesh", "label", "spread"])
            for r, path, label, sp in rows:
                w.writerow([r, path, label, fmt(sp)])
    return result
