"""Training loops: autoencoder pretraining, linear probes, supervised runs.

All three loops share the same skeleton: seeded shuffling, fixed-size
batches with gradients averaged over the batch, early stopping on
validation loss with parameter rollback to the best epoch. Runs are
reproducible from (config, manifest, precompute dir) alone; the config
hash in every metrics record identifies the exact settings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .containers import load_pspw, save_pspw
from .errors import (
    DataError,
    DivergedLoss,
    MissingCheckpoint,
    MissingPrecompute,
)
from .layers import Adam, mlp_forward
from .manifest import DatasetManifest
from .models import (
    ModelConfig,
    classifier_forward,
    encode,
    init_autoencoder,
    init_classifier_head,
    autoencoder_forward,
)
from .precompute import bundle_from_psph

__all__ = [
    "TrainConfig",
    "MetricsRecord",
    "load_split_bundles",
    "run_pretrain",
    "run_probe",
    "run_supervised",
    "evaluate_classifier",
    "export_embeddings",
    "load_checkpoint",
    "has_cluster_artifact",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one run. Values here are artifact defaults
    chosen for the small synthetic corpus, not results from any larger
    study; override them freely via config files or flags."""

    pooling: str = "ps_mean"
    size: str = "S"
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 10
    k_S: int = 8

    def model_config(self) -> ModelConfig:
        return ModelConfig.for_size(self.size, self.pooling, k_S=self.k_S)


def config_hash(config: TrainConfig, kind: str, manifest: DatasetManifest,
                ) -> str:
    doc = dict(asdict(config), kind=kind,
               label_fraction=manifest.label_fraction,
               n_classes=manifest.n_classes,
               dataset_seed=manifest.seed)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class MetricsRecord:
    """What one run did: loss curve, final quality, and provenance."""

    run_id: str
    config_hash: str
    epochs: tuple  # (epoch index, train loss, val loss) triples
    test_accuracy: float | None
    label_fraction: float
    wall_seconds: float

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(map(tuple, self.epochs)))
        if self.test_accuracy is not None:
            if not 0.0 <= self.test_accuracy <= 1.0:
                raise DataError(
                    f"accuracy {self.test_accuracy} outside [0, 1]")
        idx = [e[0] for e in self.epochs]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError("epoch indices must increase")

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "epochs": [list(e) for e in self.epochs],
            "test_accuracy": self.test_accuracy,
            "label_fraction": self.label_fraction,
            "wall_seconds": self.wall_seconds,
        }

    def save(self, out_dir) -> None:
        """Write <run_id>.json and <run_id>.csv under out_dir."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{self.run_id}.json").write_text(
            json.dumps(self.to_json(), indent=1) + "\n")
        with (out_dir / f"{self.run_id}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            writer.writerows(self.epochs)


# ---------------------------------------------------------------------------
# Data plumbing


def load_split_bundles(manifest: DatasetManifest, pre_dir, splits=None,
                       dtype=np.float64) -> dict:
    """Decode precompute containers for the requested splits.

    Returns ``{split: [GraphBundle, ...]}`` in manifest order. A manifest
    entry without its container raises `MissingPrecompute`.
    """
    pre_dir = Path(pre_dir)
    splits = tuple(splits) if splits else ("train", "val", "test")
    out = {s: [] for s in splits}
    for entry in manifest.entries:
        if entry.split not in out:
            continue
        path = pre_dir / (Path(entry.path).stem + ".psph")
        if not path.exists():
            raise MissingPrecompute(
                f"{path} not found; run precompute first")
        out[entry.split].append(
            bundle_from_psph(path, label=entry.label, name=entry.path,
                             dtype=dtype))
    return out


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise DivergedLoss(f"{what} became non-finite ({value})")
    return float(value)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


class _EarlyStopper:
    """Track best validation loss; stop after `patience` stale epochs."""

    def __init__(self, patience: int, params: dict):
        self.patience = patience
        self.best = np.inf
        self.stale = 0
        self.state = {k: v.copy() for k, v in params.items()}

    def update(self, val_loss: float, params: dict) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
            self.state = {k: v.copy() for k, v in params.items()}
            return False
        self.stale += 1
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# Autoencoder pretraining


def _ae_loss(params: dict, mcfg: ModelConfig, bundles) -> float:
    total = 0.0
    for b in bundles:
        total += float(autoencoder_forward(params, mcfg, b)[3].value)
    return total / len(bundles)


def run_pretrain(config: TrainConfig, manifest: DatasetManifest, pre_dir,
                 out_dir=None) -> tuple:
    """Train an autoencoder on the train split; returns (record, params).

    Early stopping watches mean validation reconstruction loss; the
    returned parameters are from the best epoch, not the last one.
    """
    t0 = time.perf_counter()
    mcfg = config.model_config()
    data = load_split_bundles(manifest, pre_dir, ("train", "val"))
    train, val = data["train"], data["val"]
    if not train or not val:
        raise DataError("pretraining needs non-empty train and val splits")

    params = init_autoencoder(np.random.default_rng(config.seed), mcfg)
    opt = Adam(params, lr=config.lr)
    stopper = _EarlyStopper(config.patience, params)
    epochs = []
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng((config.seed, epoch))
        seen = 0.0
        for batch in _batches(len(train), config.batch_size, rng):
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                tape, pv, _, loss = autoencoder_forward(params, mcfg,
                                                        train[i])
                _check_finite(loss.value, f"train loss (epoch {epoch})")
                seen += float(loss.value)
                tape.backward(loss)
                for k, v in pv.items():
                    if v.grad is not None:
                        grads[k] += v.grad
            for k in grads:
                grads[k] /= len(batch)
            opt.step(grads)
        train_loss = seen / len(train)
        val_loss = _check_finite(_ae_loss(params, mcfg, val),
                                 f"val loss (epoch {epoch})")
        epochs.append((epoch, train_loss, val_loss))
        if stopper.update(val_loss, params):
            break
    params = stopper.state

    record = MetricsRecord(
        run_id=f"ae-{config.pooling}-{config.size}-s{config.seed}",
        config_hash=config_hash(config, "pretrain", manifest),
        epochs=tuple(epochs),
        test_accuracy=None,
        label_fraction=manifest.label_fraction,
        wall_seconds=time.perf_counter() - t0,
    )
    if out_dir is not None:
        record.save(out_dir)
        save_checkpoint(Path(out_dir) / f"{record.run_id}.pspw", params,
                        config, "autoencoder", manifest)
    return record, params


# ---------------------------------------------------------------------------
# Linear probe on a frozen encoder


def encode_latents(enc_params: dict, mcfg: ModelConfig, bundles) -> np.ndarray:
    """Latent matrix for a list of bundles, no gradients kept."""
    rows = []
    for b in bundles:
        tape = Tape()
        pv = {k: tape.leaf(v) for k, v in enc_params.items()}
        latent, _, _ = encode(pv, mcfg, b, tape)
        rows.append(latent.value.copy())
    return np.stack(rows)


def _head_eval(head: dict, z: np.ndarray, labels: np.ndarray) -> tuple:
    logits = z @ head["head_W0"] + head["head_b0"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, acc


def _train_head(config: TrainConfig, z: dict, labels: dict,
                n_classes: int) -> tuple:
    """Fit the linear head on cached latents; returns (head, epochs)."""
    mcfg = config.model_config()
    head = init_classifier_head(
        np.random.default_rng((config.seed, 1)), mcfg, n_classes)
    opt = Adam(head, lr=config.lr)
    stopper = _EarlyStopper(config.patience, head)
    epochs = []
    n = len(labels["train"])
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng((config.seed, epoch, 2))
        for batch in _batches(n, config.batch_size, rng):
            tape = Tape()
            pv = {k: tape.leaf(v) for k, v in head.items()}
            losses = []
            for i in batch:
                row = tape.leaf(z["train"][i][None, :])
                logits = mlp_forward(pv, row, 1, "head_")
                logits = ad.reshape(logits, (n_classes,))
                losses.append(
                    ad.softmax_cross_entropy(logits, labels["train"][i]))
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            loss = ad.scale(total, 1.0 / len(batch))
            _check_finite(loss.value, f"probe loss (epoch {epoch})")
            tape.backward(loss)
            opt.step({k: v.grad for k, v in pv.items()})
        train_loss, _ = _head_eval(head, z["train"], labels["train"])
        val_loss, _ = _head_eval(head, z["val"], labels["val"])
        _check_finite(val_loss, f"probe val loss (epoch {epoch})")
        epochs.append((epoch, train_loss, val_loss))
        if stopper.update(val_loss, head):
            break
    return stopper.state, epochs


def run_probe(config: TrainConfig, manifest: DatasetManifest, pre_dir,
              enc_params: dict | None = None, out_dir=None) -> tuple:
    """Linear probe: freeze the encoder, fit one layer on its latents.

    With ``enc_params`` None the encoder is freshly initialized from the
    run seed (the random-encoder sanity baseline). Returns
    (record, head params); the record's accuracy is on the test split.
    """
    t0 = time.perf_counter()
    mcfg = config.model_config()
    if enc_params is None:
        enc_params = init_autoencoder(np.random.default_rng(config.seed),
                                      mcfg)
    data = load_split_bundles(manifest, pre_dir)
    z = {s: encode_latents(enc_params, mcfg, data[s]) for s in data}
    labels = {s: np.array([b.label for b in data[s]]) for s in data}
    head, epochs = _train_head(config, z, labels, manifest.n_classes)
    _, test_acc = _head_eval(head, z["test"], labels["test"])

    record = MetricsRecord(
        run_id=f"probe-{config.pooling}-{config.size}-s{config.seed}"
               f"-f{manifest.label_fraction:g}",
        config_hash=config_hash(config, "probe", manifest),
        epochs=tuple(epochs),
        test_accuracy=test_acc,
        label_fraction=manifest.label_fraction,
        wall_seconds=time.perf_counter() - t0,
    )
    if out_dir is not None:
        record.save(out_dir)
        save_checkpoint(Path(out_dir) / f"{record.run_id}.pspw",
                        {**enc_params, **head}, config, "classifier",
                        manifest)
    return record, head


# ---------------------------------------------------------------------------
# End-to-end supervised classifier


def evaluate_classifier(enc_params: dict, head: dict, mcfg: ModelConfig,
                        bundles) -> tuple:
    """(mean cross-entropy, accuracy) over a list of labeled bundles."""
    z = encode_latents(enc_params, mcfg, bundles)
    labels = np.array([b.label for b in bundles])
    return _head_eval(head, z, labels)


def run_supervised(config: TrainConfig, manifest: DatasetManifest, pre_dir,
                   out_dir=None) -> tuple:
    """Train encoder and head jointly on cross-entropy.

    Returns (record, params) where params holds encoder and head
    together; the record's accuracy is on the test split.
    """
    t0 = time.perf_counter()
    mcfg = config.model_config()
    data = load_split_bundles(manifest, pre_dir)
    train, val = data["train"], data["val"]
    if not train or not val:
        raise DataError("supervised training needs train and val splits")

    params = init_autoencoder(np.random.default_rng(config.seed), mcfg)
    params.update(init_classifier_head(
        np.random.default_rng((config.seed, 1)), mcfg, manifest.n_classes))
    opt = Adam(params, lr=config.lr)
    stopper = _EarlyStopper(config.patience, params)

    def split_loss(bundles):
        enc = {k: v for k, v in params.items() if not k.startswith("head_")}
        head = {k: v for k, v in params.items() if k.startswith("head_")}
        return evaluate_classifier(enc, head, mcfg, bundles)

    epochs = []
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng((config.seed, epoch))
        seen = 0.0
        for batch in _batches(len(train), config.batch_size, rng):
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                b = train[i]
                enc = {k: v for k, v in params.items()
                       if not k.startswith("head_")}
                head = {k: v for k, v in params.items()
                        if k.startswith("head_")}
                tape, pv_head, pv_enc, logits = classifier_forward(
                    enc, head, mcfg, b, frozen=False)
                loss = ad.softmax_cross_entropy(logits, b.label)
                _check_finite(loss.value, f"train loss (epoch {epoch})")
                seen += float(loss.value)
                tape.backward(loss)
                for pv in (pv_head, pv_enc):
                    for k, v in pv.items():
                        if v.grad is not None:
                            grads[k] += v.grad
            for k in grads:
                grads[k] /= len(batch)
            opt.step(grads)
        train_loss = seen / len(train)
        val_loss, _ = split_loss(val)
        _check_finite(val_loss, f"val loss (epoch {epoch})")
        epochs.append((epoch, train_loss, val_loss))
        if stopper.update(val_loss, params):
            break
    params = stopper.state
    enc = {k: v for k, v in params.items() if not k.startswith("head_")}
    head = {k: v for k, v in params.items() if k.startswith("head_")}
    _, test_acc = evaluate_classifier(enc, head, mcfg, data["test"])

    record = MetricsRecord(
        run_id=f"clf-{config.pooling}-{config.size}-s{config.seed}"
               f"-f{manifest.label_fraction:g}",
        config_hash=config_hash(config, "supervised", manifest),
        epochs=tuple(epochs),
        test_accuracy=test_acc,
        label_fraction=manifest.label_fraction,
        wall_seconds=time.perf_counter() - t0,
    )
    if out_dir is not None:
        record.save(out_dir)
        save_checkpoint(Path(out_dir) / f"{record.run_id}.pspw", params,
                        config, "classifier", manifest)
    return record, params


# ---------------------------------------------------------------------------
# Reconstruction quality


def has_cluster_artifact(points: np.ndarray, radius: float = 0.01,
                         min_fraction: float = 0.05) -> bool:
    """Detect vertices collapsed onto (nearly) one point.

    True when at least `min_fraction` of the rows lie within `radius`
    of a single row. Inputs are assumed canonically scaled (max vertex
    norm 1), so the defaults mean "5% of vertices within 1% of scale".
    """
    points = np.asarray(points)
    n = len(points)
    if n == 0:
        return False
    need = max(2, int(np.ceil(min_fraction * n)))
    r2 = radius * radius
    # row-chunked O(n^2) scan; meshes here are a few thousand vertices
    for start in range(0, n, 256):
        chunk = points[start:start + 256]
        d2 = ((chunk[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        if (d2 <= r2).sum(axis=1).max() >= need:
            return True
    return False


# ---------------------------------------------------------------------------
# Checkpoints and embedding export


def save_checkpoint(path, params: dict, config: TrainConfig, kind: str,
                    manifest: DatasetManifest) -> None:
    meta = {"kind": kind, "config": asdict(config),
            "config_hash": config_hash(config, kind, manifest),
            "n_classes": manifest.n_classes}
    save_pspw(path, params, meta)


def load_checkpoint(path) -> tuple:
    """(params as f64, meta) from a weights container.

    Weights are stored in f32; they are promoted back to f64 so the
    model math runs in the same precision as training.
    """
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint {path} not found")
    params, meta = load_pspw(path)
    return {k: v.astype(np.float64) for k, v in params.items()}, meta


def checkpoint_config(meta: dict) -> TrainConfig:
    try:
        return TrainConfig(**meta["config"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"checkpoint meta unusable: {exc}") from exc


def export_embeddings(checkpoint, manifest: DatasetManifest, pre_dir,
                      out_path) -> Path:
    """Write one CSV row per mesh: id, label, then the latent vector.

    Exports are deterministic: the same checkpoint and manifest always
    produce identical bytes.
    """
    params, meta = load_checkpoint(checkpoint)
    config = checkpoint_config(meta)
    mcfg = config.model_config()
    enc = {k: v for k, v in params.items() if not k.startswith("head_")}
    out_path = Path(out_path)
    data = load_split_bundles(manifest, pre_dir)
    rows = []
    by_split = {s: iter(data[s]) for s in data}
    for entry in manifest.entries:
        bundle = next(by_split[entry.split])
        z = encode_latents(enc, mcfg, [bundle])[0]
        rows.append([entry.path, str(entry.label)]
                    + [f"{v:.17g}" for v in z])
    header = ["id", "label"] + [f"z{i}" for i in range(mcfg.bottleneck)]
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return out_path
