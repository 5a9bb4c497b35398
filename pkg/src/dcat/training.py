"""Desk-scale supervised training and evaluation of the full model.

Adam with decoupled weight decay (parameters shrink by lr*wd before the
moment update), deterministic rng streams derived from (seed, stream tag,
epoch, step), and best-test-accuracy checkpoint retention. The synthetic
dataset gives each class a distinct blob/grating/ring template plus Gaussian
pixel noise, split 80/20 per class.
"""

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import cbam as CB
from . import fusion as FU
from . import metrics as ME
from . import tenfile
from . import tensor as T
from . import uncertainty as UQ
from .backbone import BackboneConfig
from .errors import ConfigError, ContractError, DataError, NumericError
from .model import DcatModel, ModelConfig
from .tensor import GradTape, Tensor
from .util import atomic_write_text, make_rng

SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2
DATA_STREAM = 3
EVAL_STREAM = 4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    dropout_rate: float = 0.5
    mc_passes: int = 100
    seed: int = 0
    optimizer: str = "adam"
    common_width: int = 128
    input_size: int = 224

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer != "adam":
            raise ConfigError(f"only the adam optimizer is supported, got {self.optimizer!r}")


def preset(name: str, n_classes: int = 4):
    """Named (TrainConfig, ModelConfig) pairs: 'desk' or 'paper'."""
    if name == "desk":
        train_cfg = TrainConfig(max_epochs=30, common_width=64, input_size=64)
    elif name == "paper":
        train_cfg = TrainConfig(max_epochs=200, common_width=128, input_size=224)
    else:
        raise ConfigError(f"unknown preset {name!r}; expected 'desk' or 'paper'")
    model_cfg = ModelConfig(
        n_classes=n_classes,
        common_width=train_cfg.common_width,
        dropout_rate=train_cfg.dropout_rate,
        backbone_a=BackboneConfig(network_id="A", input_size=train_cfg.input_size),
        backbone_b=BackboneConfig(network_id="B", input_size=train_cfg.input_size, use_residual=True),
    )
    return train_cfg, model_cfg


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict):
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def snapshot(self):
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )


def adam_step(params: dict, state: AdamState, lr: float, weight_decay: float) -> None:
    """One bias-corrected Adam update using each parameter's accumulated grad.

    Weight decay is decoupled: parameters shrink multiplicatively before the
    moment-based update, so decay and adaptive scaling do not interact.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, S, S) float32
    labels: np.ndarray  # (n,) int64
    class_names: list
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels) or len(self.images) == 0:
            raise DataError("dataset needs matching, nonempty images and labels")
        if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
            raise DataError(f"labels outside [0, {len(self.class_names)})")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names)


def class_template(class_ix: int, n_classes: int, size: int) -> np.ndarray:
    """Deterministic 3-channel template: an off-center blob, an oriented
    grating, and radial rings, all keyed to the class index."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    angle = 2.0 * np.pi * class_ix / n_classes
    cx, cy = 0.5 + 0.25 * np.cos(angle), 0.5 + 0.25 * np.sin(angle)
    blob = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 0.12**2))
    theta = np.pi * class_ix / n_classes
    freq = 2.0 + class_ix
    grating = 0.5 * np.sin(2.0 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)))
    radius = np.sqrt((xs - 0.5) ** 2 + (ys - 0.5) ** 2)
    rings = 0.5 * np.cos(2.0 * np.pi * freq * radius)
    return np.stack([blob, grating, rings]).astype(np.float32)


def make_synthetic_dataset(n_per_class: int, n_classes: int, image_size: int,
                           rng: np.random.Generator, noise_sigma: float = 0.3):
    """Template-plus-noise images, split 80/20 per class -> (train, test)."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    templates = [class_template(c, n_classes, image_size) for c in range(n_classes)]
    train_im, train_lb, test_im, test_lb = [], [], [], []
    n_train = int(round(0.8 * n_per_class))
    for c in range(n_classes):
        for i in range(n_per_class):
            img = templates[c] + noise_sigma * rng.standard_normal(templates[c].shape).astype(np.float32)
            (train_im if i < n_train else test_im).append(img)
            (train_lb if i < n_train else test_lb).append(c)
    names = [f"class{c}" for c in range(n_classes)]
    return (
        Dataset(np.stack(train_im), np.array(train_lb), names, split="train"),
        Dataset(np.stack(test_im), np.array(test_lb), names, split="test"),
    )


def template_oracle_accuracy(ds: Dataset) -> float:
    """Nearest-template classification accuracy; calibrates task difficulty."""
    templates = np.stack([class_template(c, ds.n_classes, ds.images.shape[-1]) for c in range(ds.n_classes)])
    flat = ds.images.reshape(len(ds), -1)
    tflat = templates.reshape(ds.n_classes, -1)
    d2 = ((flat[:, None, :] - tflat[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == ds.labels).mean())


def save_dataset(out_dir, train: Dataset, test: Dataset) -> None:
    """Write DTEN1 images plus a path,label,split manifest."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    index = 0
    for ds in (train, test):
        for img, label in zip(ds.images, ds.labels):
            rel = os.path.join("images", f"img_{index:05d}.dten")
            tenfile.write_tensor(os.path.join(out_dir, rel), img)
            rows.append((rel, int(label), ds.split))
            index += 1
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label", "split"])
    writer.writerows(rows)
    atomic_write_text(os.path.join(out_dir, "manifest.csv"), buf.getvalue())
    meta = {"class_names": train.class_names, "image_size": int(train.images.shape[-1])}
    atomic_write_text(os.path.join(out_dir, "dataset.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir):
    """Read a manifest dataset -> (train, test).

    A manifest without a split column gets a deterministic per-class 80/20
    assignment (every fifth occurrence of a class goes to test).
    """
    manifest = os.path.join(data_dir, "manifest.csv")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest.csv under {data_dir}")
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "path" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise DataError("manifest must have path and label columns")
        rows = list(reader)
    if not rows:
        raise DataError("manifest is empty")
    has_split = "split" in rows[0]
    seen = {}
    images = {"train": [], "test": []}
    labels = {"train": [], "test": []}
    for row in rows:
        label = int(row["label"])
        if has_split:
            split = row["split"]
            if split not in ("train", "test"):
                raise DataError(f"manifest split must be train or test, got {split!r}")
        else:
            k = seen.get(label, 0)
            seen[label] = k + 1
            split = "test" if k % 5 == 4 else "train"
        img = tenfile.read_tensor(os.path.join(data_dir, row["path"]))
        if img.ndim != 3:
            raise DataError(f"image {row['path']} must be (C, H, W), got shape {img.shape}")
        images[split].append(img)
        labels[split].append(label)
    n_classes = max(max(labels["train"], default=-1), max(labels["test"], default=-1)) + 1
    names = [f"class{c}" for c in range(n_classes)]
    meta_path = os.path.join(data_dir, "dataset.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            names = json.load(fh).get("class_names", names)
    out = []
    for split in ("train", "test"):
        if not images[split]:
            raise DataError(f"manifest has no {split} rows")
        out.append(Dataset(np.stack(images[split]), np.array(labels[split]), names, split=split))
    return tuple(out)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    log_rows: list  # dicts: epoch, loss, train_acc, test_acc, wall_ms
    best_epoch: int
    best_test_acc: float
    adam_state: AdamState = field(repr=False, default=None)


def _batches(n, batch_size, order=None):
    ix = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield ix[start : start + batch_size]


def predict_labels(model: DcatModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Deterministic (dropout-off) argmax predictions."""
    preds = []
    for ix in _batches(len(images), batch_size):
        probs = model.forward(Tensor(images[ix]))
        preds.append(np.argmax(probs.data, axis=-1))
    return np.concatenate(preds)


def train(model: DcatModel, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Minimize mean cross-entropy with dropout active; keeps the parameters
    of the best test-accuracy epoch in the model on return."""
    params = model.parameters()
    state = AdamState.for_params(params)
    rows = []
    best = {"acc": -1.0, "epoch": 0, "params": None, "state": None}
    n = len(train_ds)
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = make_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(n)
        loss_total = 0.0
        correct = 0
        for step, ix in enumerate(_batches(n, cfg.batch_size, order)):
            xb = Tensor(train_ds.images[ix])
            rng = make_rng(cfg.seed, DROPOUT_STREAM, epoch, step)
            with GradTape() as tape:
                probs = model.forward(xb, dropout_active=cfg.dropout_rate > 0, rng=rng)
                loss = T.cross_entropy(probs, train_ds.labels[ix])
            if not np.isfinite(loss.data):
                raise NumericError(f"training loss diverged at epoch {epoch}, step {step}")
            tape.backward(loss)
            adam_step(params, state, cfg.learning_rate, cfg.weight_decay)
            for p in params.values():
                p.zero_grad()
            loss_total += float(loss.data) * len(ix)
            correct += int((np.argmax(probs.data, axis=-1) == train_ds.labels[ix]).sum())
        test_acc = float((predict_labels(model, test_ds.images) == test_ds.labels).mean())
        rows.append(
            {
                "epoch": epoch,
                "loss": loss_total / n,
                "train_acc": correct / n,
                "test_acc": test_acc,
                "wall_ms": int((time.perf_counter() - started) * 1000),
            }
        )
        if test_acc > best["acc"]:
            best = {
                "acc": test_acc,
                "epoch": epoch,
                "params": {k: p.data.copy() for k, p in params.items()},
                "state": state.snapshot(),
            }
    if best["params"] is not None:
        for k, p in params.items():
            p.data = best["params"][k]
    return TrainResult(
        log_rows=rows,
        best_epoch=best["epoch"],
        best_test_acc=best["acc"],
        adam_state=best["state"],
    )


LOG_FIELDS = ["epoch", "loss", "train_acc", "test_acc", "wall_ms"]


def log_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_FIELDS)
    for r in rows:
        writer.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['train_acc']:.4f}", f"{r['test_acc']:.4f}", r["wall_ms"]])
    return buf.getvalue()


def adam_records(state: AdamState) -> dict:
    records = {"adam.t": np.array([state.t], dtype=np.float32)}
    for name, arr in state.m.items():
        records[f"adam.m.{name}"] = arr
    for name, arr in state.v.items():
        records[f"adam.v.{name}"] = arr
    return records


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: DcatModel, ds: Dataset, cfg: TrainConfig, threshold: float = None,
             chunk_size: int = 64):
    """MC-dropout evaluation -> (EvalReport dict, uncertainty records).

    Predictions are the argmax of each sample's MC posterior. Chunks use
    disjoint rng streams keyed by their start index so results do not depend
    on how the dataset is chunked relative to memory limits.
    """
    if threshold is None:
        threshold = UQ.default_threshold(ds.n_classes)
    records = []
    for ix in _batches(len(ds), chunk_size):
        dists = UQ.mc_forward_batch(
            model, Tensor(ds.images[ix]), cfg.mc_passes, seed=_chunk_seed(cfg.seed, int(ix[0]))
        )
        for offset, dist in zip(ix, dists):
            records.append(
                UQ.UncertaintyRecord(
                    sample_id=int(offset),
                    posterior=dist.posterior,
                    entropy=dist.entropy,
                    predicted_label=int(dist.posterior.argmax()),
                    true_label=int(ds.labels[offset]),
                    flagged=dist.entropy > threshold,
                )
            )
    report = build_eval_report(records, ds, threshold, cfg.mc_passes)
    return report, records


def _chunk_seed(seed: int, start: int) -> int:
    return (seed << 20) + (EVAL_STREAM << 16) + start


def build_eval_report(records, ds: Dataset, threshold: float, m_passes: int) -> dict:
    true_labels = np.array([r.true_label for r in records])
    pred_labels = np.array([r.predicted_label for r in records])
    cm = ME.ConfusionMatrix.from_labels(true_labels, pred_labels, ds.n_classes)
    samples = [ME.ScoredSample(r.true_label, r.posterior) for r in records]
    per_class = []
    curves_roc, curves_pr = {}, {}
    for c in range(ds.n_classes):
        entry = {"class": c, "name": ds.class_names[c]}
        for metric_name, fn in (
            ("precision", ME.precision),
            ("recall", ME.recall),
            ("specificity", ME.specificity),
            ("f1", ME.f1),
        ):
            value = fn(cm, c)
            entry[metric_name] = value.value
            entry[f"{metric_name}_degenerate"] = value.degenerate
        try:
            entry["auroc"] = ME.auroc(samples, c)
            entry["aupr"] = ME.aupr(samples, c)
            entry["curve_defined"] = True
            curves_roc[str(c)] = [[x, y] for x, y in ME.roc_curve(samples, c)]
            curves_pr[str(c)] = [[x, y] for x, y in ME.pr_curve(samples, c)]
        except ME.UndefinedCurveError:
            entry["auroc"] = None
            entry["aupr"] = None
            entry["curve_defined"] = False
        per_class.append(entry)
    defined = [e for e in per_class if e["curve_defined"]]
    mcc_value = ME.mcc(cm)
    flagged, summary = UQ.flag_high_uncertainty(records, threshold)
    summary["M"] = int(m_passes)
    summary["max_entropy"] = float(np.log(ds.n_classes))
    report = {
        "n_classes": ds.n_classes,
        "n_samples": len(records),
        "class_names": list(ds.class_names),
        "confusion_matrix": cm.counts.tolist(),
        "accuracy": ME.accuracy(cm),
        "mcc": mcc_value.value,
        "mcc_degenerate": mcc_value.degenerate,
        "kappa": ME.cohen_kappa(cm),
        "macro": {
            "precision": float(np.mean([e["precision"] for e in per_class])),
            "recall": float(np.mean([e["recall"] for e in per_class])),
            "specificity": float(np.mean([e["specificity"] for e in per_class])),
            "f1": float(np.mean([e["f1"] for e in per_class])),
            "auroc": float(np.mean([e["auroc"] for e in defined])) if defined else None,
            "aupr": float(np.mean([e["aupr"] for e in defined])) if defined else None,
        },
        "per_class": per_class,
        "curves": {"roc": curves_roc, "pr": curves_pr},
        "uncertainty": {
            **summary,
            "hus_sample_ids": [r.sample_id for r in flagged],
        },
    }
    return report
