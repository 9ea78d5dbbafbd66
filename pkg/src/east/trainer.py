"""Experiment orchestration: regimes, loss composition with gradient
gating, checkpointing, and evaluation.

Gradient routing per step:

  * task loss (+ lambda * distance loss) -> backward with gate {student};
    the gate widens to include the teacher transform only when
    ``distance_updates_transform`` is set, in which case the distance
    target is also left attached instead of detached.
  * teacher head loss (compression regimes) -> backward with gate
    {teacher_transform, teacher_head} on the same tape.

One SGD step then runs per gate group. The numerics are single-threaded
and all randomness is derived from the config seed, so a rerun with the
same config produces byte-identical reports and checkpoints. Wall-clock
timings are printed but deliberately kept out of the serialized artifacts.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .compression import CompressionModule
from .config import TrainConfig
from .errors import ConfigError, NumericError, ValidationError
from .losses import (
    DistanceLossKind,
    FitNetProjection,
    dcor_loss,
    fitnet_loss,
    task_loss,
)
from .metrics import (
    MetricReport,
    accuracy,
    mean_average_precision,
    multilabel_accuracy,
    overlap_eval,
)
from .store import LabelSpace, Manifest, make_batches, read_manifest, read_store
from .student import LinearClassifier, StudentModel, sgd_step

REPORT_FILE = "report.json"
CKPT_BEST_FILE = "ckpt_best.bin"
CKPT_LAST_FILE = "ckpt_last.bin"

TEACHER_LR_MAX_ITERS = 5000
TEACHER_LR_GRAD_TOL = 1e-6

_CKPT_MAGIC = b"EASTCKP1"


@dataclass
class Models:
    student: Optional[StudentModel] = None
    projection: Optional[FitNetProjection] = None
    compression: Optional[CompressionModule] = None
    linear: Optional[LinearClassifier] = None

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        if self.student is not None:
            params.extend(self.student.parameters())
        if self.projection is not None:
            params.extend(self.projection.parameters())
        if self.compression is not None:
            params.extend(self.compression.parameters())
        if self.linear is not None:
            params.extend(self.linear.parameters())
        return params


@dataclass
class StepReport:
    task_loss: float
    distance_loss: Optional[float] = None
    teacher_loss: Optional[float] = None


@dataclass
class Checkpoint:
    """Serializable training state.

    Reloading and rerunning the forward pass reproduces outputs
    bit-identically: parameters round-trip through raw float64 bytes and
    the header JSON is emitted with sorted keys.
    """

    config: dict
    epoch: int
    best_epoch: int
    label_names: list[str]
    label_kind: str
    dims: dict
    history: list[dict]
    params: list[tuple[str, str, np.ndarray]] = field(default_factory=list)

    def save(self, path) -> None:
        header = {
            "config": self.config,
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "label_space": {"names": self.label_names, "kind": self.label_kind},
            "dims": self.dims,
            "history": self.history,
            "params": [{"name": n, "tag": t, "rows": a.shape[0], "cols": a.shape[1]}
                       for n, t, a in self.params],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, _, arr in self.params:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if len(data) < len(_CKPT_MAGIC) + 4 or not data.startswith(_CKPT_MAGIC):
            raise ValidationError(f"{path}: not a checkpoint file")
        off = len(_CKPT_MAGIC)
        (hlen,) = struct.unpack_from("<I", data, off)
        off += 4
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        params: list[tuple[str, str, np.ndarray]] = []
        for meta in header["params"]:
            count = meta["rows"] * meta["cols"]
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
            off += count * 8
            params.append((meta["name"], meta["tag"],
                           arr.astype(np.float64).reshape(meta["rows"], meta["cols"])))
        if off != len(data):
            raise ValidationError(f"{path}: checkpoint length mismatch: "
                                  f"expected {off} bytes, found {len(data)}")
        return cls(config=header["config"], epoch=header["epoch"],
                   best_epoch=header["best_epoch"],
                   label_names=list(header["label_space"]["names"]),
                   label_kind=header["label_space"]["kind"],
                   dims=header["dims"], history=header["history"], params=params)


def build_models(config: TrainConfig, d_in: Optional[int], d_t: Optional[int],
                 n_classes: int) -> Models:
    """Instantiate the models a regime needs, in a fixed draw order."""
    rng = np.random.default_rng(config.seed)
    models = Models()
    if config.regime == "teacher_lr":
        models.linear = LinearClassifier(d_t, n_classes, rng)
        return models
    models.student = StudentModel(d_in, config.student_widths, n_classes, rng)
    d_s = models.student.embed_dim
    if config.regime == "east_fitnet":
        if d_s != d_t:
            models.projection = FitNetProjection(d_s, d_t, rng)
        else:
            models.projection = FitNetProjection.disabled()
    if config.has_compression:
        models.compression = CompressionModule(d_t, d_s, n_classes, rng)
    return models


def _snapshot(models: Models) -> list[tuple[str, str, np.ndarray]]:
    return [(p.name, p.tag, p.value.copy()) for p in models.parameters()]


def _restore(models: Models, snapshot: Sequence[tuple[str, str, np.ndarray]]) -> None:
    by_name = {p.name: p for p in models.parameters()}
    for name, tag, arr in snapshot:
        p = by_name.get(name)
        if p is None or p.tag != tag or p.value.shape != arr.shape:
            raise ValidationError(f"checkpoint parameter {name!r} does not match "
                                  f"the model built from its config")
        p.value[...] = arr


def train_step(models: Models, x_batch: np.ndarray,
               teacher_batch: Optional[np.ndarray], labels_batch,
               config: TrainConfig, step: Optional[int] = None) -> StepReport:
    """One optimization step over a batch; returns the loss components."""
    tape = Tape()
    x = tape.constant(x_batch)
    embed, logits = models.student.forward(x)
    l_task = task_loss(logits, labels_batch, config.task_kind)

    compact: Optional[Tensor] = None
    if models.compression is not None:
        compact = models.compression.compress(tape.constant(teacher_batch))

    l_dist: Optional[Tensor] = None
    if config.has_distance_loss and x.rows >= 2:
        if compact is not None:
            target = compact if config.distance_updates_transform else ad.detach(compact)
        else:
            target = tape.constant(teacher_batch)
        if config.distance_kind is DistanceLossKind.FITNET:
            l_dist = fitnet_loss(embed, target, models.projection)
        else:
            l_dist = dcor_loss(embed, target)

    total = l_task if l_dist is None else ad.add(l_task, ad.scale(l_dist, config.lambda_distill))
    gates = {"student"}
    if config.distance_updates_transform and l_dist is not None:
        gates.add("teacher_transform")
    tape.backward(total, gates=gates)

    l_teacher: Optional[Tensor] = None
    if compact is not None:
        l_teacher = models.compression.teacher_loss(compact, labels_batch, config.task_kind)
        tape.backward(l_teacher, gates={"teacher_transform", "teacher_head"})

    params = models.parameters()
    sgd_step(params, config.lr, config.weight_decay, tags={"student"}, step=step)
    if models.compression is not None:
        sgd_step(params, config.lr, config.weight_decay,
                 tags={"teacher_transform", "teacher_head"}, step=step)

    return StepReport(task_loss=l_task.item(),
                      distance_loss=None if l_dist is None else l_dist.item(),
                      teacher_loss=None if l_teacher is None else l_teacher.item())


def _forward_scores(models: Models, x: np.ndarray) -> np.ndarray:
    """Inference-mode logits (no tape)."""
    t = Tensor(x)
    if models.linear is not None:
        return models.linear.forward(t).data
    _, logits = models.student.forward(t)
    return logits.data


def _score_split(models: Models, x_all: np.ndarray, manifest: Manifest, split: str,
                 space: LabelSpace) -> MetricReport:
    entries = manifest.entries_for(split)
    if not entries:
        raise ValidationError(f"split {split!r} is empty")
    rows = [e.row for e in entries]
    scores = _forward_scores(models, x_all[rows])
    if space.kind == "multilabel":
        labels = space.label_matrix(entries)
        report = mean_average_precision(scores, labels, names=list(space.names))
        report.accuracy = multilabel_accuracy(scores, labels)
    else:
        classes = space.class_indices(entries)
        one_hot = np.zeros_like(scores)
        one_hot[np.arange(len(classes)), classes] = 1.0
        report = mean_average_precision(scores, one_hot, names=list(space.names))
        report.accuracy = accuracy(scores, classes)
    return report


def _selection_metric(report: MetricReport, task_kind: str) -> float:
    return report.map if task_kind == "multilabel" else report.accuracy


def run_experiment(config: TrainConfig, log=print) -> tuple[Checkpoint, MetricReport]:
    """Train one regime end to end; writes report.json and checkpoints.

    Returns the best checkpoint and the test-split MetricReport of the
    best model (selected on the validation metric).
    """
    config.validate()
    log_fn = log if log is not None else (lambda *_: None)

    teacher = None
    d_t = None
    if config.needs_teacher:
        teacher, tmeta = read_store(config.teacher_store)
        d_t = tmeta.d
    x_all = None
    d_in = None
    if config.needs_student_inputs:
        x_all, smeta = read_store(config.student_store)
        d_in = smeta.d
    if teacher is not None and x_all is not None and teacher.shape[0] != x_all.shape[0]:
        raise ValidationError(
            f"teacher store has {teacher.shape[0]} rows but student store has "
            f"{x_all.shape[0]}; stores must be row-aligned")
    n_rows = teacher.shape[0] if teacher is not None else x_all.shape[0]
    manifest = read_manifest(config.manifest, n_rows=n_rows)
    space = LabelSpace.from_manifest(manifest, config.task_kind)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.regime == "teacher_lr":
        return _run_teacher_lr(config, teacher, manifest, space, out_dir, log_fn)

    models = build_models(config, d_in, d_t, space.n_classes)
    labels_train = _labels_lookup(manifest, space)

    dims = {"d_in": d_in, "d_t": d_t,
            "d_s": models.student.embed_dim, "n_classes": space.n_classes}
    history: list[dict] = []
    best_snapshot = _snapshot(models)
    best_metric = -np.inf
    best_epoch = -1
    last_good = best_snapshot
    epochs_done = 0
    step = 0

    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            sums = {"task": 0.0, "dist": 0.0, "teacher": 0.0}
            counts = {"task": 0, "dist": 0, "teacher": 0}
            for rows in make_batches(manifest, "train", config.batch_size,
                                     config.seed, epoch):
                rep = train_step(
                    models, x_all[rows],
                    None if teacher is None else teacher[rows],
                    labels_train(rows), config, step=step)
                step += 1
                sums["task"] += rep.task_loss
                counts["task"] += 1
                if rep.distance_loss is not None:
                    sums["dist"] += rep.distance_loss
                    counts["dist"] += 1
                if rep.teacher_loss is not None:
                    sums["teacher"] += rep.teacher_loss
                    counts["teacher"] += 1
            valid_report = _score_split(models, x_all, manifest, "valid", space)
            metric = _selection_metric(valid_report, config.task_kind)
            entry = {
                "epoch": epoch,
                "task_loss": sums["task"] / counts["task"],
                "distance_loss": (sums["dist"] / counts["dist"]) if counts["dist"] else None,
                "teacher_loss": (sums["teacher"] / counts["teacher"]) if counts["teacher"] else None,
                "valid_metric": metric,
            }
            history.append(entry)
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_snapshot = _snapshot(models)
            last_good = _snapshot(models)
            epochs_done = epoch + 1
            log_fn(f"epoch {epoch}: task={entry['task_loss']:.4f}"
                   + (f" dist={entry['distance_loss']:.4f}" if entry["distance_loss"] is not None else "")
                   + (f" teacher={entry['teacher_loss']:.4f}" if entry["teacher_loss"] is not None else "")
                   + f" valid={metric:.4f} best={best_metric:.4f}"
                   + f" [{time.perf_counter() - t0:.2f}s]")
    except NumericError:
        ckpt = Checkpoint(config=config.to_dict(), epoch=epochs_done,
                          best_epoch=best_epoch, label_names=list(space.names),
                          label_kind=space.kind, dims=dims, history=history,
                          params=last_good)
        ckpt.save(out_dir / CKPT_LAST_FILE)
        raise

    last_ckpt = Checkpoint(config=config.to_dict(), epoch=epochs_done,
                           best_epoch=best_epoch, label_names=list(space.names),
                           label_kind=space.kind, dims=dims, history=history,
                           params=_snapshot(models))
    last_ckpt.save(out_dir / CKPT_LAST_FILE)

    best_ckpt = Checkpoint(config=config.to_dict(), epoch=epochs_done,
                           best_epoch=best_epoch, label_names=list(space.names),
                           label_kind=space.kind, dims=dims, history=history,
                           params=best_snapshot)
    best_ckpt.save(out_dir / CKPT_BEST_FILE)

    _restore(models, best_snapshot)
    valid_report = _score_split(models, x_all, manifest, "valid", space)
    test_report = _score_split(models, x_all, manifest, "test", space)
    _write_report(out_dir, config, best_epoch, history, valid_report, test_report)
    log_fn(f"done: best_epoch={best_epoch} "
           f"test_map={test_report.map:.4f} test_acc={test_report.accuracy:.4f}")
    return best_ckpt, test_report


def _labels_lookup(manifest: Manifest, space: LabelSpace):
    """Row-indexed label lookup covering every split."""
    n = max(e.row for e in manifest.entries) + 1
    if space.kind == "multilabel":
        all_labels = np.zeros((n, space.n_classes))
        for e in manifest.entries:
            for name in e.labels:
                all_labels[e.row, space.index(name)] = 1.0
        return lambda rows: all_labels[rows]
    classes = np.zeros(n, dtype=np.int64)
    for e in manifest.entries:
        classes[e.row] = space.class_indices([e])[0]
    return lambda rows: classes[rows]


def _write_report(out_dir: Path, config: TrainConfig, best_epoch: int,
                  history: list[dict], valid_report: MetricReport,
                  test_report: MetricReport) -> None:
    doc = {
        "config": config.to_dict(),
        "best_epoch": best_epoch,
        "history": history,
        "valid": valid_report.to_dict(),
        "test": test_report.to_dict(),
    }
    text = json.dumps(doc, sort_keys=True, indent=2)
    (out_dir / REPORT_FILE).write_text(text + "\n", encoding="utf-8")


def _run_teacher_lr(config: TrainConfig, teacher: np.ndarray, manifest: Manifest,
                    space: LabelSpace, out_dir: Path, log_fn) -> tuple[Checkpoint, MetricReport]:
    """Logistic regression on raw teacher embeddings, full-batch gradient
    descent until the gradient norm falls below tolerance (or the iteration
    cap is hit)."""
    models = build_models(config, None, teacher.shape[1], space.n_classes)
    model = models.linear
    labels_fn = _labels_lookup(manifest, space)
    train_rows = manifest.rows("train")
    if not train_rows:
        raise ValidationError("split 'train' is empty")
    x = teacher[train_rows]
    y = labels_fn(train_rows)

    iters = 0
    final_loss = None
    for it in range(TEACHER_LR_MAX_ITERS):
        tape = Tape()
        logits = model.forward(tape.constant(x))
        loss = task_loss(logits, y, config.task_kind)
        tape.backward(loss, gates={"student"})
        gnorm = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in model.parameters()))
        final_loss = loss.item()
        if gnorm < TEACHER_LR_GRAD_TOL:
            for p in model.parameters():
                p.zero_grad()
            break
        sgd_step(model.parameters(), config.lr, config.weight_decay,
                 tags={"student"}, step=it)
        iters = it + 1

    history = [{"epoch": iters, "task_loss": final_loss,
                "distance_loss": None, "teacher_loss": None, "valid_metric": None}]
    valid_report = _score_split(models, teacher, manifest, "valid", space)
    history[0]["valid_metric"] = _selection_metric(valid_report, config.task_kind)
    dims = {"d_in": None, "d_t": teacher.shape[1], "d_s": None,
            "n_classes": space.n_classes}
    ckpt = Checkpoint(config=config.to_dict(), epoch=iters, best_epoch=iters,
                      label_names=list(space.names), label_kind=space.kind,
                      dims=dims, history=history, params=_snapshot(models))
    ckpt.save(out_dir / CKPT_LAST_FILE)
    ckpt.save(out_dir / CKPT_BEST_FILE)
    test_report = _score_split(models, teacher, manifest, "test", space)
    _write_report(out_dir, config, iters, history, valid_report, test_report)
    log_fn(f"teacher_lr: iters={iters} loss={final_loss:.6f} "
           f"test_map={test_report.map:.4f}")
    return ckpt, test_report


def load_models(ckpt: Checkpoint) -> Models:
    """Rebuild the models a checkpoint describes and load its parameters."""
    config = TrainConfig.from_dict(ckpt.config)
    models = build_models(config, ckpt.dims["d_in"], ckpt.dims["d_t"],
                          len(ckpt.label_names))
    _restore(models, ckpt.params)
    return models


def evaluate(ckpt: Checkpoint, store_path, manifest_path, split: str = "test",
             name_map: Optional[Sequence[tuple[str, str]]] = None) -> MetricReport:
    """Score a checkpointed model on a manifest split.

    Without ``name_map`` the manifest's labels must use the checkpoint's
    label names. With it, the manifest defines its own label space and the
    model's score columns are restricted to the mapped classes.
    """
    models = load_models(ckpt)
    x_all, meta = read_store(store_path)
    expect = ckpt.dims["d_t"] if models.linear is not None else ckpt.dims["d_in"]
    if meta.d != expect:
        raise ConfigError(f"store width {meta.d} does not match the model's "
                          f"input width {expect}")
    manifest = read_manifest(manifest_path, n_rows=meta.n)
    space = LabelSpace(tuple(ckpt.label_names), ckpt.label_kind)
    if name_map is None:
        return _score_split(models, x_all, manifest, split, space)

    entries = manifest.entries_for(split)
    if not entries:
        raise ValidationError(f"split {split!r} is empty")
    rows = [e.row for e in entries]
    scores = _forward_scores(models, x_all[rows])
    space_b = LabelSpace.from_manifest(manifest, "multilabel")
    labels_b = space_b.label_matrix(entries)
    return overlap_eval(scores, labels_b, space, space_b, name_map)
