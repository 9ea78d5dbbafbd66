import json

import numpy as np
import pytest

from east import autodiff as ad
from east.autodiff import Tape
from east.config import TrainConfig
from east.errors import ConfigError, NumericError, ValidationError
from east.losses import dcor_loss
from east.store import make_batches, read_manifest, read_store, LabelSpace
from east.student import sgd_step
from east.trainer import (
    CKPT_BEST_FILE,
    CKPT_LAST_FILE,
    REPORT_FILE,
    Checkpoint,
    build_models,
    evaluate,
    load_models,
    run_experiment,
    train_step,
)

from conftest import make_config, singlelabel_dataset


def _student_param_bytes(ckpt):
    return [(name, arr.tobytes()) for name, tag, arr in ckpt.params if tag == "student"]


# --- regimes -----------------------------------------------------------------

def test_baseline_report_has_no_distillation_losses(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="baseline", epochs=2)
    run_experiment(cfg, log=quiet)
    report = json.loads((tmp_path / REPORT_FILE).read_text())
    for entry in report["history"]:
        assert entry["distance_loss"] is None
        assert entry["teacher_loss"] is None
    assert report["test"]["map"] > 0.5


def test_lambda_zero_dc_matches_baseline_trajectory(small_ds, tmp_path, quiet):
    # 168 train rows at batch 34 -> 5 steps in one epoch
    cfg_a = make_config(small_ds, tmp_path / "a", regime="baseline", epochs=1)
    cfg_b = make_config(small_ds, tmp_path / "b", regime="east_dc",
                        lambda_distill=0.0, epochs=1)
    run_experiment(cfg_a, log=quiet)
    run_experiment(cfg_b, log=quiet)
    a = Checkpoint.load(tmp_path / "a" / CKPT_LAST_FILE)
    b = Checkpoint.load(tmp_path / "b" / CKPT_LAST_FILE)
    assert _student_param_bytes(a) == _student_param_bytes(b)


def test_fitnet_without_projection_at_lambda_zero_matches_baseline(
        small_ds, tmp_path, quiet):
    # teacher width 10 == student embedding width -> projection disabled
    widths = [16, 10]
    cfg_a = make_config(small_ds, tmp_path / "a", regime="baseline",
                        student_widths=widths, epochs=2)
    cfg_b = make_config(small_ds, tmp_path / "b", regime="east_fitnet",
                        student_widths=widths, lambda_distill=0.0, epochs=2)
    run_experiment(cfg_a, log=quiet)
    run_experiment(cfg_b, log=quiet)
    a = Checkpoint.load(tmp_path / "a" / CKPT_LAST_FILE)
    b = Checkpoint.load(tmp_path / "b" / CKPT_LAST_FILE)
    assert _student_param_bytes(a) == _student_param_bytes(b)


def test_fitnet_with_width_gap_builds_projection(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="east_fitnet", epochs=1)
    ckpt, _ = run_experiment(cfg, log=quiet)
    names = {name for name, _, _ in ckpt.params}
    assert "fitnet_proj_weight" in names


def test_east_dc_linear_step_moves_transform_only_via_teacher_loss(small_ds):
    cfg = make_config(small_ds, "unused", regime="east_dc_linear")
    rng_data = np.random.default_rng(3)
    x = rng_data.standard_normal((8, 6))
    teacher = rng_data.standard_normal((8, 10))
    labels = (rng_data.random((8, 3)) < 0.5).astype(np.float64)

    # full step: student and transform both move
    models = build_models(cfg, d_in=6, d_t=10, n_classes=3)
    student_before = [p.value.tobytes() for p in models.student.parameters()]
    transform_before = models.compression.transform_weight.value.tobytes()
    train_step(models, x, teacher, labels, cfg)
    assert [p.value.tobytes() for p in models.student.parameters()] != student_before
    assert models.compression.transform_weight.value.tobytes() != transform_before

    # same step with the teacher loss toggled off: transform must not move
    models2 = build_models(cfg, d_in=6, d_t=10, n_classes=3)
    module_before = [p.value.tobytes() for p in models2.compression.parameters()]
    from east.losses import task_loss
    tape = Tape()
    embed, logits = models2.student.forward(tape.constant(x))
    compact = models2.compression.compress(tape.constant(teacher))
    l_task = task_loss(logits, labels, cfg.task_kind)
    l_dist = dcor_loss(embed, ad.detach(compact))
    tape.backward(ad.add(l_task, ad.scale(l_dist, cfg.lambda_distill)),
                  gates={"student"})
    params = models2.parameters()
    sgd_step(params, cfg.lr, tags={"student"})
    sgd_step(params, cfg.lr, tags={"teacher_transform", "teacher_head"})
    assert [p.value.tobytes() for p in models2.compression.parameters()] == module_before


def test_transform_trajectory_driven_only_by_teacher_loss(small_ds, tmp_path, quiet):
    """Over a full epoch of east_dc_linear the transform params match a loop
    that never computes the distance loss at all."""
    cfg = make_config(small_ds, tmp_path, regime="east_dc_linear", epochs=1)
    run_experiment(cfg, log=quiet)
    got = {name: arr for name, tag, arr in
           Checkpoint.load(tmp_path / CKPT_LAST_FILE).params
           if tag in ("teacher_transform", "teacher_head")}

    teacher, tmeta = read_store(cfg.teacher_store)
    manifest = read_manifest(cfg.manifest, n_rows=tmeta.n)
    space = LabelSpace.from_manifest(manifest, "multilabel")
    labels_by_row = np.zeros((tmeta.n, space.n_classes))
    for e in manifest.entries:
        for name in e.labels:
            labels_by_row[e.row, space.index(name)] = 1.0

    models = build_models(cfg, d_in=6, d_t=tmeta.d, n_classes=space.n_classes)
    for rows in make_batches(manifest, "train", cfg.batch_size, cfg.seed, 0):
        tape = Tape()
        compact = models.compression.compress(tape.constant(teacher[rows]))
        loss = models.compression.teacher_loss(compact, labels_by_row[rows],
                                               cfg.task_kind)
        tape.backward(loss, gates={"teacher_transform", "teacher_head"})
        sgd_step(models.compression.parameters(), cfg.lr, cfg.weight_decay,
                 tags={"teacher_transform", "teacher_head"})
    for p in models.compression.parameters():
        assert p.value.tobytes() == got[p.name].tobytes()


def test_distance_updates_transform_switch_routes_gradient(small_ds):
    cfg = make_config(small_ds, "unused", regime="east_dc_linear",
                      distance_updates_transform=True)
    models = build_models(cfg, d_in=6, d_t=10, n_classes=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 6))
    teacher = rng.standard_normal((8, 10))
    labels = (rng.random((8, 3)) < 0.5).astype(np.float64)

    from east.losses import task_loss
    tape = Tape()
    embed, logits = models.student.forward(tape.constant(x))
    compact = models.compression.compress(tape.constant(teacher))
    total = ad.add(task_loss(logits, labels, cfg.task_kind),
                   dcor_loss(embed, compact))
    tape.backward(total, gates={"student", "teacher_transform"})
    assert np.any(models.compression.transform_weight.grad != 0.0)
    assert not np.any(models.compression.head_weight.grad != 0.0)


def test_teacher_lr_trains_linear_model_only(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="teacher_lr", epochs=1, lr=1.0)
    ckpt, report = run_experiment(cfg, log=quiet)
    names = {name for name, _, _ in ckpt.params}
    assert names == {"linear_weight", "linear_bias"}
    assert report.map > 0.5


def test_epochs_zero_reports_from_initial_model(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, epochs=0)
    ckpt, report = run_experiment(cfg, log=quiet)
    assert ckpt.best_epoch == -1
    assert (tmp_path / REPORT_FILE).exists()
    assert 0.0 <= report.map <= 1.0


def test_determinism_byte_identical_outputs(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="east_dc_linear", epochs=2)
    run_experiment(cfg, log=quiet)
    first = {name: (tmp_path / name).read_bytes()
             for name in (REPORT_FILE, CKPT_BEST_FILE, CKPT_LAST_FILE)}
    run_experiment(cfg, log=quiet)
    for name, blob in first.items():
        assert (tmp_path / name).read_bytes() == blob, name


def test_evaluate_matches_report_and_is_repeatable(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="east_dc", epochs=2)
    run_experiment(cfg, log=quiet)
    report = json.loads((tmp_path / REPORT_FILE).read_text())
    ckpt = Checkpoint.load(tmp_path / CKPT_BEST_FILE)
    r1 = evaluate(ckpt, small_ds.student_path, small_ds.manifest_path, split="test")
    r2 = evaluate(ckpt, small_ds.student_path, small_ds.manifest_path, split="test")
    assert r1.to_dict() == r2.to_dict()
    assert r1.map == report["test"]["map"]
    assert r1.accuracy == report["test"]["accuracy"]


def test_checkpoint_reload_reproduces_forward_outputs(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, regime="east_fitnet_linear", epochs=1)
    ckpt, _ = run_experiment(cfg, log=quiet)
    loaded = Checkpoint.load(tmp_path / CKPT_BEST_FILE)
    m1 = load_models(ckpt)
    m2 = load_models(loaded)
    x = np.random.default_rng(0).standard_normal((7, 6))
    from east.autodiff import Tensor
    e1, z1 = m1.student.forward(Tensor(x))
    e2, z2 = m2.student.forward(Tensor(x))
    assert e1.data.tobytes() == e2.data.tobytes()
    assert z1.data.tobytes() == z2.data.tobytes()


def test_evaluate_with_single_class_name_map(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, epochs=1)
    ckpt, _ = run_experiment(cfg, log=quiet)
    report = evaluate(ckpt, small_ds.student_path, small_ds.manifest_path,
                      split="test", name_map=[("tag0", "tag0")])
    assert len(report.per_class_ap) == 1
    assert list(report.per_class_ap) == ["tag0"]


def test_evaluate_rejects_mismatched_store_width(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, epochs=1)
    ckpt, _ = run_experiment(cfg, log=quiet)
    with pytest.raises(ConfigError, match=r"10.*6|6.*10"):
        evaluate(ckpt, small_ds.teacher_path, small_ds.manifest_path)


def test_numeric_abort_keeps_last_good_checkpoint(small_ds, tmp_path, quiet):
    cfg = make_config(small_ds, tmp_path, lr=1e200, epochs=4)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError):
            run_experiment(cfg, log=quiet)
    ckpt = Checkpoint.load(tmp_path / CKPT_LAST_FILE)
    for _, _, arr in ckpt.params:
        assert np.isfinite(arr).all()


def test_config_unknown_key_rejected():
    with pytest.raises(ValidationError, match="unknown config keys"):
        TrainConfig.from_dict({"regime": "baseline", "task_kind": "multilabel",
                               "manifest": "m", "out_dir": "o", "lamda": 1.0})


def test_config_regime_requirements():
    with pytest.raises(ConfigError, match="teacher_store"):
        TrainConfig.from_dict({"regime": "east_dc", "task_kind": "multilabel",
                               "manifest": "m", "out_dir": "o",
                               "student_store": "s"})
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig.from_dict({"regime": "east_dc", "task_kind": "multilabel",
                               "manifest": "m", "out_dir": "o",
                               "teacher_store": "t", "student_store": "s",
                               "batch_size": 1})


def test_short_final_batch_skips_distance_loss(small_ds):
    cfg = make_config(small_ds, "unused", regime="east_dc")
    models = build_models(cfg, d_in=6, d_t=10, n_classes=3)
    rng = np.random.default_rng(5)
    rep = train_step(models, rng.standard_normal((1, 6)),
                     rng.standard_normal((1, 10)),
                     (rng.random((1, 3)) < 0.5).astype(np.float64), cfg)
    assert rep.distance_loss is None
    assert rep.task_loss > 0.0


def test_separable_singlelabel_baseline_reaches_high_accuracy(tmp_path, quiet):
    store, manifest = singlelabel_dataset(tmp_path, n=512, seed=0)
    cfg = TrainConfig(regime="baseline", task_kind="singlelabel",
                      manifest=str(manifest), out_dir=str(tmp_path / "out"),
                      student_store=str(store), lr=0.5, batch_size=64,
                      epochs=60, seed=1, student_widths=[16, 8])
    run_experiment(cfg, log=quiet)
    ckpt = Checkpoint.load(tmp_path / "out" / CKPT_LAST_FILE)
    report = evaluate(ckpt, store, manifest, split="train")
    assert report.accuracy >= 0.98
