import numpy as np
import pytest

from east.config import TrainConfig
from east.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory):
    """Small multilabel dataset shared by trainer-level tests."""
    spec = SyntheticSpec(n=240, latent_dim=4, n_tags=3, teacher_dim=10,
                         irrelevant_dims=4, student_input_dim=6, noise_std=0.3,
                         seed=9)
    return generate_synthetic(spec, out_dir=tmp_path_factory.mktemp("small_ds"))


def make_config(ds, out_dir, **overrides):
    base = dict(
        regime="baseline",
        task_kind="multilabel",
        manifest=str(ds.manifest_path),
        out_dir=str(out_dir),
        teacher_store=str(ds.teacher_path),
        student_store=str(ds.student_path),
        lambda_distill=1.0,
        lr=0.1,
        weight_decay=0.0,
        batch_size=34,
        epochs=3,
        seed=5,
        student_widths=[16, 8],
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def quiet():
    """Silent logger for run_experiment."""
    return lambda *_args, **_kwargs: None


def singlelabel_dataset(tmp_path, n=512, seed=0):
    """Linearly separable two-class dataset written as store + manifest."""
    from east.store import ManifestEntry, write_manifest, write_store

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    w = rng.standard_normal(4)
    labels = (x @ w > 0).astype(int)
    store = tmp_path / "inputs.east"
    write_store(store, x, dtype="f64")
    names = ["neg", "pos"]
    perm = rng.permutation(n)
    split_of = np.empty(n, dtype=object)
    split_of[perm[: int(0.7 * n)]] = "train"
    split_of[perm[int(0.7 * n): int(0.8 * n)]] = "valid"
    split_of[perm[int(0.8 * n):]] = "test"
    entries = [ManifestEntry(f"s{i}", i, split_of[i], (names[labels[i]],))
               for i in range(n)]
    manifest = tmp_path / "manifest.csv"
    write_manifest(manifest, entries)
    return store, manifest
