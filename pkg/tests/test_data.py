import os

import numpy as np
import pytest

from actconv.data import (DataError, Dataset, apply_zca, augment_batch, crop_flip, fit_zca, global_contrast_normalize,
                          load_cifar10, pair_statistic, read_records, synthetic_dilation_task, to_uint8, write_records)


def fake_cifar(root, n_per_file=(6, 6, 6, 6, 6), n_test=5, seed=0):
    r = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    for i, n in enumerate(n_per_file, 1):
        write_records(os.path.join(root, f"data_batch_{i}.bin"), r.integers(0, 256, (n, 3, 32, 32)), r.integers(0, 10, n))
    write_records(os.path.join(root, "test_batch.bin"), r.integers(0, 256, (n_test, 3, 32, 32)), r.integers(0, 10, n_test))


def test_cifar_full_split(tmp_path):
    fake_cifar(tmp_path)
    d = load_cifar10(tmp_path, "train")
    assert len(d) == 30 and d.class_count == 10 and d.images.shape == (30, 3, 32, 32)
    assert len(load_cifar10(tmp_path, "test")) == 5


def test_cifar_record_layout(tmp_path):
    img = np.zeros((1, 3, 32, 32), dtype=np.uint8)
    img[0, 0, 0, 0], img[0, 1, 0, 0], img[0, 2, 31, 31] = 10, 20, 30
    path = tmp_path / "data_batch_1.bin"
    write_records(path, img, [7])
    raw = path.read_bytes()
    assert len(raw) == 3073 and raw[0] == 7 and raw[1] == 10 and raw[1 + 1024] == 20 and raw[-1] == 30
    im, lb = read_records(path)
    assert np.array_equal(im, img) and lb.tolist() == [7]


def test_cifar_limit_is_prefix(tmp_path):
    fake_cifar(tmp_path)
    full = load_cifar10(tmp_path, "train")
    part = load_cifar10(tmp_path, "train", limit=8)
    assert len(part) == 8
    assert np.array_equal(part.images, full.images[:8]) and np.array_equal(part.labels, full.labels[:8])


def test_cifar_subdirectory(tmp_path):
    fake_cifar(tmp_path / "cifar-10-batches-bin")
    assert len(load_cifar10(tmp_path, "test")) == 5


def test_cifar_truncated(tmp_path):
    fake_cifar(tmp_path)
    with open(tmp_path / "data_batch_2.bin", "ab") as f:
        f.write(b"\x00" * 100)
    with pytest.raises(DataError):
        load_cifar10(tmp_path, "train")


def test_cifar_missing(tmp_path):
    with pytest.raises(DataError):
        load_cifar10(tmp_path, "train")


def test_cifar_bad_label(tmp_path):
    fake_cifar(tmp_path)
    write_records(tmp_path / "test_batch.bin", np.zeros((1, 3, 32, 32)), [12])
    with pytest.raises(DataError):
        load_cifar10(tmp_path, "test")


def ds(images):
    return Dataset(np.asarray(images, dtype=float), np.zeros(len(images), dtype=int))


def test_gcn_constant_image():
    out = global_contrast_normalize(ds(np.full((1, 3, 4, 4), 17.0)))
    assert np.all(out.images == 0)


def test_gcn_ramp():
    img = np.arange(256.0).reshape(1, 1, 16, 16)
    out = global_contrast_normalize(ds(img)).images
    assert abs(out.mean()) < 1e-9 and abs(out.std() - 1) < 1e-9


def test_gcn_idempotent(rng):
    d = ds(rng.uniform(0, 255, (4, 3, 8, 8)))
    once = global_contrast_normalize(d)
    twice = global_contrast_normalize(once)
    assert np.abs(once.images - twice.images).max() < 1e-9
    m = once.images.reshape(4, -1)
    assert np.abs(m.mean(axis=1)).max() < 1e-9 and np.allclose(m.std(axis=1), 1, atol=1e-9)


def test_zca_whitens_dominant_directions(rng):
    x = rng.standard_normal((400, 1, 2, 2)) * [[[[10.0, 1.0], [5.0, 20.0]]]]
    zca = fit_zca(x)
    out = apply_zca(ds(x), zca).images.reshape(400, -1)
    cov = np.cov(out.T, bias=True)
    evals = np.linalg.eigvalsh(cov)
    assert np.all(evals <= 1.0 + 1e-9) and np.all(evals > 0.8)
    assert np.allclose(zca[1], zca[1].T)


def test_augment_centre_crop_is_identity(rng):
    x = rng.standard_normal((2, 3, 32, 32))
    assert np.array_equal(crop_flip(x, [(4, 4), (4, 4)], [False, False]), x)


def test_augment_marker_pixel():
    x = np.zeros((1, 1, 32, 32))
    x[0, 0, 0, 0] = 1.0
    out = crop_flip(x, [(0, 0)], [False])
    assert out[0, 0, 4, 4] == 1.0 and out.sum() == 1.0
    out = crop_flip(x, [(8, 8)], [False])
    assert out.sum() == 0.0


def test_augment_double_flip(rng):
    x = rng.standard_normal((1, 3, 32, 32))
    once = crop_flip(x, [(4, 4)], [True])
    assert np.array_equal(once[0, :, :, ::-1], x[0])
    assert np.array_equal(crop_flip(once, [(4, 4)], [True]), x)


def test_augment_deterministic_given_seed(rng):
    x = rng.standard_normal((5, 3, 32, 32))
    a = augment_batch(x, np.random.default_rng(3))
    b = augment_batch(x, np.random.default_rng(3))
    assert np.array_equal(a, b) and a.shape == x.shape


@pytest.mark.parametrize("n", [10, 11, 64])
def test_synthetic_balanced_and_planted(n):
    d = synthetic_dilation_task(n, 16, np.random.default_rng(n))
    assert abs(int((d.labels == 0).sum()) - int((d.labels == 1).sum())) <= 1
    assert d.images.shape == (n, 1, 16, 16) and d.class_count == 2
    # label is a deterministic function of the image
    assert np.array_equal((pair_statistic(d.images) > 0).astype(int), d.labels)


def test_synthetic_seeded():
    a = synthetic_dilation_task(20, 12, np.random.default_rng(5))
    b = synthetic_dilation_task(20, 12, np.random.default_rng(5))
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)


def test_synthetic_signal_is_long_range():
    d = synthetic_dilation_task(400, 16, np.random.default_rng(0))
    s = np.where(d.labels == 1, 1.0, -1.0)
    near = np.mean(s * pair_statistic(d.images, lag=1))
    far = np.mean(s * pair_statistic(d.images, lag=6))
    assert far > 5 * abs(near)


def test_synthetic_min_size():
    with pytest.raises(ValueError):
        synthetic_dilation_task(4, 8)


def test_to_uint8_round_trip(tmp_path):
    d = synthetic_dilation_task(6, 10, np.random.default_rng(1))
    imgs = to_uint8(d.images)
    assert imgs.dtype == np.uint8
    write_records(tmp_path / "s.bin", imgs, d.labels)
    back, lb = read_records(tmp_path / "s.bin", shape=(1, 10, 10))
    assert np.array_equal(back, imgs) and np.array_equal(lb, d.labels)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 2, 2)), [0, 10])
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 2, 2)), [0])
