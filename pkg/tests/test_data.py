import numpy as np
import pytest

from advinlab import data as D


def test_glyphset_shapes_and_balance():
    train, test = D.make_glyphset(10, 20, side=16, noise_std=0.1, seed=0)
    assert train.images.shape == (200, 1, 16, 16)
    assert test.images.shape == (40, 1, 16, 16)
    np.testing.assert_array_equal(np.bincount(train.labels), np.full(10, 20))
    np.testing.assert_array_equal(np.bincount(test.labels), np.full(10, 4))
    assert train.images.min() >= 0.0 and train.images.max() <= 1.0


def test_glyphset_frozen_offsets_and_no_noise_collapse_classes():
    train, _ = D.make_glyphset(6, 5, side=16, noise_std=0.0, seed=3, jitter=0)
    for c in range(6):
        imgs = train.images[train.labels == c]
        for i in range(1, len(imgs)):
            np.testing.assert_array_equal(imgs[0], imgs[i])


def test_glyphset_deterministic_given_seed():
    a, _ = D.make_glyphset(4, 10, side=16, seed=9)
    b, _ = D.make_glyphset(4, 10, side=16, seed=9)
    assert a.content_hash() == b.content_hash()
    c, _ = D.make_glyphset(4, 10, side=16, seed=10)
    assert a.content_hash() != c.content_hash()


def test_glyphset_rejects_too_many_classes():
    with pytest.raises(ValueError, match="classes"):
        D.make_glyphset(len(D.GLYPH_PAINTERS) + 1, 5)


def test_nearest_template_oracle_accuracy():
    side, jitter = 16, 2
    _, test = D.make_glyphset(10, 50, side=side, noise_std=0.1, seed=1,
                              n_test_per_class=20, jitter=jitter)
    templates = D.glyph_templates(10, side)
    shifts = [(dy, dx) for dy in range(-jitter, jitter + 1) for dx in range(-jitter, jitter + 1)]
    stack = np.stack([np.roll(t, (dy, dx), axis=(0, 1))
                      for t in templates for dy, dx in shifts])
    stack = stack.reshape(10, len(shifts), side * side)
    norm = stack / np.linalg.norm(stack, axis=-1, keepdims=True)

    correct = 0
    for image, label in zip(test.images, test.labels):
        flat = image.reshape(side * side)
        score = (norm @ flat).max(axis=1)
        correct += int(score.argmax() == label)
    assert correct / len(test) >= 0.95


def test_pixel_255_scales_to_exactly_one(tmp_path):
    # one synthetic CIFAR-format record: label 3, all-255 red plane
    record = bytes([3]) + bytes([255] * 1024) + bytes([0] * 2048)
    d = tmp_path / "cifar-10-batches-bin"
    d.mkdir()
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)]:
        (d / name).write_bytes(record)
    (d / "test_batch.bin").write_bytes(record * 2)
    train, test = D.load_cifar10(tmp_path)
    assert train.images.shape == (5, 3, 32, 32)
    assert test.images.shape == (2, 3, 32, 32)
    assert train.labels[0] == 3
    assert train.images[0, 0].max() == 1.0 and train.images[0, 0].min() == 1.0
    assert train.images[0, 1].max() == 0.0
    assert train.content_hash() == D.load_cifar10(tmp_path)[0].content_hash()


def test_cifar_missing_and_truncated_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        D.load_cifar10(tmp_path)
    d = tmp_path / "cifar-10-batches-bin"
    d.mkdir()
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        (d / name).write_bytes(b"\x00" * 100)  # not a multiple of 3073
    with pytest.raises(ValueError, match="truncated"):
        D.load_cifar10(tmp_path)


def test_subset_counts_and_identity():
    train, _ = D.make_glyphset(5, 12, side=16, seed=2)
    small = D.subset(train, 4, seed=0)
    assert len(small) == 20
    np.testing.assert_array_equal(np.bincount(small.labels), np.full(5, 4))
    full = D.subset(train, 12, seed=0)
    assert full.content_hash() == train.content_hash()
    with pytest.raises(ValueError, match="needs"):
        D.subset(train, 13, seed=0)


def test_two_subsets_share_no_indices_when_masked():
    train, _ = D.make_glyphset(4, 10, side=16, seed=5)
    first = D.subset(train, 5, seed=1)
    taken = set(first.meta["source_indices"])
    keep = np.array([i for i in range(len(train)) if i not in taken])
    remainder = D.LabeledDataset(train.images[keep], train.labels[keep], 4, "train")
    second = D.subset(remainder, 5, seed=2)
    second_orig = {int(keep[i]) for i in second.meta["source_indices"]}
    assert taken.isdisjoint(second_orig)


def test_dataset_round_trip(tmp_path):
    train, _ = D.make_glyphset(3, 4, side=16, seed=7)
    D.save_dataset(train, tmp_path / "ds")
    back = D.load_dataset(tmp_path / "ds")
    assert back.content_hash() == train.content_hash()
    np.testing.assert_array_equal(back.images, train.images)
    np.testing.assert_array_equal(back.labels, train.labels)


def test_dataset_load_rejects_tampering(tmp_path):
    train, _ = D.make_glyphset(3, 4, side=16, seed=7)
    D.save_dataset(train, tmp_path / "ds")
    blob = (tmp_path / "ds" / "images.bin").read_bytes()
    (tmp_path / "ds" / "images.bin").write_bytes(blob[:20] + b"\x00\x00\x10\x3f" + blob[24:])
    with pytest.raises(ValueError, match="hash mismatch"):
        D.load_dataset(tmp_path / "ds")


def test_dataset_validation():
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        D.LabeledDataset(np.full((1, 1, 8, 8), 1.5, dtype=np.float32),
                         np.array([0]), 2, "train")
    with pytest.raises(ValueError, match="labels"):
        D.LabeledDataset(np.zeros((1, 1, 8, 8), dtype=np.float32),
                         np.array([5]), 2, "train")
