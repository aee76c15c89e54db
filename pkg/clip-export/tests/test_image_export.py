"""Image-tree export: directory labels, determinism, failure layout cases."""

import numpy as np
import pytest
from conftest import write_ppm
from reader import parse_labels, parse_manifest, parse_mvhf

from clip_export import EMBED_DIM, LayoutError, export_image_embeddings


def test_one_row_per_image_with_directory_labels(image_tree, tmp_path):
    root, counts = image_tree
    out = tmp_path / "imgs.mvhf"
    export_image_embeddings(root, out=out)
    tensors = parse_mvhf(out)
    labels = parse_labels(out)
    assert len(tensors) == sum(counts.values())
    assert set(labels.values()) == set(counts)
    for cls, n in counts.items():
        assert sum(1 for v in labels.values() if v == cls) == n
    for item, t in tensors.items():
        assert t.shape == (1, EMBED_DIM)
        assert abs(np.linalg.norm(t) - 1.0) < 1e-6
        assert labels[item] == item.split("/")[0]


def test_manifest_lists_every_item(image_tree, tmp_path):
    root, counts = image_tree
    out = tmp_path / "imgs.mvhf"
    export_image_embeddings(root, out=out)
    m = parse_manifest(out)
    assert m["classes"] == sorted(counts)
    assert m["template"] is None
    assert len(m["items"]) == sum(counts.values())


def test_rerun_byte_identical(image_tree, tmp_path):
    root, _ = image_tree
    a, b = tmp_path / "a.mvhf", tmp_path / "b.mvhf"
    export_image_embeddings(root, out=a)
    export_image_embeddings(root, out=b)
    assert a.read_bytes() == b.read_bytes()
    assert parse_labels(a) == parse_labels(b)


def test_pixels_drive_the_vector(image_tree, tmp_path):
    root, _ = image_tree
    out1 = tmp_path / "one.mvhf"
    export_image_embeddings(root, out=out1)
    first = sorted(parse_mvhf(out1))[0]
    # flip one image and only that row should move
    target = root / (first + ".ppm")
    rng = np.random.default_rng(9)
    write_ppm(target, rng.integers(0, 256, size=(16, 16, 3)))
    out2 = tmp_path / "two.mvhf"
    export_image_embeddings(root, out=out2)
    t1, t2 = parse_mvhf(out1), parse_mvhf(out2)
    assert not np.allclose(t1[first], t2[first])
    unchanged = [n for n in t1 if n != first]
    for name in unchanged:
        np.testing.assert_array_equal(t1[name], t2[name])


def test_empty_directory_rejected(tmp_path):
    root = tmp_path / "empty"
    (root / "chair").mkdir(parents=True)
    with pytest.raises(LayoutError, match="no images"):
        export_image_embeddings(root, out=tmp_path / "x.mvhf")


def test_missing_directory_rejected(tmp_path):
    with pytest.raises(LayoutError, match="does not exist"):
        export_image_embeddings(tmp_path / "nowhere", out=tmp_path / "x.mvhf")


def test_top_level_images_rejected(tmp_path):
    root = tmp_path / "flat"
    root.mkdir()
    write_ppm(root / "stray.ppm",
              np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(LayoutError, match="class directories"):
        export_image_embeddings(root, out=tmp_path / "x.mvhf")


def test_undecodable_image_raises(image_tree, tmp_path):
    root, _ = image_tree
    (root / "chair" / "broken.png").write_bytes(b"not a png at all")
    with pytest.raises(Exception, match="cannot decode"):
        export_image_embeddings(root, out=tmp_path / "x.mvhf")


def test_non_image_files_ignored(image_tree, tmp_path):
    root, counts = image_tree
    (root / "chair" / "notes.txt").write_text("irrelevant")
    out = tmp_path / "imgs.mvhf"
    export_image_embeddings(root, out=out)
    assert len(parse_mvhf(out)) == sum(counts.values())
