"""Prototype export: shapes, norms, prompts, template bookkeeping."""

import numpy as np
import pytest
from reader import parse_labels, parse_manifest, parse_mvhf

from clip_export import (DEFAULT_TEMPLATE, EMBED_DIM, HashedEncoder,
                         LayoutError, TemplateError, export_text_prototypes)

CLASSES = ["chair", "lamp", "table"]


def test_one_unit_row_per_class(tmp_path):
    out = tmp_path / "protos.mvhf"
    export_text_prototypes(CLASSES, out=out)
    tensors = parse_mvhf(out)
    assert sorted(tensors) == CLASSES
    for name, t in tensors.items():
        assert t.shape == (1, EMBED_DIM)
        assert abs(np.linalg.norm(t) - 1.0) < 1e-6


def test_labels_are_class_names(tmp_path):
    out = tmp_path / "protos.mvhf"
    export_text_prototypes(CLASSES, out=out)
    assert parse_labels(out) == {c: c for c in CLASSES}


def test_manifest_records_template_and_model(tmp_path):
    out = tmp_path / "protos.mvhf"
    export_text_prototypes(CLASSES, out=out)
    m = parse_manifest(out)
    assert m["template"] == DEFAULT_TEMPLATE
    assert m["model"] == HashedEncoder.name
    assert m["classes"] == CLASSES
    assert m["tensors"]["chair"] == [1, EMBED_DIM]
    assert "created" in m


def test_duplicate_classes_rejected(tmp_path):
    with pytest.raises(LayoutError, match="duplicate"):
        export_text_prototypes(["chair", "chair"], out=tmp_path / "x.mvhf")


def test_empty_class_list_rejected(tmp_path):
    with pytest.raises(LayoutError):
        export_text_prototypes([], out=tmp_path / "x.mvhf")


def test_bad_templates_rejected(tmp_path):
    for template in ("no placeholder here", "[CLASS] twice [CLASS]"):
        with pytest.raises(TemplateError):
            export_text_prototypes(CLASSES, template=template,
                                   out=tmp_path / "x.mvhf")


def test_prompt_text_drives_the_vector(tmp_path):
    a = tmp_path / "a.mvhf"
    b = tmp_path / "b.mvhf"
    export_text_prototypes(CLASSES, out=a)
    export_text_prototypes(CLASSES, template="a sketch of a [CLASS]", out=b)
    va, vb = parse_mvhf(a), parse_mvhf(b)
    for c in CLASSES:
        assert not np.allclose(va[c], vb[c])


def test_rerun_byte_identical(tmp_path):
    a = tmp_path / "a.mvhf"
    b = tmp_path / "b.mvhf"
    export_text_prototypes(CLASSES, out=a)
    export_text_prototypes(CLASSES, out=b)
    assert a.read_bytes() == b.read_bytes()
    assert parse_labels(a) == parse_labels(b)
