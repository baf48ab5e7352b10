import math

import numpy as np
import pytest

import dalign


def test_version_and_help():
    assert dalign.__version__ == dalign.version()
    code, out, _ = dalign.run_cli(["--help"])
    assert code == 0
    assert "train" in out


def test_synth_and_formats(tmp_path):
    code, _, err = dalign.run_cli(
        ["synth", "--out", str(tmp_path / "w"), "--images", "4", "--grid-h", "4", "--grid-w", "4"]
    )
    assert code == 0, err
    dim, records = dalign.read_feature_store(str(tmp_path / "w" / "features.dvf"))
    assert dim == 16
    assert len(records) == 4
    assert records[0]["patches"].shape == (4, 4, 16)

    dalign.write_feature_store(str(tmp_path / "copy.dvf"), dim, records)
    assert (tmp_path / "copy.dvf").read_bytes() == (tmp_path / "w" / "features.dvf").read_bytes()

    captions = dalign.read_captions(str(tmp_path / "w" / "captions.jsonl"))
    assert captions[0]["source"] == "synthetic-world"
    dalign.write_captions(str(tmp_path / "c.jsonl"), captions)
    assert dalign.read_captions(str(tmp_path / "c.jsonl")) == captions
    gone = dalign.degrade_captions(captions, 1.0, 0)
    assert all(c["caption"] == "a photo." for c in gone)


def test_noun_phrases():
    text = "a brown cow on the grass"
    nps = dalign.noun_phrases(text)
    assert [h for _, _, h in nps] == ["cow", "grass"]
    assert text[nps[0][0] : nps[0][1]] == "a brown cow"
    assert dalign.canonicalize("cats") == "cat"


def test_losses_match_numpy():
    p = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    c = np.array([0.5, -0.5])
    pooled, w = dalign.pool_visual_concept(p, c, 1.0)
    expect_w = np.exp(p @ c) / np.exp(p @ c).sum()
    np.testing.assert_allclose(w, expect_w, rtol=1e-13)
    np.testing.assert_allclose(pooled, expect_w @ p, rtol=1e-13)
    np.testing.assert_allclose(dalign.pool_text_concept(p, [0, 1]), [0.5, 0.5])

    v = np.array([[1.0, 0.0], [1.0, 1.0]])
    t = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert dalign.global_contrastive_loss(v, t, 1.0) == pytest.approx(0.9911570396112658, rel=1e-13)
    h = np.zeros((4, 2))
    assert dalign.concept_loss(v, [0, 3], h) == pytest.approx(math.log(4.0))


def test_miou_and_statistics():
    m, per_class = dalign.miou(np.array([[3, 1, 0], [2, 7, 0], [0, 0, 0]]), ["a", "b", "c"])
    assert m == pytest.approx(0.6)
    assert per_class[2] is None
    records = [
        {"image_id": "a", "caption": "a cow and a dog."},
        {"image_id": "b", "caption": "a cow."},
    ]
    s = dalign.caption_statistics(records, ["cow", "dog"], batch_size=2)
    assert s["concepts_per_caption"] == pytest.approx(1.5)
    assert s["unique_concepts_per_batch"] == pytest.approx(2.0)


def test_errors_are_raised():
    with pytest.raises(dalign.DalignError):
        dalign.read_feature_store("/nonexistent/features.dvf")


def test_train_and_encode(tmp_path):
    world = tmp_path / "w"
    assert dalign.run_cli(["synth", "--out", str(world), "--images", "16", "--grid-h", "4",
                           "--grid-w", "4"])[0] == 0
    code, _, err = dalign.run_cli(
        ["train", "--features", str(world / "features.dvf"), "--captions",
         str(world / "captions.jsonl"), "--out", str(tmp_path / "run"), "--epochs", "1",
         "--width", "8", "--layers", "1", "--heads", "2", "--batch-size", "8"]
    )
    assert code == 0, err
    model = dalign.Model(str(tmp_path / "run" / "checkpoint.dack"))
    assert model.epoch == 1
    g = model.encode(["a photo of a cow.", "a photo of a dog."])
    assert g.shape == (2, 16)
    protos = model.class_prototypes(["cow", "dog"], ["a photo of a {}."])
    np.testing.assert_allclose(np.linalg.norm(protos, axis=1), 1.0, rtol=1e-12)
