"""Smoke tests for the Python bindings (built by CMake, found via PYTHONPATH)."""

import math

import pytest

import nlicheck


def test_tokenize():
    assert nlicheck.tokenize("A man is driving down a lonely road.") == [
        "a", "man", "is", "driving", "down", "a", "lonely", "road", ".",
    ]
    assert nlicheck.tokenize("don't STOP!") == ["don", "'", "t", "stop", "!"]
    assert nlicheck.tokenize("") == []


def test_class_order():
    assert nlicheck.class_order() == ["contradiction", "neutral", "entailment"]


def test_softmax():
    probs = nlicheck.softmax([1.0, 2.0, 3.0])
    assert len(probs) == 3
    assert math.isclose(sum(probs), 1.0, rel_tol=1e-12)
    assert probs[0] < probs[1] < probs[2]
    # shift invariance
    shifted = nlicheck.softmax([101.0, 102.0, 103.0])
    for a, b in zip(probs, shifted):
        assert math.isclose(a, b, rel_tol=1e-12)


def test_verdict():
    assert nlicheck.verdict([0.99, 0.01, 0.00]) == "potential_violation"
    assert nlicheck.verdict([0.29, 0.12, 0.59]) == "supported"
    assert nlicheck.verdict([0.41, 0.37, 0.22]) == "inconclusive"
    assert nlicheck.verdict([0.45, 0.30, 0.25], threshold=0.4) == "potential_violation"
    with pytest.raises(Exception):
        nlicheck.verdict([0.5, 0.5, 0.5])


def test_extract_text_and_segmentation():
    html = (
        "<html><head><style>p{}</style></head><body>"
        "<p>We store data. You can ask us to delete it.</p>"
        "<p>Contact us, e.g. by mail, for details.</p></body></html>"
    )
    text = nlicheck.extract_text(html)
    assert "p{}" not in text
    sentences = nlicheck.segment_sentences(text)
    assert [s.text for s in sentences] == [
        "We store data.",
        "You can ask us to delete it.",
        "Contact us, e.g. by mail, for details.",
    ]
    assert sentences[0].index == 0
    assert text[sentences[1].offset : sentences[1].offset + len(sentences[1].text)] == sentences[1].text


def test_vocabulary_roundtrip(tmp_path):
    path = tmp_path / "vocab.tsv"
    path.write_text("<pad>\t0\n<oov>\t1\nhello\t2\nworld\t3\n")
    vocab = nlicheck.Vocabulary.load(str(path))
    assert len(vocab) == 4
    assert vocab.lookup("hello") == 2
    assert vocab.lookup("unknown") == 1  # out-of-vocabulary id
    assert "world" in vocab
    assert "missing" not in vocab
    assert vocab.hash() == nlicheck.Vocabulary.load(str(path)).hash()


def test_predictor_missing_checkpoint():
    with pytest.raises(Exception):
        nlicheck.Predictor.load("/nonexistent/model.ckpt", "/nonexistent/vocab.tsv")
