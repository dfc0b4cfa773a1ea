import numpy as np
import pytest
from hypothesis import given, strategies as st

from extremism_eleven.corpus import Post
from extremism_eleven.embedder import EmbeddingProviderConfig, encode, stub_encode
from extremism_eleven.scorer import ItemScoreMatrix, chunk_words, cosine, score_corpus, score_post, item_vectors
from extremism_eleven.synth import synthetic_corpus
from conftest import make_post

CFG = EmbeddingProviderConfig(dim=128)


def test_chunk_sizes():
    text = " ".join(f"w{i}" for i in range(250))
    chunks = chunk_words(text)
    assert [len(c.split()) for c in chunks] == [100, 100, 50]
    assert chunks[0].split()[0] == "w0" and chunks[2].split()[-1] == "w249"
    assert chunk_words("a  b\n\tc") == ["a b c"]
    with pytest.raises(ValueError):
        chunk_words("   ")


@given(st.integers(1, 450), st.integers(1, 120))
def test_chunking_partitions_words(n, size):
    words = [f"x{i}" for i in range(n)]
    chunks = chunk_words(" ".join(words), size)
    assert [w for c in chunks for w in c.split()] == words
    assert all(len(c.split()) == size for c in chunks[:-1])
    assert 1 <= len(chunks[-1].split()) <= size


def test_cosine():
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [2, 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 1])
    with pytest.raises(ValueError):
        cosine([1, 0, 0], [1, 1])


def test_item_text_scores_one(bank):
    for j in (0, 40, 88):
        post = make_post("p", text=bank.items[j].text)
        row = score_post(post, bank, item_vectors(bank, CFG), CFG)
        assert row[j] == pytest.approx(1.0, abs=1e-5)
        assert row.shape == (89,)


def test_score_is_mean_over_chunks(bank):
    words = [f"tok{i}" for i in range(230)]
    post = make_post("p", text=" ".join(words))
    row = score_post(post, bank, item_vectors(bank, CFG), CFG)
    items = np.vstack([stub_encode(t, 128) for t in bank.texts])
    chunk_vecs = [stub_encode(" ".join(words[i:i + 100]), 128) for i in (0, 100, 200)]
    expect = np.mean([items @ v for v in chunk_vecs], axis=0)
    assert np.allclose(row, expect, atol=1e-6)


def test_length_weighted_flag(bank):
    words = [f"tok{i}" for i in range(120)]
    post = make_post("p", text=" ".join(words))
    iv = item_vectors(bank, CFG)
    plain = score_post(post, bank, iv, CFG)
    weighted = score_post(post, bank, iv, CFG, length_weighted=True)
    c1, c2 = stub_encode(" ".join(words[:100]), 128), stub_encode(" ".join(words[100:]), 128)
    items = np.vstack([stub_encode(t, 128) for t in bank.texts])
    assert np.allclose(weighted, (100 * (items @ c1) + 20 * (items @ c2)) / 120, atol=1e-6)
    assert not np.allclose(plain, weighted)


def test_batched_equals_unbatched_bitwise(bank):
    posts, _ = synthetic_corpus(bank, n_posts=300, n_users=10, seed=4, mean_words=150)
    ref = score_corpus(posts, bank, CFG, posts_per_batch=1)
    for b in (7, 64, 1000):
        out = score_corpus(posts, bank, CFG, posts_per_batch=b)
        assert out.post_ids == ref.post_ids
        assert np.array_equal(out.scores, ref.scores)
    single = np.vstack([score_post(p, bank, item_vectors(bank, CFG), CFG) for p in posts[:20]])
    assert np.array_equal(single, ref.scores[:20])


def test_score_corpus_skips_and_records(bank):
    posts = [make_post("a"), Post("b", "u", "f", 1, "   "), make_post("c")]
    out = score_corpus(posts, bank, CFG)
    assert out.post_ids == ["a", "c"]
    assert out.skipped[0][0] == "b"
    assert out.bank_fingerprint == bank.fingerprint()
    assert out.provider_tag == CFG.tag
    with pytest.raises(ValueError):
        score_corpus([], bank, CFG)
    with pytest.raises(ValueError):
        score_corpus(posts, bank, CFG, posts_per_batch=0)


def test_scores_bounded(bank):
    posts, _ = synthetic_corpus(bank, n_posts=50, n_users=5, seed=1)
    out = score_corpus(posts, bank, CFG)
    assert np.all(np.abs(out.scores) <= 1.0)


def test_matrix_round_trip(bank, tmp_path):
    posts, _ = synthetic_corpus(bank, n_posts=30, n_users=3, seed=2)
    out = score_corpus(posts, bank, CFG)
    out.save(tmp_path / "s.e11m")
    back = ItemScoreMatrix.load(tmp_path / "s.e11m")
    assert back.post_ids == out.post_ids and back.item_ids == out.item_ids
    # stored as float32
    assert np.allclose(back.scores, out.scores, atol=1e-7)
    assert back.bank_fingerprint == out.bank_fingerprint
    out.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["post_id", bank.item_ids[0]] and len(lines) == 31


def test_matrix_validation():
    with pytest.raises(ValueError):
        ItemScoreMatrix(["a"], ["i", "j"], np.zeros((1, 3)), "f", "t")
    with pytest.raises(ValueError):
        ItemScoreMatrix(["a"], ["i"], np.array([[1.5]]), "f", "t")
    with pytest.raises(ValueError):
        ItemScoreMatrix(["a"], ["i"], np.array([[np.nan]]), "f", "t")
