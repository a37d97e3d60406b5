import numpy as np
import pytest

from scenesearch.embeddings import (
    EmbeddingError,
    EmbeddingParseError,
    EmbeddingTable,
    cosine_similarity,
    embed_phrase,
    load_embeddings,
    tokenize,
)


def write_table(tmp_path, lines):
    path = tmp_path / "vecs.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadEmbeddings:
    def test_two_line_file(self, tmp_path):
        path = write_table(tmp_path, ["cat 1.0 0.0 0.5", "dog 0.0 1.0 -0.5"])
        table = load_embeddings(path)
        assert table.dim == 3
        assert len(table) == 2
        np.testing.assert_array_equal(table.vector("cat"), [1.0, 0.0, 0.5])

    def test_ragged_line_reports_line_number(self, tmp_path):
        path = write_table(tmp_path, ["cat 1.0 0.0", "dog 0.0 1.0 2.0"])
        with pytest.raises(EmbeddingParseError) as err:
            load_embeddings(path)
        assert err.value.line == 2

    def test_non_numeric_component(self, tmp_path):
        path = write_table(tmp_path, ["cat 1.0 oops"])
        with pytest.raises(EmbeddingParseError):
            load_embeddings(path)

    def test_empty_file(self, tmp_path):
        path = write_table(tmp_path, [""])
        with pytest.raises(EmbeddingParseError):
            load_embeddings(path)

    def test_packaged_fixture(self, table):
        assert table.dim == 50
        assert len(table) == 500
        assert "kitchen" in table
        assert "fridge" in table

    def test_lookup_is_case_insensitive(self, tmp_path):
        path = write_table(tmp_path, ["Cat 1.0 2.0"])
        table = load_embeddings(path)
        np.testing.assert_array_equal(table.vector("CAT"), [1.0, 2.0])


class TestEmbedPhrase:
    def test_single_word_is_exact(self, table):
        np.testing.assert_array_equal(embed_phrase(table, "kitchen"),
                                      table.vector("kitchen"))

    def test_opposite_vectors_cancel(self):
        entries = {"up": np.array([1.0, -2.0]), "down": np.array([-1.0, 2.0])}
        table = EmbeddingTable(dim=2, entries=entries)
        np.testing.assert_allclose(embed_phrase(table, "up down"), [0.0, 0.0])

    def test_mean_matches_independent_summation(self, table):
        phrase = "Handmade Brown Hat"
        vec = embed_phrase(table, phrase)
        tokens = tokenize(phrase)
        assert len(tokens) == 3
        # independent order of summation
        alt = np.zeros(table.dim)
        for token in reversed(tokens):
            alt = alt + table.vector(token) / len(tokens)
        np.testing.assert_allclose(vec, alt, atol=1e-12)

    def test_tokenization(self):
        assert tokenize("Krill_Oil_Pills-Blue 12x") == ["krill", "oil", "pills",
                                                        "blue", "12x"]

    def test_empty_text_errors(self, table):
        with pytest.raises(EmbeddingError):
            embed_phrase(table, " --- ")

    def test_permutation_invariance(self, table):
        rng = np.random.default_rng(0)
        words = ["kitchen", "fridge", "dairy", "fresh", "brown", "book"]
        for _ in range(20):
            perm = list(rng.permutation(words))
            np.testing.assert_allclose(embed_phrase(table, " ".join(words)),
                                       embed_phrase(table, " ".join(perm)),
                                       atol=1e-12)

    def test_oov_fallback_deterministic(self):
        t1 = EmbeddingTable(dim=8, entries={}, fallback_seed=3)
        t2 = EmbeddingTable(dim=8, entries={}, fallback_seed=3)
        v1 = t1.vector("zzyzx")
        np.testing.assert_array_equal(v1, t2.vector("zzyzx"))
        assert np.linalg.norm(v1) == pytest.approx(1.0)
        t3 = EmbeddingTable(dim=8, entries={}, fallback_seed=4)
        assert not np.allclose(v1, t3.vector("zzyzx"))


class TestCosineSimilarity:
    def test_identical_vectors(self):
        v = np.array([0.3, -2.0, 5.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal_vectors(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0

    def test_hand_value_with_independent_routine(self):
        a = np.array([1.0, 2.0, 2.0])
        b = np.array([2.0, 2.0, 1.0])
        # independent evaluation: explicit dot product and norms
        dot = sum(x * y for x, y in zip(a, b))
        norms = (sum(x * x for x in a) ** 0.5) * (sum(y * y for y in b) ** 0.5)
        assert cosine_similarity(a, b) == pytest.approx(8.0 / 9.0, abs=1e-15)
        assert cosine_similarity(a, b) == pytest.approx(dot / norms, abs=1e-15)

    def test_zero_norm_defined_as_zero(self):
        assert cosine_similarity(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(EmbeddingError):
            cosine_similarity(np.zeros(3), np.zeros(4))

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            a = rng.standard_normal(10)
            b = rng.standard_normal(10)
            alpha = float(rng.uniform(0.1, 10.0))
            assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a))
            assert cosine_similarity(alpha * a, b) == pytest.approx(
                cosine_similarity(a, b), abs=1e-12)
