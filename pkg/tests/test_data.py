import numpy as np
import pytest

from xrtree import data, sparse
from xrtree.config import (RunConfig, parse_config, serialize_config)


class TestCombinedFormat:
    def test_basic_line(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("3,7 0:0.5 12:1.0\n")
        ds = data.read_combined(p)
        assert ds.n_labels == 8
        assert ds.features.shape == (1, 13)
        assert ds.labels[0, 3] == 1 and ds.labels[0, 7] == 1
        assert ds.features[0, 12] == pytest.approx(1.0)

    def test_label_out_of_range_rejected(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("12 0:1.0\n")
        with pytest.raises(ValueError, match="out of range"):
            data.read_combined(p, n_labels=10)

    def test_feature_out_of_range_rejected(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("1 5:1.0\n")
        with pytest.raises(ValueError, match="out of range"):
            data.read_combined(p, n_features=5)

    def test_empty_label_field_accepted(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("2 5 4\n 0:1.0\n1 1:2.0\n")
        ds = data.read_combined(p)
        assert ds.n == 2
        assert ds.labels[0].nnz == 0
        assert ds.labels[1, 1] == 1

    def test_malformed_line_reports_lineno(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("1 0:1.0\n1 garbage\n")
        with pytest.raises(data.FormatError, match=":2:"):
            data.read_combined(p)

    def test_header_pins_shapes(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("2 100 50\n1 0:1.0\n2 1:1.0\n")
        ds = data.read_combined(p)
        assert ds.features.shape == (2, 100)
        assert ds.n_labels == 50

    def test_round_trip(self, tmp_path):
        ds = data.gen_synthetic(40, 12, 3, noise=0.1, seed=5)
        p = tmp_path / "rt.svm"
        data.write_combined(ds, p)
        back = data.read_combined(p)
        assert back.features.shape == ds.features.shape
        assert back.labels.shape == ds.labels.shape
        np.testing.assert_array_equal(back.labels.toarray(), ds.labels.toarray())
        np.testing.assert_allclose(back.features.toarray(),
                                   ds.features.toarray(), rtol=1e-5)


class TestOtherReaders:
    def test_label_free_features(self, tmp_path):
        p = tmp_path / "f.svm"
        p.write_text("0:0.5 3:1.5\n\n1:2.0\n")
        x = data.read_features(p)
        assert x.shape == (3, 4)
        assert x[1].nnz == 0

    def test_texts_and_labels(self, tmp_path):
        t = tmp_path / "docs.txt"
        t.write_text("hello world\nsecond doc\n")
        l = tmp_path / "labels.txt"
        l.write_text("0,2\n\n")
        ds = data.ingest(texts=t, labels=l)
        assert ds.texts == ["hello world", "second doc"]
        assert ds.labels.shape == (2, 3)
        assert ds.labels[1].nnz == 0

    def test_mismatched_rows_rejected(self, tmp_path):
        t = tmp_path / "docs.txt"
        t.write_text("only one doc\n")
        l = tmp_path / "labels.txt"
        l.write_text("0\n1\n")
        with pytest.raises(ValueError, match="label rows"):
            data.ingest(texts=t, labels=l)

    def test_predictions_round_trip(self, tmp_path):
        pred = sparse.from_dense(
            [[0.0, -0.25, 0.5], [1.25, 0.0, 0.0]])
        p = tmp_path / "pred.txt"
        data.write_predictions(pred, p, topk=2)
        lines = p.read_text().splitlines()
        assert lines[0].startswith("2:0.5")
        back = data.read_predictions(p, n_labels=3)
        assert back[0, 2] == pytest.approx(0.5)
        assert back[1, 0] == pytest.approx(1.25)

    def test_prediction_order_ties_to_smaller_label(self, tmp_path):
        pred = sparse.from_dense([[0.5, 0.5, 0.1]])
        p = tmp_path / "pred.txt"
        data.write_predictions(pred, p, topk=3)
        first = p.read_text().split()
        assert first[0].startswith("0:") and first[1].startswith("1:")


class TestGenSynthetic:
    def test_deterministic(self):
        a = data.gen_synthetic(30, 10, 2, noise=0.3, seed=9)
        b = data.gen_synthetic(30, 10, 2, noise=0.3, seed=9)
        assert a.features.toarray().tobytes() == b.features.toarray().tobytes()
        assert a.labels.toarray().tobytes() == b.labels.toarray().tobytes()

    def test_every_instance_labeled(self):
        ds = data.gen_synthetic(50, 20, 4, noise=0.0, seed=1)
        assert np.all(np.diff(ds.labels.indptr) >= 1)

    def test_noiseless_flat_ova_is_perfect(self):
        # with no corruption each label's indicator column identifies it
        ds = data.gen_synthetic(200, 16, 4, noise=0.0, seed=2)
        x = ds.features.toarray()
        hits = 0
        for r in range(ds.n):
            scores = x[r, :16]
            pred = np.argmax(scores)
            hits += ds.labels[r, pred]
        assert hits == ds.n

    def test_many_positives_regime(self):
        ds = data.gen_synthetic(120, 60, 12, noise=0.02, seed=3,
                                avg_labels=9, clusters_per_instance=2)
        mean_labels = ds.labels.nnz / ds.n
        assert mean_labels >= 6.0

    def test_cluster_size_validation(self):
        with pytest.raises(ValueError):
            data.gen_synthetic(10, 5, 9, noise=0, seed=0)


class TestConfigRoundTrip:
    def test_default_round_trip(self):
        cfg = RunConfig()
        text = serialize_config(cfg)
        assert "lambda = 0.5" in text
        assert parse_config(text) == cfg

    def test_modified_round_trip(self):
        cfg = RunConfig()
        cfg.trainer.lam = 0.25
        cfg.trainer.alpha = 2.0
        cfg.tree.hlt_prelim = "16-256-3956"
        cfg.encoder.enabled = False
        cfg.encoder.n_step = 2400
        assert parse_config(serialize_config(cfg)) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("[trainer]\nbogus = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown section"):
            parse_config("[nonsense]\n")

    def test_type_mismatch_rejected(self):
        with pytest.raises(ValueError, match="expects"):
            parse_config('[trainer]\nbeam = "ten"\n')

    def test_comments_and_blank_lines(self):
        text = "# full line comment\n[trainer]\nbeam = 5  # trailing\n"
        assert parse_config(text).trainer.beam == 5

    def test_validation_bad_lambda(self):
        with pytest.raises(ValueError, match="lambda"):
            parse_config("[trainer]\nlambda = 0.0\n")
