import numpy as np
import pytest

from nova.imageio import read_image, read_pgm, write_pgm
from nova.synthdata import (
    Manifest,
    ManifestError,
    SampleRecord,
    SyntheticSpec,
    generate_dataset,
    load_manifest,
    render_sample,
    split_manifest,
    write_manifest,
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(samples_per_class=16, seed=7)
    return spec, generate_dataset(spec, out), out


class TestImageIO:
    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (37, 53)).astype(np.uint8)
        write_pgm(tmp_path / "x.pgm", img)
        assert np.array_equal(read_pgm(tmp_path / "x.pgm"), img)

    def test_pgm_rejects_bad_input(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "y.pgm", np.zeros((3, 3), np.float32))
        (tmp_path / "z.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError):
            read_pgm(tmp_path / "z.pgm")

    def test_png_ingestion(self, tmp_path):
        from PIL import Image

        img = np.random.default_rng(1).integers(0, 256, (20, 30)).astype(np.uint8)
        Image.fromarray(img, mode="L").save(tmp_path / "a.png")
        assert np.array_equal(read_image(tmp_path / "a.png"), img)


class TestGeneration:
    def test_counts(self, dataset):
        spec, manifest, out = dataset
        assert len(manifest) == 4 * 16
        assert sorted(manifest.classes) == ["blob", "grating", "ring", "wedge"]
        assert len(list((out / "images").glob("*.pgm"))) == 64

    def test_deterministic_bytes(self, tmp_path):
        spec = SyntheticSpec(samples_per_class=4, seed=3)
        m1 = generate_dataset(spec, tmp_path / "a")
        m2 = generate_dataset(spec, tmp_path / "b")
        assert (tmp_path / "a" / "manifest.csv").read_text() == (tmp_path / "b" / "manifest.csv").read_text()
        for r1, r2 in zip(m1.records, m2.records):
            assert np.array_equal(m1.load_image(r1), m2.load_image(r2))

    def test_labels_match_rendered_patterns(self, dataset):
        spec, manifest, _ = dataset
        for i, rec in enumerate(manifest.records):
            image, labels, caption = render_sample(spec, i)
            assert labels == rec.labels
            assert caption == rec.text
            assert np.array_equal(image, manifest.load_image(rec))
            primary = spec.class_names[i // spec.samples_per_class]
            assert rec.labels[primary] == 1
            for cls, flag in rec.labels.items():
                assert (cls.lower() in rec.text) == bool(flag)

    def test_captions_carry_class_token(self, dataset):
        _, manifest, _ = dataset
        for rec in manifest.records:
            assert rec.text.startswith("findings consistent with ")

    def test_nearest_centroid_separability(self, tmp_path):
        """Pixel-space nearest-centroid oracle on noisy single-label output."""
        spec = SyntheticSpec(samples_per_class=24, noise_sigma=10.0, co_occur_prob=0.0, seed=11)
        manifest = generate_dataset(spec, tmp_path / "sep")
        images = np.stack([manifest.load_image(r).astype(np.float64).ravel() for r in manifest.records])
        labels = np.array([spec.class_names.index(next(c for c, v in r.labels.items() if v)) for r in manifest.records])
        fit = np.arange(len(images)) % 2 == 0
        centroids = np.stack([images[fit & (labels == c)].mean(axis=0) for c in range(4)])
        dists = ((images[~fit][:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        accuracy = float(np.mean(dists.argmin(axis=1) == labels[~fit]))
        assert accuracy >= 0.90

    def test_multilabel_cooccurrence_present(self, tmp_path):
        spec = SyntheticSpec(samples_per_class=64, co_occur_prob=0.5, seed=2)
        manifest = generate_dataset(spec, tmp_path / "multi")
        multi = [r for r in manifest.records if sum(r.labels.values()) > 1]
        assert len(multi) > 0
        for rec in multi:
            assert " and " in rec.text

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(classes=(("a", "blob"),))
        with pytest.raises(ValueError):
            SyntheticSpec(samples_per_class=0)
        with pytest.raises(ValueError):
            SyntheticSpec(classes=(("a", "blob"), ("b", "spiral")))


class TestManifestLoading:
    def test_round_trip(self, dataset):
        _, manifest, out = dataset
        loaded = load_manifest(out / "manifest.csv")
        assert loaded.classes == manifest.classes
        assert loaded.records == manifest.records

    def test_uncertain_mapped_to_negative(self, tmp_path):
        write_pgm(tmp_path / "img.pgm", np.zeros((4, 4), np.uint8))
        (tmp_path / "m.csv").write_text("path,text,label_a,label_b\nimg.pgm,report text,-1,1\n")
        loaded = load_manifest(tmp_path / "m.csv")
        assert loaded.records[0].labels == {"a": 0, "b": 1}

    def test_missing_column_named(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,caption,label_a\nx,y,1\n")
        with pytest.raises(ManifestError, match="text"):
            load_manifest(tmp_path / "m.csv")
        (tmp_path / "m2.csv").write_text("path,text,score_a\nx,y,1\n")
        with pytest.raises(ManifestError, match="label_"):
            load_manifest(tmp_path / "m2.csv")

    def test_bad_label_value_cites_row(self, tmp_path):
        write_pgm(tmp_path / "img.pgm", np.zeros((4, 4), np.uint8))
        (tmp_path / "m.csv").write_text("path,text,label_a\nimg.pgm,hello,2\n")
        with pytest.raises(ManifestError, match="row 2"):
            load_manifest(tmp_path / "m.csv")

    def test_dangling_paths_listed(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,text,label_a\nmissing.pgm,hello,1\n")
        with pytest.raises(ManifestError, match="missing.pgm"):
            load_manifest(tmp_path / "m.csv")

    def test_duplicate_paths_rejected(self, tmp_path):
        write_pgm(tmp_path / "img.pgm", np.zeros((4, 4), np.uint8))
        (tmp_path / "m.csv").write_text("path,text,label_a\nimg.pgm,a,1\nimg.pgm,b,0\n")
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(tmp_path / "m.csv")


class TestSplit:
    def test_disjoint_and_stable(self, dataset):
        _, manifest, _ = dataset
        t1, e1 = split_manifest(manifest, 0.1, seed=5)
        t2, e2 = split_manifest(manifest, 0.1, seed=5)
        assert [r.image_path for r in t1.records] == [r.image_path for r in t2.records]
        assert [r.image_path for r in e1.records] == [r.image_path for r in e2.records]
        train_paths = {r.image_path for r in t1.records}
        eval_paths = {r.image_path for r in e1.records}
        assert not train_paths & eval_paths
        assert len(train_paths) + len(eval_paths) == len(manifest)

    def test_different_seed_different_split(self, dataset):
        _, manifest, _ = dataset
        _, e1 = split_manifest(manifest, 0.2, seed=1)
        _, e2 = split_manifest(manifest, 0.2, seed=2)
        assert {r.image_path for r in e1.records} != {r.image_path for r in e2.records}

    def test_fraction_bounds(self, dataset):
        _, manifest, _ = dataset
        with pytest.raises(ValueError):
            split_manifest(manifest, 1.0, seed=0)
