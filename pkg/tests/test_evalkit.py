"""Patch locations, embedding metrics (CLIP-score, FID), and the seam ratio."""

import numpy as np
import pytest

from stitchpano.errors import (
    BoundsError,
    ConfigError,
    DegenerateEmbeddingError,
    InsufficientSamplesError,
    NumericalDomainError,
    ShapeError,
)
from stitchpano.evalkit import (
    EmbeddingSet,
    EvalReport,
    PatchLocation,
    clip_score,
    collect_embeddings,
    crop_patch,
    fid,
    load_embeddings,
    load_locations,
    matrix_sqrt_psd,
    sample_locations,
    save_embeddings,
    save_locations,
    seam_components,
    seam_discontinuity,
)
from stitchpano.tensors import Canvas, Rng, gaussian_fill


class TestSampleLocations:
    def test_panorama_layout_forces_y_zero(self):
        locations = sample_locations((512, 1024), 200, 512, Rng(1))
        assert all(loc.y == 0 for loc in locations)
        assert all(0 <= loc.x <= 512 for loc in locations)
        assert {loc.x for loc in locations} - set(range(513)) == set()

    def test_thousand_locations_round_trip(self, tmp_path):
        locations = sample_locations((512, 1024), 1000, 512, Rng(9), n_images=20)
        assert len(locations) == 1000
        assert {loc.image_index for loc in locations} <= set(range(20))
        path = tmp_path / "locations.json"
        save_locations(path, locations)
        assert load_locations(path) == locations

    def test_same_seed_same_locations(self):
        a = sample_locations((64, 128), 50, 16, Rng(4), n_images=3)
        b = sample_locations((64, 128), 50, 16, Rng(4), n_images=3)
        assert a == b

    def test_oversized_patch_rejected(self):
        with pytest.raises(ConfigError):
            sample_locations((64, 128), 10, 65, Rng(0))

    def test_recrop_is_bit_identical(self):
        image = gaussian_fill(64, 128, 3, Rng(5))
        for loc in sample_locations((64, 128), 25, 16, Rng(6)):
            first = crop_patch(image, loc)
            again = crop_patch(image, loc)
            assert first.equals(again)

    def test_crop_bounds_checked(self):
        image = gaussian_fill(32, 32, 1, Rng(7))
        with pytest.raises(BoundsError):
            crop_patch(image, PatchLocation(0, 20, 0, 16))


class TestClipScore:
    def test_identical_sets_score_exactly_one(self):
        vectors = Rng(1).generator().standard_normal((50, 16))
        a = EmbeddingSet(vectors)
        b = EmbeddingSet(vectors.copy())
        assert clip_score(a, b) == 1.0

    def test_orthogonal_pairs_score_zero(self):
        n, d = 32, 8
        gen = np.zeros((n, d))
        real = np.zeros((n, d))
        gen[:, 0] = 1.0
        real[:, 1] = 1.0
        assert abs(clip_score(EmbeddingSet(gen), EmbeddingSet(real))) <= 1e-7

    def test_positive_rescaling_invariance(self):
        gen = Rng(2).generator().standard_normal((20, 8))
        real = Rng(3).generator().standard_normal((20, 8))
        base = clip_score(EmbeddingSet(gen), EmbeddingSet(real))
        scales = Rng(4).generator().uniform(0.1, 10.0, size=(20, 1))
        rescaled = clip_score(EmbeddingSet(gen * scales), EmbeddingSet(real))
        assert rescaled == pytest.approx(base, abs=1e-12)

    def test_zero_norm_vector_rejected(self):
        gen = np.ones((3, 4))
        gen[1] = 0.0
        with pytest.raises(DegenerateEmbeddingError):
            clip_score(EmbeddingSet(gen), EmbeddingSet(np.ones((3, 4))))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            clip_score(EmbeddingSet(np.ones((3, 4))), EmbeddingSet(np.ones((4, 4))))


class TestMatrixSqrtPsd:
    def test_identity(self):
        assert np.allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4))

    def test_diagonal(self):
        root = matrix_sqrt_psd(np.diag([4.0, 9.0]))
        assert np.allclose(root, np.diag([2.0, 3.0]))

    def test_random_psd_residual(self):
        gen = Rng(10).generator()
        for _ in range(20):
            a = gen.standard_normal((16, 16))
            s = a.T @ a
            root = matrix_sqrt_psd(s)
            residual = np.linalg.norm(root @ root - s) / np.linalg.norm(s)
            assert residual <= 1e-6
            assert np.allclose(root, root.T)

    def test_asymmetric_rejected(self):
        bad = np.eye(3)
        bad[0, 1] = 0.5
        with pytest.raises(NumericalDomainError, match="symmetric"):
            matrix_sqrt_psd(bad)

    def test_indefinite_rejected(self):
        with pytest.raises(NumericalDomainError, match="indefinite"):
            matrix_sqrt_psd(np.diag([1.0, -0.5]))

    def test_tiny_negative_eigenvalues_clamped(self):
        s = np.diag([1.0, -1e-12])
        root = matrix_sqrt_psd(s)
        assert root[1, 1] == 0.0


class TestFid:
    def test_identical_sets_give_zero(self):
        vectors = Rng(20).generator().standard_normal((200, 16))
        assert fid(EmbeddingSet(vectors), EmbeddingSet(vectors.copy())) <= 1e-6

    def test_symmetry(self):
        gen = Rng(21).generator()
        a = EmbeddingSet(gen.standard_normal((100, 8)))
        b = EmbeddingSet(gen.standard_normal((100, 8)) + 0.3)
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)

    def test_mean_offset_recovers_squared_norm(self):
        # Same covariance, mean offset delta: FID ~ ||delta||^2 for large N.
        gen = Rng(22).generator()
        d = 16
        n = 4000
        mix = np.eye(d) + 0.1 * gen.standard_normal((d, d))
        base = gen.standard_normal((n, d)) @ mix
        other = gen.standard_normal((n, d)) @ mix
        delta = np.ones(d)
        value = fid(EmbeddingSet(base + delta), EmbeddingSet(other))
        expected = float(delta @ delta)
        assert abs(value - expected) <= 0.05 * expected

    def test_orthogonal_rotation_invariance(self):
        gen = Rng(23).generator()
        a = gen.standard_normal((300, 8))
        b = gen.standard_normal((300, 8)) * 1.3 + 0.2
        q, _ = np.linalg.qr(gen.standard_normal((8, 8)))
        plain = fid(EmbeddingSet(a), EmbeddingSet(b))
        rotated = fid(EmbeddingSet(a @ q), EmbeddingSet(b @ q))
        assert abs(plain - rotated) <= 1e-5 * max(1.0, plain)

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamplesError):
            fid(EmbeddingSet(np.ones((1, 4))), EmbeddingSet(np.ones((5, 4))))

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            fid(EmbeddingSet(np.ones((5, 4))), EmbeddingSet(np.ones((5, 3))))


class TestSeamMetric:
    def test_constant_image_has_zero_ratio(self):
        assert seam_discontinuity(Canvas.constant(8, 32, 3, 0.7)) == 0.0

    def test_column_ramp(self):
        width = 32
        cols = np.arange(width, dtype=np.float32)
        canvas = Canvas(np.tile(cols[None, :, None], (4, 1, 2)))
        d_wrap, d_interior, ratio = seam_components(canvas)
        assert d_wrap == width - 1
        assert d_interior == 1.0
        assert ratio == width - 1

    def test_wrap_consistent_random_image_scores_near_one(self):
        # Columns are i.i.d., so the wrap pair is statistically identical to
        # interior pairs; with many rows the ratio concentrates at 1.
        data = Rng(30).generator().standard_normal((256, 64, 4), dtype=np.float32)
        ratio = seam_discontinuity(Canvas(data))
        assert abs(ratio - 1.0) < 0.15

    def test_width_floor(self):
        with pytest.raises(ConfigError):
            seam_discontinuity(Canvas.constant(4, 2, 1, 0.0))


class TestEmbeddingIo:
    def test_round_trip(self, tmp_path):
        vectors = Rng(40).generator().standard_normal((10, 6)).astype(np.float32)
        emb = EmbeddingSet(vectors)
        path = tmp_path / "emb.ptsr"
        save_embeddings(path, emb)
        back = load_embeddings(path)
        assert np.array_equal(back.vectors, emb.vectors)

    def test_rank_checked(self, tmp_path):
        from stitchpano.tensors import write_array

        path = tmp_path / "bad.ptsr"
        write_array(np.ones((2, 2, 2), dtype=np.float32), path)
        with pytest.raises(ShapeError):
            load_embeddings(path)

    def test_collect_embeddings_preserves_order(self):
        patches = [Canvas.constant(2, 2, 1, float(i)) for i in range(5)]
        emb = collect_embeddings(patches, lambda p: np.array([p.data.mean(), 1.0]))
        assert np.array_equal(emb.vectors[:, 0], np.arange(5.0))

    def test_validation(self):
        with pytest.raises(ShapeError):
            EmbeddingSet(np.ones(4))
        with pytest.raises(ValueError):
            EmbeddingSet(np.array([[np.nan, 1.0]]))


class TestEvalReport:
    def test_from_samples_and_round_trip(self, tmp_path):
        report = EvalReport.from_samples(
            [0.7, 0.72, 0.71], [150.0, 160.0, 155.0],
            embedding_source="stub-encoder", seam_ratio=1.1,
        )
        assert report.repeats == 3
        assert report.clip_std >= 0 and report.fid_std >= 0
        assert report.clip_mean == pytest.approx(0.71, abs=1e-9)
        path = tmp_path / "report.json"
        report.save(path)
        assert EvalReport.load(path) == report

    def test_single_repeat_has_zero_std(self):
        report = EvalReport.from_samples([0.5], [100.0])
        assert report.clip_std == 0.0 and report.fid_std == 0.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            EvalReport(0.5, -0.1, 100.0, 1.0, 3)
        with pytest.raises(ConfigError):
            EvalReport(0.5, 0.1, 100.0, 1.0, 0)
