"""Unit tests for ablation variants and their report."""

import pytest

from bgcut.errors import PreconditionError
from bgcut.pipeline.evaluation import BandPoint, IoUResult
from bgcut.training.ablation import VARIANTS, AblationReport, VariantResult, variant_config


def result(variant, seed, mean, band=0.5):
    return VariantResult(
        variant=variant,
        seed=seed,
        iou=IoUResult(background=mean, foreground=mean, mean=mean),
        band_curve=[BandPoint(width=3, iou=band)],
    )


@pytest.mark.unit
class TestVariantConfig:
    """Tests for variant switches."""

    @pytest.mark.parametrize(
        ("variant", "append", "attenuation", "refinement"),
        [
            ("plain", False, False, False),
            ("background_training", True, False, False),
            ("attenuation", False, True, False),
            ("full", False, True, True),
        ],
    )
    def test_switches(self, tiny_config, variant, append, attenuation, refinement):
        """Test each variant toggles its components and takes the run seed."""
        train = variant_config(tiny_config, variant, seed=7).train

        assert train.append_background_samples is append
        assert train.use_attenuation is attenuation
        assert train.use_refinement is refinement
        assert train.seed == 7

    def test_other_sections_untouched(self, tiny_config):
        """Test only the training switches change."""
        config = variant_config(tiny_config, "full", seed=1)

        assert config.backbone == tiny_config.backbone
        assert config.train.crop == tiny_config.train.crop

    def test_unknown_variant(self, tiny_config):
        """Test unknown names are rejected."""
        with pytest.raises(PreconditionError):
            variant_config(tiny_config, "everything", seed=0)

    def test_variant_order(self):
        """Test the variants run from the plain baseline to the full system."""
        assert VARIANTS == ("plain", "background_training", "attenuation", "full")


@pytest.mark.unit
class TestAblationReport:
    """Tests for seed-averaged summaries."""

    def test_means_over_seeds(self):
        """Test mean and band IoU are averaged across seeds."""
        report = AblationReport(
            results=[
                result("plain", 0, 0.6, band=0.2),
                result("plain", 1, 0.8, band=0.4),
                result("full", 0, 0.9),
            ]
        )

        assert report.mean_iou("plain") == pytest.approx(0.7)
        assert report.band_iou("plain", 3) == pytest.approx(0.3)
        assert report.summary() == {"plain": pytest.approx(0.7), "full": pytest.approx(0.9)}

    def test_missing_variant(self):
        """Test asking for a variant without runs fails."""
        with pytest.raises(PreconditionError):
            AblationReport().mean_iou("full")

    def test_missing_band_width(self):
        """Test asking for an unevaluated band width fails."""
        report = AblationReport(results=[result("full", 0, 0.9)])

        with pytest.raises(PreconditionError):
            report.band_iou("full", 20)
