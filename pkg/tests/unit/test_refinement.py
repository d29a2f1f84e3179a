"""Unit tests for the spatial-temporal refinement network."""

import numpy as np
import pytest

from bgcut.attenuation.model import ScoreMap
from bgcut.backbone.graph import bias_name, weight_name
from bgcut.config import RefinementConfig
from bgcut.errors import PreconditionError, ShapeError
from bgcut.refinement.network import (
    STACK_INPUT,
    ScoreStack,
    build_refinement,
    clamped_window,
    guidance_mode,
    refine,
    refinement_scores,
    stack_arrays,
)
from bgcut.tensor.gradcheck import check_gradients


def score_maps(rng, count, h=32, w=32, first=0):
    return [
        ScoreMap(scores=rng.standard_normal((1, 2, h, w)).astype(np.float32), frame_index=first + i)
        for i in range(count)
    ]


def frames(rng, count, h=32, w=32):
    return [rng.integers(0, 256, (h, w, 3), dtype=np.uint8) for _ in range(count)]


@pytest.mark.unit
class TestClampedWindow:
    """Tests for clamped_window."""

    def test_interior(self):
        """Test an interior frame gets its plain neighbours."""
        assert clamped_window(2, 5, 2) == [0, 1, 2, 3, 4]

    def test_edges_replicate(self):
        """Test windows at the clip edges repeat the first or last frame."""
        assert clamped_window(0, 5, 2) == [0, 0, 0, 1, 2]
        assert clamped_window(4, 5, 2) == [2, 3, 4, 4, 4]

    def test_single_frame_clip(self):
        """Test a one-frame clip fills the window with that frame."""
        assert clamped_window(0, 1, 2) == [0, 0, 0, 0, 0]

    def test_radius_zero(self):
        """Test n = 0 gives the frame alone."""
        assert clamped_window(3, 5, 0) == [3]

    @pytest.mark.parametrize("index", [-1, 5])
    def test_index_outside_clip(self, index):
        """Test indices outside the clip are rejected."""
        with pytest.raises(PreconditionError):
            clamped_window(index, 5, 1)


@pytest.mark.unit
class TestBuildRefinement:
    """Tests for the encoder-decoder layout."""

    @pytest.mark.parametrize(
        ("guidance", "center_only", "expected"),
        [(False, False, 10), (True, True, 13), (True, False, 25)],
    )
    def test_input_channels(self, guidance, center_only, expected):
        """Test the stack width is 2(2n+1) score channels plus guidance colour."""
        config = RefinementConfig(
            n=2, encoder_channels=(4, 4, 4), guidance=guidance, guidance_center_only=center_only
        )

        model = build_refinement(config)

        assert model.layer(STACK_INPUT).out_channels == expected
        assert guidance_mode(model, 5) == config.guidance_frames

    def test_guidance_mode_rejects_other_windows(self, tiny_refinement):
        """Test a network cannot be fed a window of another length."""
        model = build_refinement(tiny_refinement)

        with pytest.raises(ShapeError):
            guidance_mode(model, 5)

    def test_output_at_input_resolution(self, tiny_refinement, rng):
        """Test a multiple-of-8 input comes back at the same size with two channels."""
        model = build_refinement(tiny_refinement)
        stack = rng.standard_normal((2, tiny_refinement.in_channels, 32, 24)).astype(np.float32)
        center = stack[:, 2:4]

        out = refinement_scores(model, stack, center)

        assert out.shape == (2, 2, 32, 24)

    @pytest.mark.parametrize(("h", "w"), [(29, 35), (17, 8), (9, 9)])
    def test_arbitrary_sizes_padded_and_cropped(self, tiny_refinement, rng, h, w):
        """Test sizes that are not multiples of 8 are padded then cropped back."""
        model = build_refinement(tiny_refinement)
        stack = rng.standard_normal((1, tiny_refinement.in_channels, h, w)).astype(np.float32)

        out = refinement_scores(model, stack, stack[:, 2:4])

        assert out.shape == (1, 2, h, w)

    def test_residual_needs_center_scores(self, tiny_refinement, rng):
        """Test the residual network refuses to run without the centre scores."""
        model = build_refinement(tiny_refinement)
        stack = rng.standard_normal((1, tiny_refinement.in_channels, 8, 8)).astype(np.float32)

        with pytest.raises(PreconditionError):
            refinement_scores(model, stack)

    def test_zero_decoder_passes_center_through(self, tiny_refinement, rng):
        """Test a zeroed last deconv returns the centre scores unchanged."""
        model = build_refinement(tiny_refinement)
        model.params[weight_name("dec3")].value = np.zeros_like(model.param(weight_name("dec3")))
        model.params[bias_name("dec3")].value = np.zeros_like(model.param(bias_name("dec3")))
        stack = rng.standard_normal((1, tiny_refinement.in_channels, 16, 16)).astype(np.float32)
        center = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)

        out = refinement_scores(model, stack, center)

        assert np.array_equal(out.value, center)

    def test_skip_connections_contribute(self, tiny_refinement, rng):
        """Test the fused encoder maps change the output."""
        stack = rng.standard_normal((1, tiny_refinement.in_channels, 16, 16)).astype(np.float32)
        center = stack[:, 2:4]

        fused = refinement_scores(build_refinement(tiny_refinement, seed=2), stack, center)
        plain = refinement_scores(
            build_refinement(tiny_refinement, seed=2, fuse_skips=False), stack, center
        )

        assert not np.allclose(fused.value, plain.value)

    def test_end_to_end_gradient_check(self):
        """Test finite differences through the refinement network at 64-bit."""
        config = RefinementConfig(n=1, encoder_channels=(2, 2, 2), guidance_center_only=True)
        model = build_refinement(config, seed=4).astype(np.float64)
        rng = np.random.default_rng(3)
        stack = rng.standard_normal((1, config.in_channels, 16, 16))
        center = stack[:, 2:4].copy()

        result = check_gradients(
            lambda v: refinement_scores(model, v[0], v[1]),
            [stack, center],
            step=1e-6,
            max_elements=40,
        )

        assert result.max_relative_error < 1e-3


@pytest.mark.unit
class TestStackArrays:
    """Tests for assembling network inputs."""

    def test_layout(self, rng):
        """Test score channels come first in time order, then guidance."""
        scores = rng.standard_normal((1, 3, 2, 4, 4))
        guidance = rng.standard_normal((1, 3, 3, 4, 4))

        full, center = stack_arrays(scores, guidance, 3)
        only, _ = stack_arrays(scores, guidance, 1)
        bare, _ = stack_arrays(scores, guidance, 0)

        assert full.shape == (1, 15, 4, 4)
        assert np.array_equal(full[:, 2:4], scores[:, 1])
        assert np.array_equal(full[:, 6:9], guidance[:, 0])
        assert np.array_equal(only[:, 6:9], guidance[:, 1])
        assert bare.shape == (1, 6, 4, 4)
        assert np.array_equal(center, scores[:, 1])


@pytest.mark.unit
class TestRefine:
    """Tests for refine on a ScoreStack."""

    def test_refines_center_frame(self, tiny_refinement, rng):
        """Test the output is one score map carrying the centre frame's index."""
        model = build_refinement(tiny_refinement)
        stack = ScoreStack(scores=score_maps(rng, 3, first=4), guidance=frames(rng, 3))

        refined = refine(stack, model)

        assert refined.scores.shape == (1, 2, 32, 32)
        assert refined.frame_index == 5

    def test_odd_sized_frames(self, tiny_refinement, rng):
        """Test frames that are not multiples of 8 keep their size."""
        model = build_refinement(tiny_refinement)
        stack = ScoreStack(scores=score_maps(rng, 3, 29, 35), guidance=frames(rng, 3, 29, 35))

        assert refine(stack, model).shape == (29, 35)

    def test_without_guidance(self, rng):
        """Test a score-only network ignores the colour frames."""
        model = build_refinement(
            RefinementConfig(n=1, encoder_channels=(4, 4, 4), guidance=False)
        )
        maps = score_maps(rng, 3)

        a = refine(ScoreStack(scores=maps, guidance=frames(rng, 3)), model)
        b = refine(ScoreStack(scores=maps, guidance=[]), model)

        assert np.array_equal(a.scores, b.scores)

    def test_even_window_rejected(self, tiny_refinement, rng):
        """Test a window must hold an odd number of score maps."""
        stack = ScoreStack(scores=score_maps(rng, 2), guidance=frames(rng, 2))

        with pytest.raises(ShapeError):
            refine(stack, build_refinement(tiny_refinement))

    def test_size_mismatch_rejected(self, tiny_refinement, rng):
        """Test score maps and guidance frames must share one size."""
        stack = ScoreStack(scores=score_maps(rng, 3), guidance=frames(rng, 3, 16, 16))

        with pytest.raises(ShapeError):
            refine(stack, build_refinement(tiny_refinement))

    def test_out_of_order_rejected(self, tiny_refinement, rng):
        """Test score maps must be in temporal order."""
        maps = score_maps(rng, 3)
        stack = ScoreStack(scores=[maps[2], maps[0], maps[1]], guidance=frames(rng, 3))

        with pytest.raises(ShapeError):
            refine(stack, build_refinement(tiny_refinement))

    def test_missing_guidance_rejected(self, tiny_refinement, rng):
        """Test a guided network needs one colour frame per score map."""
        stack = ScoreStack(scores=score_maps(rng, 3), guidance=frames(rng, 1))

        with pytest.raises(ShapeError):
            refine(stack, build_refinement(tiny_refinement))
