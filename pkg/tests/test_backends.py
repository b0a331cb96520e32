import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saic import raster
from saic.backends import conformance, protocol
from saic.backends.reference import (
    ReferenceEmbeddingBackend,
    ReferenceGenerationBackend,
    ReferenceJudgeBackend,
    ReferenceSegmentationBackend,
    reference_backends,
)
from saic.backends.types import (
    BACKGROUND_STYLE,
    SELF_STYLE,
    GenerationRequest,
    parse_verdict,
)
from saic.errors import (
    DimensionMismatchError,
    RegionOutOfBoundsError,
    UnparseableVerdictError,
)


def _image(seed, h=32, w=32):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


class TestProtocolCodecs:
    # every (name, payload) pair decodes, re-encodes, and re-decodes to the
    # same wire bytes, pinning the JSON layer against drift
    @pytest.mark.parametrize(
        "name,payload", conformance.codec_roundtrip_payloads(), ids=lambda v: v if isinstance(v, str) else ""
    )
    def test_roundtrip(self, name, payload):
        if name == "embed-request-nomask":
            kind, direction = "embed", "request"
        else:
            kind, direction = name.split("-", 1)
        decode = getattr(protocol, f"decode_{kind}_{direction}")
        encode = getattr(protocol, f"encode_{kind}_{direction}")
        decoded = decode(payload)
        re_encoded = encode(*decoded) if isinstance(decoded, tuple) else encode(decoded)
        assert re_encoded == payload

    def test_png_b64_roundtrip(self):
        img = _image(0)
        encoded = protocol.encode_png_b64(img)
        assert isinstance(encoded, str)
        np.testing.assert_array_equal(protocol.decode_png_b64(encoded), img)

    def test_bad_b64_rejected(self):
        with pytest.raises(Exception):
            protocol.decode_png_b64("!!!notb64!!!")

    def test_embed_response_dim_check(self):
        bundle = protocol.decode_embed_response({"global": [1.0, 0.0], "tokens": []}, expect_dim=2)
        assert bundle.global_vec.shape == (2,)
        with pytest.raises(protocol.MalformedResponseError):
            protocol.decode_embed_response({"global": [1.0, 0.0], "tokens": []}, expect_dim=3)

    def test_embed_response_norm_check(self):
        with pytest.raises(protocol.MalformedResponseError):
            protocol.decode_embed_response({"global": [1.0, 1.0], "tokens": []})

    def test_compose_request_carries_variant_and_seed(self):
        _, payload = next(
            p for p in conformance.codec_roundtrip_payloads() if p[0] == "compose-request"
        )
        req = protocol.decode_compose_request(payload)
        assert req.variant_tag == SELF_STYLE and req.seed == 1234
        assert req.bbox == (8, 8, 12, 12)
        assert len(req.id_tokens) == 2


class TestParseVerdict:
    def test_plain_choice(self):
        v = parse_verdict("Choice: A\nReason: cleaner boundary")
        assert v.choice == "A" and "cleaner" in v.rationale

    def test_lowercase_and_padding(self):
        assert parse_verdict("  choice:  b  \nReason: x").choice == "B"

    def test_first_choice_line_wins(self):
        assert parse_verdict("preamble\nChoice: B\nChoice: A").choice == "B"

    @pytest.mark.parametrize("text", ["", "no verdict here", "Choice: C", "Choice:"])
    def test_unparseable(self, text):
        with pytest.raises(UnparseableVerdictError):
            parse_verdict(text)


class TestSegmentation:
    def test_ellipse_center_on_corners_off(self):
        backend = ReferenceSegmentationBackend()
        mask = backend.segment(_image(1, 40, 40), (4, 6, 20, 12))
        assert mask.shape == (12, 20)
        on = raster.mask_on(mask)
        assert on[6, 10]
        assert not on[0, 0] and not on[0, 19] and not on[11, 0] and not on[11, 19]

    def test_flip_symmetry(self):
        backend = ReferenceSegmentationBackend()
        mask = backend.segment(_image(2, 30, 30), (3, 3, 17, 11))
        on = raster.mask_on(mask)
        np.testing.assert_array_equal(on, on[::-1, :])
        np.testing.assert_array_equal(on, on[:, ::-1])

    def test_out_of_bounds_rejected(self):
        backend = ReferenceSegmentationBackend()
        with pytest.raises(RegionOutOfBoundsError):
            backend.segment(_image(3, 20, 20), (15, 15, 10, 10))

    def test_deterministic(self):
        backend = ReferenceSegmentationBackend()
        img = _image(4)
        np.testing.assert_array_equal(
            backend.segment(img, (2, 2, 10, 10)), backend.segment(img, (2, 2, 10, 10))
        )


class TestEmbedding:
    def test_unit_norm_and_dim(self):
        backend = ReferenceEmbeddingBackend(dim=96)
        bundle = backend.embed(_image(5))
        assert bundle.global_vec.shape == (96,)
        assert abs(float(np.linalg.norm(bundle.global_vec)) - 1.0) < 1e-9
        assert len(bundle.tokens) == 4
        for token in bundle.tokens:
            assert token.shape == (96,)

    def test_mask_changes_embedding(self):
        backend = ReferenceEmbeddingBackend(dim=96)
        img = _image(6)
        mask = np.zeros(img.shape[:2], dtype=np.uint8)
        mask[:8, :8] = 255
        full = backend.embed(img)
        masked = backend.embed(img, mask)
        assert float(np.abs(full.global_vec - masked.global_vec).max()) > 1e-6

    def test_deterministic(self):
        backend = ReferenceEmbeddingBackend(dim=64)
        img = _image(7)
        np.testing.assert_array_equal(backend.embed(img).global_vec, backend.embed(img).global_vec)

    def test_grayscale_promoted_to_rgb(self):
        backend = ReferenceEmbeddingBackend(dim=64)
        gray = _image(6)[:, :, 0]
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        np.testing.assert_array_equal(
            backend.embed(gray).global_vec, backend.embed(rgb).global_vec
        )

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10**6), dim=st.sampled_from([48, 96, 768]))
    def test_unit_norm_property(self, seed, dim):
        backend = ReferenceEmbeddingBackend(dim=dim)
        bundle = backend.embed(_image(seed, 16, 16))
        assert abs(float(np.linalg.norm(bundle.global_vec)) - 1.0) < 1e-9


def _compose_request(seed=0, variant=SELF_STYLE):
    rng = np.random.default_rng(seed)
    background = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    conditioning = background.copy()
    bbox = (8, 10, 12, 10)
    x, y, w, h = bbox
    conditioning[y : y + h, x : x + w] = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    shape_mask = np.zeros((h, w), dtype=np.uint8)
    shape_mask[2:-2, 2:-2] = 255
    candidate_crop = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return GenerationRequest(
        background=background,
        conditioning=conditioning,
        shape_mask=shape_mask,
        bbox=bbox,
        id_tokens=[np.ones(8) / np.sqrt(8.0)],
        seed=77,
        variant_tag=variant,
        metadata={"candidate_crop": candidate_crop, "candidate_mask": shape_mask},
    )


class TestGeneration:
    def test_output_dims_match_background(self):
        backend = ReferenceGenerationBackend()
        req = _compose_request()
        out = backend.generate(req)
        assert out.shape == req.background.shape and out.dtype == np.uint8

    def test_pixels_outside_bbox_unchanged(self):
        backend = ReferenceGenerationBackend()
        req = _compose_request(seed=1)
        out = backend.generate(req)
        x, y, w, h = req.bbox
        shielded = out.copy()
        shielded[y : y + h, x : x + w] = req.background[y : y + h, x : x + w]
        np.testing.assert_array_equal(shielded, req.background)

    def test_changes_something_inside(self):
        backend = ReferenceGenerationBackend()
        req = _compose_request(seed=2)
        out = backend.generate(req)
        assert (out != req.background).any()

    def test_deterministic(self):
        backend = ReferenceGenerationBackend()
        np.testing.assert_array_equal(
            backend.generate(_compose_request(seed=3)), backend.generate(_compose_request(seed=3))
        )

    def test_missing_candidate_crop_rejected(self):
        backend = ReferenceGenerationBackend()
        req = _compose_request(seed=4)
        req.metadata.pop("candidate_crop")
        with pytest.raises(DimensionMismatchError):
            backend.generate(req)

    def test_variants_differ_when_conditioning_differs(self):
        backend = ReferenceGenerationBackend()
        a = _compose_request(seed=5, variant=SELF_STYLE)
        b = _compose_request(seed=5, variant=BACKGROUND_STYLE)
        x, y, w, h = b.bbox
        b.conditioning = b.conditioning.copy()
        b.conditioning[y : y + h, x : x + w] //= 2
        out_a, out_b = backend.generate(a), backend.generate(b)
        assert (out_a != out_b).any()


class TestJudge:
    def test_identical_images_choose_a(self):
        backend = ReferenceJudgeBackend()
        img = _image(8)
        verdict = backend.judge(img, img, "pick")
        assert verdict.choice == "A" and verdict.rationale

    def test_order_swap_flips_letter_consistently(self):
        # content-based scoring: swapping the argument order must swap the
        # winning letter, never the winning image
        backend = ReferenceJudgeBackend()
        smooth = np.full((24, 24, 3), 90, dtype=np.uint8)
        harsh = smooth.copy()
        harsh[8:16, 8:16] = 255
        soft = smooth.copy()
        soft[8:16, 8:16] = 110
        first = backend.judge(soft, harsh, "pick")
        second = backend.judge(harsh, soft, "pick")
        assert {first.choice, second.choice} == {"A", "B"}
        winner_first = soft if first.choice == "A" else harsh
        winner_second = harsh if second.choice == "A" else soft
        np.testing.assert_array_equal(winner_first, winner_second)

    def test_dim_mismatch_rejected(self):
        backend = ReferenceJudgeBackend()
        with pytest.raises(DimensionMismatchError):
            backend.judge(_image(9, 16, 16), _image(9, 20, 20), "pick")


class TestConformance:
    def test_reference_backends_pass_all_checks(self, ref_backends):
        passed = conformance.run_conformance(
            lambda path, payload: conformance.post_via_backends(path, payload, ref_backends)
        )
        assert passed == [
            "segment-roundtrip",
            "embed-unit-norm",
            "compose-dimensions",
            "judge-verdict",
            "error-envelope",
        ]

    def test_unknown_path_404(self, ref_backends):
        status, body = conformance.post_via_backends("/v1/nothing", {}, ref_backends)
        assert status == 404 and "error" in body

    def test_bad_payload_maps_to_400(self, ref_backends):
        status, body = conformance.post_via_backends("/v1/segment", {"bbox": [0, 0, 1, 1]}, ref_backends)
        assert status == 400 and isinstance(body.get("error"), str)

    def test_factory_wires_dim(self):
        backends = reference_backends(embed_dim=48)
        assert backends.embedding.dim == 48
        bundle = backends.embedding.embed(_image(10, 8, 8))
        assert bundle.global_vec.shape == (48,)
