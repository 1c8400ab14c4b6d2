"""Scene synthesis, vocabulary, split policies, and the archive loader."""

import struct

import numpy as np
import pytest

from capdraw import dataset as D
from capdraw.rng import RngStream


def write_idx_pair(tmp_path, images, labels, image_magic=2051, label_magic=2049,
                   truncate_images=0):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "images-idx3-ubyte"
    lab_path = tmp_path / "labels-idx1-ubyte"
    blob = struct.pack(">iiii", image_magic, n, rows, cols) + images.tobytes()
    if truncate_images:
        blob = blob[:-truncate_images]
    img_path.write_bytes(blob)
    lab_path.write_bytes(struct.pack(">ii", label_magic, len(labels)) + labels.tobytes())
    return img_path, lab_path


class TestDigitArchive:
    def test_round_trip_with_scaling(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (30, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, 30, dtype=np.uint8)
        img_path, lab_path = write_idx_pair(tmp_path, images, labels)
        loaded, got_labels = D.load_digit_archive(img_path, lab_path)
        assert loaded.shape == (30, 28, 28)
        np.testing.assert_array_equal(got_labels, labels)
        np.testing.assert_allclose(loaded, images / 255.0, atol=1e-15)
        assert loaded.max() <= 1.0 and loaded.min() >= 0.0

    def test_byte_255_maps_to_one(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        img_path, lab_path = write_idx_pair(tmp_path, images, [3])
        loaded, _ = D.load_digit_archive(img_path, lab_path)
        np.testing.assert_array_equal(loaded, np.ones((1, 2, 2)))

    def test_first_image_checksum_stable(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, (5, 4, 4), dtype=np.uint8)
        img_path, lab_path = write_idx_pair(tmp_path, images, [0, 1, 2, 3, 4])
        first = D.load_digit_archive(img_path, lab_path)[0][0]
        again = D.load_digit_archive(img_path, lab_path)[0][0]
        np.testing.assert_array_equal(first, again)
        np.testing.assert_array_equal(first, images[0] / 255.0)

    def test_bad_magic_rejected_with_offset(self, tmp_path):
        img_path, lab_path = write_idx_pair(tmp_path, np.zeros((1, 2, 2)), [1], image_magic=1234)
        with pytest.raises(ValueError, match="magic 1234 at byte 0"):
            D.load_digit_archive(img_path, lab_path)

    def test_truncated_payload_rejected_with_offset(self, tmp_path):
        img_path, lab_path = write_idx_pair(tmp_path, np.zeros((2, 3, 3)), [1, 2],
                                            truncate_images=4)
        with pytest.raises(ValueError, match="at byte 16"):
            D.load_digit_archive(img_path, lab_path)

    def test_count_mismatch_rejected(self, tmp_path):
        img_path, lab_path = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [1, 2, 3])
        with pytest.raises(ValueError, match="mismatch"):
            D.load_digit_archive(img_path, lab_path)


class TestVocabulary:
    def test_size_is_computed_and_documented(self):
        vocab = D.build_vocab()
        # template family yields 21 distinct lowercase words
        assert len(vocab) == 21
        assert vocab.words == sorted(set(vocab.words))
        assert all(w == w.lower() for w in vocab.words)

    def test_rebuild_gives_identical_index(self):
        a, b = D.build_vocab(), D.build_vocab()
        assert a.words == b.words
        assert a.index == b.index

    def test_round_trip(self):
        vocab = D.build_vocab()
        for tokens in D.caption_templates():
            assert vocab.decode(vocab.encode(tokens)) == tokens

    def test_unknown_token_named_in_error(self):
        vocab = D.build_vocab()
        with pytest.raises(ValueError, match="'surfboard'"):
            vocab.encode(["the", "surfboard"])

    def test_single_token_caption(self):
        vocab = D.build_vocab()
        assert vocab.encode(["seven"]) == [vocab.index["seven"]]

    def test_tokenize_lowercases_and_splits(self):
        assert D.tokenize("The Digit Three  IS here") == ["the", "digit", "three", "is", "here"]


def default_sampler(policy=None, held_out_mode=False, canvas=60, digit=28, layouts=None):
    spec_kwargs = dict(canvas=canvas, digit_box=digit)
    if layouts:
        spec_kwargs["layouts"] = layouts
    return D.SceneSampler(
        pool=D.DigitPool.builtin(digit),
        vocab=D.build_vocab(),
        spec=D.SceneSpec(**spec_kwargs),
        policy=policy,
        held_out_mode=held_out_mode,
    )


class TestSynthesis:
    def test_emitted_images_are_canvas_sized_and_in_range(self):
        sampler = default_sampler()
        rng = RngStream(0)
        for _ in range(100):
            s = sampler.sample(rng)
            assert s.image.shape == (60, 60)
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert len(s.caption.tokens) == len(s.caption.codes) >= 1

    def test_bottom_left_digit_lands_in_lower_left_quadrant(self):
        sampler = default_sampler(layouts=(D.ONE_DIGIT,))
        rng = RngStream(1)
        seen = 0
        for _ in range(200):
            s = sampler.sample(rng)
            if s.placement.positions[0] != "bottom left":
                continue
            seen += 1
            rows, cols = np.nonzero(s.image)
            assert rows.min() >= 30 and cols.max() <= 29
        assert seen > 10

    def test_two_digit_bounding_boxes_disjoint(self):
        sampler = default_sampler(layouts=(D.TWO_HORIZONTAL, D.TWO_VERTICAL))
        rng = RngStream(2)
        for _ in range(300):
            s = sampler.sample(rng)
            (r1, c1), (r2, c2) = s.placement.offsets
            d = 28
            rows_disjoint = r1 + d <= r2 or r2 + d <= r1
            cols_disjoint = c1 + d <= c2 or c2 + d <= c1
            assert rows_disjoint or cols_disjoint
            if s.placement.kind == D.TWO_VERTICAL:
                assert r1 + d <= r2  # first digit strictly above
            else:
                assert c1 + d <= c2  # first digit strictly left

    def test_caption_matches_placement_semantics(self):
        sampler = default_sampler()
        rng = RngStream(3)
        for _ in range(200):
            s = sampler.sample(rng)
            text = " ".join(s.caption.tokens)
            words = [D.DIGIT_WORDS[d] for d in s.placement.digits]
            if s.placement.kind == D.ONE_DIGIT:
                assert f"the digit {words[0]} is at the {s.placement.positions[0]}" in text
                assert text.endswith("of the image")
            elif s.placement.kind == D.TWO_VERTICAL:
                assert (f"the digit {words[0]} is at the top of the digit {words[1]}" == text
                        or f"the digit {words[1]} is at the bottom of the digit {words[0]}" == text)
            else:
                assert (f"the digit {words[0]} is on the left of the digit {words[1]}" == text
                        or f"the digit {words[1]} is on the right of the digit {words[0]}" == text)

    def test_rerender_from_placement_is_bit_identical(self):
        sampler = default_sampler()
        rng = RngStream(4)
        for _ in range(100):
            s = sampler.sample(rng)
            again = D.render(sampler.pool, s.placement, sampler.spec)
            np.testing.assert_array_equal(s.image, again)

    def test_codes_cover_the_whole_vocabulary(self):
        sampler = default_sampler()
        rng = RngStream(5)
        seen = set()
        for _ in range(10**4):
            s = sampler.sample(rng)
            seen.update(s.caption.codes)
        assert seen == set(range(len(sampler.vocab)))

    def test_trainer_source_shape(self):
        sampler = default_sampler()
        pairs = sampler.source(RngStream(6), 5)
        assert len(pairs) == 5
        for image, codes in pairs:
            assert image.shape == (60, 60)
            assert all(isinstance(c, int) for c in codes)


class TestSplitPolicy:
    def test_hidden_configuration_never_emitted_in_training(self):
        policy = D.SplitPolicy.hiding([(3, "top left"), (7, "bottom"), (1, "right")])
        sampler = default_sampler(policy=policy)
        rng = RngStream(7)
        for _ in range(10**4):
            s = sampler.sample(rng)
            for cfg in s.placement.configurations():
                assert cfg not in policy.held_out

    def test_held_out_generator_emits_only_hidden(self):
        policy = D.SplitPolicy.hiding([(3, "top left"), (7, "bottom")])
        sampler = default_sampler(policy=policy, held_out_mode=True)
        rng = RngStream(8)
        for _ in range(500):
            s = sampler.sample(rng)
            assert any(cfg in policy.held_out for cfg in s.placement.configurations())

    def test_all_excluded_policy_rejected(self):
        pairs = [(d, pos) for d in range(10)
                 for pos in D.CORNERS + D.VERTICAL_ROLES + D.HORIZONTAL_ROLES]
        sampler = default_sampler(policy=D.SplitPolicy.hiding(pairs))
        with pytest.raises(ValueError, match="rejects every"):
            sampler.sample(RngStream(9))

    def test_held_out_mode_needs_policy(self):
        with pytest.raises(ValueError, match="held-out"):
            default_sampler(policy=D.SplitPolicy.none(), held_out_mode=True)

    def test_bad_configuration_rejected(self):
        with pytest.raises(ValueError):
            D.SplitPolicy.hiding([(3, "center")])
        with pytest.raises(ValueError):
            D.SplitPolicy.hiding([(11, "top")])


class TestBuiltinPool:
    def test_ten_distinct_glyphs(self):
        pool = D.DigitPool.builtin(28)
        flat = [pool.arrays[d][0].tobytes() for d in range(10)]
        assert len(set(flat)) == 10
        for d in range(10):
            crop = pool.arrays[d][0]
            assert crop.shape == (28, 28)
            assert set(np.unique(crop)) <= {0.0, 1.0}
            assert crop.sum() > 0

    def test_small_sizes_supported(self):
        for size in (7, 8, 12):
            pool = D.DigitPool.builtin(size)
            assert pool.arrays[0][0].shape == (size, size)

    def test_from_arrays_partitions_by_label(self):
        rng = np.random.default_rng(10)
        images = rng.uniform(0, 1, (40, 9, 9))
        labels = np.tile(np.arange(10), 4)
        pool = D.DigitPool.from_arrays(images, labels)
        assert all(len(pool.arrays[d]) == 4 for d in range(10))

    def test_missing_class_rejected(self):
        images = np.zeros((3, 9, 9))
        with pytest.raises(ValueError, match="digit"):
            D.DigitPool.from_arrays(images, [0, 1, 2])


class TestDumpScenes:
    def test_dump_writes_pgms_and_sidecar(self, tmp_path):
        sampler = default_sampler()
        rng = RngStream(11)
        samples = [sampler.sample(rng) for _ in range(3)]
        D.dump_scenes(tmp_path / "scenes", samples)
        files = sorted(p.name for p in (tmp_path / "scenes").iterdir())
        assert "captions.tsv" in files
        assert sum(name.endswith(".pgm") for name in files) == 3
        lines = (tmp_path / "scenes" / "captions.tsv").read_text().strip().split("\n")
        assert len(lines) == 3
        for line, sample in zip(lines, samples):
            fields = line.split("\t")
            assert fields[1] == " ".join(sample.caption.tokens)
            assert fields[2] == sample.placement.kind
