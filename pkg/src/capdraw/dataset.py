"""Synthetic captioned-digit scenes, vocabulary, and raw digit archives.

A scene is a square canvas holding either one digit in a corner or two
digits side by side (horizontally or vertically, never overlapping), with
a template caption describing identities and positions:

    "the digit seven is at the bottom left of the image"
    "the digit three is at the top of the digit one"

A split policy hides chosen (digit, position) configurations from the
training generator; the held-out generator emits only those, which is how
generalization to unseen configurations gets measured.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pgm import write_pgm
from .rng import RngStream

DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
CORNERS = ("top left", "top right", "bottom left", "bottom right")
VERTICAL_ROLES = ("top", "bottom")
HORIZONTAL_ROLES = ("left", "right")

ONE_DIGIT = "one-digit-corner"
TWO_HORIZONTAL = "two-digit-horizontal"
TWO_VERTICAL = "two-digit-vertical"

# 5x7 pixel-font glyphs; '#' marks ink
_GLYPHS = {
    0: (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    1: ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    2: (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    3: (" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "),
    4: ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    5: ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    6: (" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "),
    7: ("#####", "    #", "   # ", "  #  ", "  #  ", "  #  ", "  #  "),
    8: (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    9: (" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "),
}


@dataclass
class Caption:
    tokens: list
    codes: list


@dataclass
class Placement:
    kind: str
    digits: tuple       # digit identity per pasted crop
    positions: tuple    # position label per crop: a corner, or top/bottom/left/right
    exemplars: tuple    # pool exemplar index per crop
    offsets: tuple      # (row, col) paste offset per crop

    def configurations(self):
        return tuple(zip(self.digits, self.positions))


@dataclass
class SceneSample:
    image: np.ndarray
    caption: Caption
    placement: Placement


class Vocabulary:
    def __init__(self, words):
        self.words = sorted(set(words))
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, tokens):
        codes = []
        for tok in tokens:
            if tok not in self.index:
                raise ValueError(f"unknown token {tok!r}")
            codes.append(self.index[tok])
        return codes

    def decode(self, codes):
        return [self.words[c] for c in codes]


def tokenize(text: str):
    """Lowercase and split on whitespace; the whole preprocessing step."""
    return text.lower().split()


def caption_templates():
    """Every realizable caption as a token list."""
    out = []
    for d in DIGIT_WORDS:
        for corner in CORNERS:
            out.append(f"the digit {d} is at the {corner} of the image".split())
        for other in DIGIT_WORDS:
            out.append(f"the digit {d} is at the top of the digit {other}".split())
            out.append(f"the digit {d} is at the bottom of the digit {other}".split())
            out.append(f"the digit {d} is on the left of the digit {other}".split())
            out.append(f"the digit {d} is on the right of the digit {other}".split())
    return out


def build_vocab(templates=None) -> Vocabulary:
    if templates is None:
        templates = caption_templates()
    words = [w for tokens in templates for w in tokens]
    return Vocabulary(words)


@dataclass(frozen=True)
class SplitPolicy:
    """Hidden (digit, position) configurations.

    Positions are corner phrases for single-digit scenes and the relational
    roles top/bottom/left/right for pairs. A sample is excluded as soon as
    any of its configurations is hidden.
    """

    held_out: frozenset

    @classmethod
    def none(cls):
        return cls(held_out=frozenset())

    @classmethod
    def hiding(cls, pairs):
        valid = set(CORNERS) | set(VERTICAL_ROLES) | set(HORIZONTAL_ROLES)
        for digit, position in pairs:
            if not 0 <= digit <= 9 or position not in valid:
                raise ValueError(f"SplitPolicy: bad configuration ({digit}, {position!r})")
        return cls(held_out=frozenset((int(d), p) for d, p in pairs))

    def excludes(self, placement: Placement) -> bool:
        return any(cfg in self.held_out for cfg in placement.configurations())


class DigitPool:
    """Exemplar crops per digit class, all square and of one size."""

    def __init__(self, arrays, digit_size):
        self.arrays = arrays
        self.digit_size = digit_size
        for digit in range(10):
            if not arrays.get(digit):
                raise ValueError(f"DigitPool: no exemplars for digit {digit}")

    @classmethod
    def builtin(cls, digit_size=28):
        """Procedural pixel-font glyphs, one exemplar per digit."""
        if digit_size < 7:
            raise ValueError("DigitPool.builtin: digit size must be >= 7")
        arrays = {}
        scale = digit_size // 7
        for digit, rows in _GLYPHS.items():
            glyph = np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])
            big = np.repeat(np.repeat(glyph, scale, axis=0), scale, axis=1)
            crop = np.zeros((digit_size, digit_size))
            r0 = (digit_size - big.shape[0]) // 2
            c0 = (digit_size - big.shape[1]) // 2
            crop[r0:r0 + big.shape[0], c0:c0 + big.shape[1]] = big
            arrays[digit] = [crop]
        return cls(arrays, digit_size)

    @classmethod
    def from_arrays(cls, images, labels):
        images = np.asarray(images, dtype=np.float64)
        arrays = {d: [] for d in range(10)}
        for img, lab in zip(images, labels):
            arrays[int(lab)].append(img)
        return cls(arrays, images.shape[1])

    def pick(self, digit: int, rng: RngStream):
        pool = self.arrays[digit]
        idx = rng.integer(len(pool))
        return idx, pool[idx]


@dataclass
class SceneSpec:
    """Geometry of the synthesized scenes."""

    canvas: int = 60
    digit_box: int = 28
    margin: int = 2
    two_digit_prob: float = 0.5
    layouts: tuple = (ONE_DIGIT, TWO_HORIZONTAL, TWO_VERTICAL)

    def validate(self):
        if self.digit_box + 2 * self.margin > self.canvas:
            raise ValueError("SceneSpec: digit box plus margins exceeds the canvas")
        has_pair = TWO_HORIZONTAL in self.layouts or TWO_VERTICAL in self.layouts
        if has_pair and self.digit_box + self.margin > self.canvas // 2:
            raise ValueError("SceneSpec: two-digit layouts need digit box within a half canvas")
        if not self.layouts:
            raise ValueError("SceneSpec: no layouts enabled")
        if not 0.0 <= self.two_digit_prob <= 1.0:
            raise ValueError("SceneSpec: two_digit_prob must be in [0, 1]")
        return self


def render(pool: DigitPool, placement: Placement, spec: SceneSpec) -> np.ndarray:
    """Deterministic image reconstruction from a placement record."""
    image = np.zeros((spec.canvas, spec.canvas))
    d = spec.digit_box
    for digit, exemplar, (row, col) in zip(placement.digits, placement.exemplars, placement.offsets):
        crop = pool.arrays[digit][exemplar]
        region = image[row:row + d, col:col + d]
        np.maximum(region, crop, out=region)
    return image


def _caption_tokens(placement: Placement, rng: RngStream):
    a, b = placement.digits[0], placement.digits[-1]
    wa, wb = DIGIT_WORDS[a], DIGIT_WORDS[b]
    if placement.kind == ONE_DIGIT:
        return f"the digit {wa} is at the {placement.positions[0]} of the image".split()
    if placement.kind == TWO_VERTICAL:
        # either endpoint of the pair may anchor the sentence
        if rng.integer(2) == 0:
            return f"the digit {wa} is at the top of the digit {wb}".split()
        return f"the digit {wb} is at the bottom of the digit {wa}".split()
    if rng.integer(2) == 0:
        return f"the digit {wa} is on the left of the digit {wb}".split()
    return f"the digit {wb} is on the right of the digit {wa}".split()


def _corner_offset(corner: str, spec: SceneSpec):
    s, d, m = spec.canvas, spec.digit_box, spec.margin
    row = m if corner.startswith("top") else s - d - m
    col = m if corner.endswith("left") else s - d - m
    return row, col


def _draw_placement(pool: DigitPool, rng: RngStream, spec: SceneSpec) -> Placement:
    pair_layouts = [k for k in spec.layouts if k != ONE_DIGIT]
    if ONE_DIGIT in spec.layouts and pair_layouts:
        two = rng.uniform() < spec.two_digit_prob
        kind = rng.choice(pair_layouts) if two else ONE_DIGIT
    elif pair_layouts:
        kind = rng.choice(pair_layouts)
    else:
        kind = ONE_DIGIT

    s, d, m = spec.canvas, spec.digit_box, spec.margin
    if kind == ONE_DIGIT:
        digit = rng.integer(10)
        corner = rng.choice(CORNERS)
        exemplar, _ = pool.pick(digit, rng)
        return Placement(
            kind=kind, digits=(digit,), positions=(corner,),
            exemplars=(exemplar,), offsets=(_corner_offset(corner, spec),),
        )

    first, second = rng.integer(10), rng.integer(10)
    ex1, _ = pool.pick(first, rng)
    ex2, _ = pool.pick(second, rng)
    half = s // 2
    lo_extent = half - d - m + 1      # jitter room inside the near half
    hi_extent = s - d - m - half + 1
    near = m + rng.integer(lo_extent)
    far = half + rng.integer(hi_extent)
    if kind == TWO_VERTICAL:
        cols = (m + rng.integer(s - d - 2 * m + 1), m + rng.integer(s - d - 2 * m + 1))
        offsets = ((near, cols[0]), (far, cols[1]))
        roles = VERTICAL_ROLES
    else:
        rows = (m + rng.integer(s - d - 2 * m + 1), m + rng.integer(s - d - 2 * m + 1))
        offsets = ((rows[0], near), (rows[1], far))
        roles = HORIZONTAL_ROLES
    return Placement(
        kind=kind, digits=(first, second), positions=roles,
        exemplars=(ex1, ex2), offsets=offsets,
    )


class SceneSampler:
    """Draws scenes, honoring a split policy.

    In training mode every emitted sample avoids all hidden configurations;
    in held-out mode every emitted sample contains at least one.
    """

    MAX_ATTEMPTS = 10_000

    def __init__(self, pool: DigitPool, vocab: Vocabulary, spec: SceneSpec,
                 policy: Optional[SplitPolicy] = None, held_out_mode: bool = False):
        spec.validate()
        if pool.digit_size != spec.digit_box:
            raise ValueError(
                f"SceneSampler: pool crops are {pool.digit_size}, spec wants {spec.digit_box}"
            )
        self.pool = pool
        self.vocab = vocab
        self.spec = spec
        self.policy = policy or SplitPolicy.none()
        self.held_out_mode = held_out_mode
        if held_out_mode and not self.policy.held_out:
            raise ValueError("SceneSampler: held-out mode needs a non-empty policy")

    def _admissible(self, placement: Placement) -> bool:
        excluded = self.policy.excludes(placement)
        return excluded if self.held_out_mode else not excluded

    def sample(self, rng: RngStream) -> SceneSample:
        for _ in range(self.MAX_ATTEMPTS):
            placement = _draw_placement(self.pool, rng, self.spec)
            if not self._admissible(placement):
                continue
            tokens = _caption_tokens(placement, rng)
            caption = Caption(tokens=tokens, codes=self.vocab.encode(tokens))
            return SceneSample(
                image=render(self.pool, placement, self.spec),
                caption=caption,
                placement=placement,
            )
        raise ValueError("SceneSampler: split policy rejects every drawable configuration")

    def source(self, rng: RngStream, count: int):
        """(image, codes) pairs in trainer form."""
        out = []
        for _ in range(count):
            s = self.sample(rng)
            out.append((s.image, s.caption.codes))
        return out


# ---------------------------------------------------------------------------
# raw digit archives (big-endian IDX)

_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


def _read_exact(fh, count, offset, what):
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"truncated archive: wanted {count} bytes for {what} at byte {offset}")
    return data


def load_digit_archive(images_path, labels_path):
    """Images scaled to [0, 1] plus integer labels, cross-checked counts."""
    with open(images_path, "rb") as fh:
        magic, n_images = struct.unpack(">ii", _read_exact(fh, 8, 0, "image header"))
        if magic != _IMAGE_MAGIC:
            raise ValueError(f"bad image magic {magic} at byte 0 (expected {_IMAGE_MAGIC})")
        rows, cols = struct.unpack(">ii", _read_exact(fh, 8, 8, "image dims"))
        raw = _read_exact(fh, n_images * rows * cols, 16, "image payload")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n_images, rows, cols)
    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">ii", _read_exact(fh, 8, 0, "label header"))
        if magic != _LABEL_MAGIC:
            raise ValueError(f"bad label magic {magic} at byte 0 (expected {_LABEL_MAGIC})")
        labels = np.frombuffer(_read_exact(fh, n_labels, 8, "label payload"), dtype=np.uint8)
    if n_images != n_labels:
        raise ValueError(f"count mismatch: {n_images} images vs {n_labels} labels")
    if labels.size and labels.max() > 9:
        raise ValueError(f"label {labels.max()} outside 0..9")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def dump_scenes(directory, samples, prefix="scene"):
    """PGM per scene plus one sidecar line per record: filename, caption,
    and the full placement (kind, digits, positions, exemplars, offsets)."""
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"{prefix}_{i:05d}.pgm"
        write_pgm(directory / name, s.image)
        p = s.placement
        offs = ";".join(f"{r},{c}" for r, c in p.offsets)
        lines.append("\t".join([
            name,
            " ".join(s.caption.tokens),
            p.kind,
            ",".join(str(d) for d in p.digits),
            ",".join(p.positions),
            ",".join(str(e) for e in p.exemplars),
            offs,
        ]))
    (directory / "captions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
