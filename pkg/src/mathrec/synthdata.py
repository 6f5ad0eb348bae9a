"""Synthetic formula corpus: markup sampling, rendering, loading, batching.

Images are single-channel float arrays in [0, 1] with ink bright (1) on a
black (0) background, so batch padding looks like background. Glyphs come
from a built-in stroke set and receive per-glyph random affine jitter to
mimic handwriting variance; layout handles superscripts (above right),
subscripts (below right), stacked fractions with a bar, and radicals with
a vinculum. The fixed-height canvas makes glyph size depend on formula
structure, which is exactly the scale variation a multi-kernel counting
head has to absorb.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .vocab import SymbolVocabulary, counting_ground_truth, tokenize

# --------------------------------------------------------------------------
# glyph stroke set
# --------------------------------------------------------------------------

def _ellipse(cx, cy, rx, ry, n=14):
    ts = np.linspace(0.0, 2 * np.pi, n + 1)
    return [(cx + rx * np.sin(t), cy - ry * np.cos(t)) for t in ts]


# token -> (strokes, aspect). Strokes are polylines in a unit box,
# y increasing downwards; the layout puts the box bottom on the baseline.
GLYPHS = {
    "0": ([_ellipse(0.5, 0.5, 0.34, 0.48)], 0.58),
    "1": ([[(0.25, 0.25), (0.5, 0.05), (0.5, 1.0)]], 0.40),
    "2": ([[(0.12, 0.25), (0.3, 0.05), (0.65, 0.05), (0.85, 0.25), (0.8, 0.45),
            (0.12, 1.0), (0.88, 1.0)]], 0.58),
    "3": ([[(0.15, 0.12), (0.45, 0.0), (0.8, 0.12), (0.8, 0.4), (0.5, 0.5),
            (0.8, 0.6), (0.8, 0.88), (0.45, 1.0), (0.15, 0.88)]], 0.58),
    "4": ([[(0.65, 0.0), (0.15, 0.65), (0.9, 0.65)], [(0.65, 0.0), (0.65, 1.0)]], 0.58),
    "5": ([[(0.85, 0.0), (0.2, 0.0), (0.17, 0.45), (0.55, 0.38), (0.85, 0.55),
            (0.85, 0.8), (0.55, 1.0), (0.15, 0.9)]], 0.58),
    "6": ([[(0.7, 0.05), (0.4, 0.15), (0.2, 0.5), (0.2, 0.8), (0.45, 1.0),
            (0.7, 0.9), (0.75, 0.65), (0.5, 0.5), (0.25, 0.6)]], 0.58),
    "7": ([[(0.12, 0.0), (0.88, 0.0), (0.45, 1.0)]], 0.58),
    "8": ([_ellipse(0.5, 0.27, 0.3, 0.26), _ellipse(0.5, 0.75, 0.36, 0.25)], 0.58),
    "9": ([[(0.75, 0.5), (0.5, 0.58), (0.27, 0.42), (0.3, 0.12), (0.55, 0.0),
            (0.78, 0.1), (0.78, 0.5), (0.6, 1.0)]], 0.58),
    "a": ([_ellipse(0.42, 0.62, 0.3, 0.34), [(0.74, 0.3), (0.74, 1.0)]], 0.55),
    "b": ([[(0.2, 0.0), (0.2, 1.0)], _ellipse(0.5, 0.66, 0.28, 0.3)], 0.55),
    "c": ([[(0.8, 0.35), (0.55, 0.25), (0.3, 0.35), (0.2, 0.6), (0.3, 0.87),
            (0.55, 0.97), (0.8, 0.85)]], 0.52),
    "d": ([[(0.8, 0.0), (0.8, 1.0)], _ellipse(0.48, 0.66, 0.28, 0.3)], 0.55),
    "n": ([[(0.2, 0.3), (0.2, 1.0)],
           [(0.2, 0.5), (0.4, 0.3), (0.65, 0.35), (0.7, 0.55), (0.7, 1.0)]], 0.55),
    "x": ([[(0.15, 0.25), (0.85, 1.0)], [(0.85, 0.25), (0.15, 1.0)]], 0.55),
    "y": ([[(0.15, 0.25), (0.5, 0.7)], [(0.85, 0.25), (0.35, 1.0)]], 0.55),
    "z": ([[(0.15, 0.25), (0.85, 0.25), (0.15, 1.0), (0.85, 1.0)]], 0.55),
    "+": ([[(0.5, 0.15), (0.5, 0.85)], [(0.12, 0.5), (0.88, 0.5)]], 0.62),
    "-": ([[(0.1, 0.5), (0.9, 0.5)]], 0.50),
    "=": ([[(0.1, 0.35), (0.9, 0.35)], [(0.1, 0.65), (0.9, 0.65)]], 0.62),
    "(": ([[(0.7, 0.0), (0.45, 0.25), (0.35, 0.5), (0.45, 0.75), (0.7, 1.0)]], 0.32),
    ")": ([[(0.3, 0.0), (0.55, 0.25), (0.65, 0.5), (0.55, 0.75), (0.3, 1.0)]], 0.32),
    "\\sum": ([[(0.85, 0.08), (0.15, 0.08), (0.5, 0.5), (0.15, 0.92), (0.85, 0.92)]], 0.75),
    "\\int": ([[(0.75, 0.08), (0.6, 0.0), (0.5, 0.1), (0.5, 0.9), (0.4, 1.0),
                (0.25, 0.92)]], 0.45),
    # the radical mark only; the vinculum over the argument is a layout rule
    "\\sqrt": ([[(0.08, 0.55), (0.3, 0.5), (0.6, 1.0), (0.95, 0.0)]], 0.50),
}

DEFAULT_SYMBOLS = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
                   "a", "b", "c", "d", "n", "x", "y", "z",
                   "+", "-", "=", "(", ")", "\\sum", "\\int"]

STRUCTURAL = ["^", "_", "{", "}"]

SUP_SCALE = 0.65
SUB_SCALE = 0.65
FRAC_SCALE = 0.75
ATOM_GAP = 0.22      # horizontal gap between atoms, in glyph-height units
MATH_AXIS = 0.32     # fraction bar height above the baseline
FRAC_GAP = 0.12      # clearance between the bar and numerator/denominator


class MarkupError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class SynthGrammarConfig:
    symbols: list = field(default_factory=lambda: list(DEFAULT_SYMBOLS))
    max_len: int = 24          # markup token budget, structure tokens included
    max_depth: int = 1         # nesting budget for ^ _ \frac \sqrt
    max_atoms: int = 6         # atoms per (sub)sequence
    p_sup: float = 0.12
    p_sub: float = 0.08
    p_frac: float = 0.10
    p_sqrt: float = 0.06
    jitter_scale: float = 0.12
    jitter_rotate: float = 7.0     # degrees
    jitter_baseline: float = 0.05  # fraction of glyph height
    canvas_height: int = 64

    def validate(self):
        if not self.symbols:
            raise ConfigError("symbol set is empty")
        unknown = [s for s in self.symbols if s not in GLYPHS]
        if unknown:
            raise ConfigError(f"no glyph strokes for symbols: {unknown}")
        bad = [s for s in self.symbols if s in ("sos", "eos", *STRUCTURAL)]
        if bad:
            raise ConfigError(f"structural/invisible tokens cannot be glyph symbols: {bad}")
        if self.canvas_height <= 0:
            raise ConfigError("canvas height must be positive")
        if self.max_depth < 0:
            raise ConfigError("max depth must be >= 0")
        if self.max_len < 1 or self.max_atoms < 1:
            raise ConfigError("max_len and max_atoms must be >= 1")
        return self


def vocab_for(config: SynthGrammarConfig) -> SymbolVocabulary:
    """Vocabulary covering the grammar: sos/eos, structure, then symbols."""
    tokens = ["sos", "eos", *STRUCTURAL, "\\frac", "\\sqrt"]
    tokens += [s for s in config.symbols if s not in tokens]
    return SymbolVocabulary(tokens)


# --------------------------------------------------------------------------
# markup AST and layout
# --------------------------------------------------------------------------

@dataclass
class _Symbol:
    token: str
    sup: list | None = None
    sub: list | None = None


@dataclass
class _Frac:
    num: list
    den: list
    sup: list | None = None
    sub: list | None = None


@dataclass
class _Sqrt:
    arg: list
    sup: list | None = None
    sub: list | None = None


def parse_markup(markup: str) -> list:
    """Parse whitespace-tokenized markup into a layout tree.

    Accepts the generator's normal form: every ^ _ \\frac \\sqrt argument
    is a braced group.
    """
    tokens = markup.split()
    pos = 0

    def need(tok):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            raise MarkupError(f"expected {tok!r} at token {pos} of {markup!r}")
        pos += 1

    def group():
        need("{")
        seq = sequence(stop="}")
        need("}")
        return seq

    def atom():
        nonlocal pos
        tok = tokens[pos]
        if tok == "\\frac":
            pos += 1
            node = _Frac(num=group(), den=group())
        elif tok == "\\sqrt":
            pos += 1
            node = _Sqrt(arg=group())
        elif tok in GLYPHS:
            pos += 1
            node = _Symbol(tok)
        else:
            raise MarkupError(f"cannot lay out token {tok!r} at position {pos}")
        while pos < len(tokens) and tokens[pos] in ("^", "_"):
            script = tokens[pos]
            pos += 1
            if script == "^":
                if node.sup is not None:
                    raise MarkupError("duplicate superscript")
                node.sup = group()
            else:
                if node.sub is not None:
                    raise MarkupError("duplicate subscript")
                node.sub = group()
        return node

    def sequence(stop=None):
        nodes = []
        while pos < len(tokens) and tokens[pos] != stop:
            nodes.append(atom())
        return nodes

    tree = sequence()
    if pos != len(tokens):
        raise MarkupError(f"unbalanced braces in {markup!r}")
    return tree


@dataclass
class _Box:
    width: float
    ascent: float   # extent above the baseline
    descent: float  # extent below the baseline


@dataclass
class GlyphBox:
    """One placed glyph with its pixel-space bounding box."""
    token: str
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass
class RuleBox:
    """A structural line: fraction bar or radical vinculum."""
    kind: str
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass
class RenderResult:
    image: np.ndarray
    glyphs: list
    rules: list


def _measure_seq(nodes, scale):
    if not nodes:
        return _Box(0.3 * scale, 0.5 * scale, 0.0)
    width = 0.0
    ascent = 0.0
    descent = 0.0
    for i, node in enumerate(nodes):
        box = _measure(node, scale)
        if i:
            width += ATOM_GAP * scale
        width += box.width
        ascent = max(ascent, box.ascent)
        descent = max(descent, box.descent)
    return _Box(width, ascent, descent)


def _script_offsets(node, scale):
    """Boxes and baseline shifts (relative to the base baseline, y down)
    for an atom's superscript and subscript blocks."""
    sup_box = _measure_seq(node.sup, scale * SUP_SCALE) if node.sup is not None else None
    sub_box = _measure_seq(node.sub, scale * SUB_SCALE) if node.sub is not None else None
    sup_shift = -(0.5 * scale + (sup_box.descent if sup_box else 0.0))
    sub_shift = 0.28 * scale + (max(0.0, sub_box.ascent - 0.55 * scale) if sub_box else 0.0)
    return sup_box, sub_box, sup_shift, sub_shift


def _measure(node, scale):
    box = _measure_base(node, scale)
    width, ascent, descent = box.width, box.ascent, box.descent
    sup_box, sub_box, sup_shift, sub_shift = _script_offsets(node, scale)
    script_w = 0.0
    if sup_box is not None:
        ascent = max(ascent, -sup_shift + sup_box.ascent)
        script_w = max(script_w, sup_box.width)
    if sub_box is not None:
        descent = max(descent, sub_shift + sub_box.descent)
        script_w = max(script_w, sub_box.width)
    if script_w:
        width += 0.06 * scale + script_w
    return _Box(width, ascent, descent)


def _measure_base(node, scale):
    if isinstance(node, _Symbol):
        aspect = GLYPHS[node.token][1]
        return _Box(aspect * scale, scale, 0.0)
    if isinstance(node, _Frac):
        num = _measure_seq(node.num, scale * FRAC_SCALE)
        den = _measure_seq(node.den, scale * FRAC_SCALE)
        width = max(num.width, den.width) + 0.3 * scale
        axis = MATH_AXIS * scale
        gap = FRAC_GAP * scale
        ascent = axis + gap + num.ascent + num.descent
        descent = gap + den.ascent + den.descent - axis
        return _Box(width, ascent, max(descent, 0.0))
    if isinstance(node, _Sqrt):
        arg = _measure_seq(node.arg, scale)
        mark_w = GLYPHS["\\sqrt"][1] * scale
        return _Box(mark_w + arg.width + 0.12 * scale, max(arg.ascent + 0.18 * scale, scale), arg.descent)
    raise TypeError(node)


def _place_seq(nodes, x, baseline, scale, out):
    cursor = x
    for i, node in enumerate(nodes):
        if i:
            cursor += ATOM_GAP * scale
        cursor = _place(node, cursor, baseline, scale, out)
    return cursor


def _place(node, x, baseline, scale, out):
    base_box = _measure_base(node, scale)
    _place_base(node, x, baseline, scale, out)
    _, _, sup_shift, sub_shift = _script_offsets(node, scale)
    script_x = x + base_box.width + 0.06 * scale
    if node.sup is not None:
        _place_seq(node.sup, script_x, baseline + sup_shift, scale * SUP_SCALE, out)
    if node.sub is not None:
        _place_seq(node.sub, script_x, baseline + sub_shift, scale * SUB_SCALE, out)
    return x + _measure(node, scale).width


def _place_base(node, x, baseline, scale, out):
    if isinstance(node, _Symbol):
        aspect = GLYPHS[node.token][1]
        out.append(("glyph", node.token, x, baseline - scale, aspect * scale, scale))
        return
    if isinstance(node, _Frac):
        box = _measure_base(node, scale)
        num = _measure_seq(node.num, scale * FRAC_SCALE)
        den = _measure_seq(node.den, scale * FRAC_SCALE)
        axis = baseline - MATH_AXIS * scale
        gap = FRAC_GAP * scale
        out.append(("rule", "\\frac", x, axis, x + box.width, axis))
        _place_seq(node.num, x + (box.width - num.width) / 2,
                   axis - gap - num.descent, scale * FRAC_SCALE, out)
        _place_seq(node.den, x + (box.width - den.width) / 2,
                   axis + gap + den.ascent, scale * FRAC_SCALE, out)
        return
    if isinstance(node, _Sqrt):
        arg = _measure_seq(node.arg, scale)
        mark_w = GLYPHS["\\sqrt"][1] * scale
        top = baseline - max(arg.ascent + 0.18 * scale, scale)
        out.append(("glyph", "\\sqrt", x, top, mark_w, baseline - top))
        out.append(("rule", "\\sqrt", x + mark_w * 0.95, top, x + mark_w + arg.width + 0.12 * scale, top))
        _place_seq(node.arg, x + mark_w + 0.06 * scale, baseline, scale, out)
        return
    raise TypeError(node)


def render_markup(markup, canvas_height=64, rng=None,
                  jitter_scale=0.0, jitter_rotate=0.0, jitter_baseline=0.0,
                  margin=4):
    """Rasterize markup onto a fixed-height canvas.

    Returns a RenderResult whose glyph boxes are the post-jitter pixel
    bounding boxes, one per visible symbol (the fraction bar is the ink
    of "\\frac").
    """
    tree = parse_markup(markup)
    root = _measure_seq(tree, 1.0)
    placements = []
    _place_seq(tree, 0.0, 0.0, 1.0, placements)

    total_units = root.ascent + root.descent
    px = (canvas_height - 2 * margin) / max(total_units, 1e-6)
    width = int(np.ceil(root.width * px)) + 2 * margin
    width = max(width, 16)
    canvas = np.zeros((canvas_height, width), dtype=np.uint8)

    def to_px_y(y_units):
        return margin + (y_units + root.ascent) * px

    glyphs, rules = [], []
    for rec in placements:
        if rec[0] == "rule":
            _, token, x0, y0, x1, y1 = rec
            p0 = (margin + x0 * px, to_px_y(y0))
            p1 = (margin + x1 * px, to_px_y(y1))
            thickness = max(1, round(px * 0.05))
            cv2.line(canvas, _ipt(p0, canvas), _ipt(p1, canvas), 255, thickness, cv2.LINE_AA)
            box = RuleBox("frac_bar" if token == "\\frac" else "vinculum",
                          min(p0[0], p1[0]), min(p0[1], p1[1]) - thickness / 2,
                          max(p0[0], p1[0]), max(p0[1], p1[1]) + thickness / 2)
            rules.append(box)
            if token == "\\frac":
                glyphs.append(GlyphBox(token, box.x0, box.y0, box.x1, box.y1))
            continue
        _, token, x0, y0, w, h = rec
        gw, gh = w * px, h * px
        gx, gy = margin + x0 * px, to_px_y(y0)
        if rng is not None:
            s = 1.0 + rng.uniform(-jitter_scale, jitter_scale)
            theta = np.deg2rad(rng.uniform(-jitter_rotate, jitter_rotate))
            dy = rng.uniform(-jitter_baseline, jitter_baseline) * gh
        else:
            s, theta, dy = 1.0, 0.0, 0.0
        cx, cy = gx + gw / 2, gy + gh / 2 + dy
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        pts_min = [np.inf, np.inf]
        pts_max = [-np.inf, -np.inf]
        thickness = max(1, round(gh * 0.09))
        for stroke in GLYPHS[token][0]:
            draw_pts = []
            for ux, uy in stroke:
                lx, ly = (ux - 0.5) * gw * s, (uy - 0.5) * gh * s
                px_x = cx + lx * cos_t - ly * sin_t
                px_y = cy + lx * sin_t + ly * cos_t
                px_x = float(np.clip(px_x, 1, canvas.shape[1] - 2))
                px_y = float(np.clip(px_y, 1, canvas.shape[0] - 2))
                draw_pts.append((px_x, px_y))
                pts_min[0] = min(pts_min[0], px_x)
                pts_min[1] = min(pts_min[1], px_y)
                pts_max[0] = max(pts_max[0], px_x)
                pts_max[1] = max(pts_max[1], px_y)
            arr = np.array([_ipt(p, canvas) for p in draw_pts], dtype=np.int32)
            cv2.polylines(canvas, [arr], False, 255, thickness, cv2.LINE_AA)
        half = thickness / 2
        glyphs.append(GlyphBox(token, pts_min[0] - half, pts_min[1] - half,
                               pts_max[0] + half, pts_max[1] + half))

    return RenderResult(canvas.astype(np.float32) / 255.0, glyphs, rules)


def _ipt(p, canvas):
    return (int(round(np.clip(p[0], 0, canvas.shape[1] - 1))),
            int(round(np.clip(p[1], 0, canvas.shape[0] - 1))))


# --------------------------------------------------------------------------
# grammar sampling
# --------------------------------------------------------------------------

def _sample_sequence(rng, config, depth, top=False):
    n = int(rng.integers(2 if top else 1, config.max_atoms + 1))
    tokens = []
    for _ in range(n):
        tokens.extend(_sample_atom(rng, config, depth))
    return tokens

def _sample_atom(rng, config, depth):
    r = float(rng.random())
    if depth > 0 and r < config.p_frac:
        num = _sample_sequence(rng, _shallow(config), depth - 1)
        den = _sample_sequence(rng, _shallow(config), depth - 1)
        return ["\\frac", "{", *num, "}", "{", *den, "}"]
    if depth > 0 and "\\sqrt" in GLYPHS and r < config.p_frac + config.p_sqrt:
        arg = _sample_sequence(rng, _shallow(config), depth - 1)
        return ["\\sqrt", "{", *arg, "}"]
    tok = str(rng.choice(config.symbols))
    out = [tok]
    r2 = float(rng.random())
    if depth > 0 and r2 < config.p_sup:
        sup = _sample_sequence(rng, _shallow(config), depth - 1)
        out += ["^", "{", *sup, "}"]
    elif depth > 0 and r2 < config.p_sup + config.p_sub:
        sub = _sample_sequence(rng, _shallow(config), depth - 1)
        out += ["_", "{", *sub, "}"]
    return out

def _shallow(config):
    # nested groups stay short so the token budget binds rarely
    import copy
    sub = copy.copy(config)
    sub.max_atoms = min(config.max_atoms, 3)
    return sub


def sample_markup(rng, config: SynthGrammarConfig) -> str:
    for _ in range(30):
        tokens = _sample_sequence(rng, config, config.max_depth, top=True)
        if len(tokens) <= config.max_len:
            return " ".join(tokens)
    return str(rng.choice(config.symbols))


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------

@dataclass
class FormulaSample:
    image: np.ndarray   # (H, W) float32 in [0, 1]
    markup: str
    counts: np.ndarray  # length-C float32

    def validate(self, vocab):
        assert self.image.ndim == 2 and min(self.image.shape) > 0
        np.testing.assert_array_equal(
            self.counts, counting_ground_truth(tokenize(self.markup, vocab), vocab)
        )
        return self


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample stream derived from (corpus seed, sample index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def generate_corpus(config: SynthGrammarConfig, n: int, seed: int,
                    vocab: SymbolVocabulary | None = None):
    """Deterministic corpus of rendered formulas with derived counts."""
    config.validate()
    if n <= 0:
        raise ConfigError("corpus size must be positive")
    vocab = vocab or vocab_for(config)
    samples = []
    for i in range(n):
        rng = sample_rng(seed, i)
        markup = sample_markup(rng, config)
        rendered = render_markup(
            markup, canvas_height=config.canvas_height, rng=rng,
            jitter_scale=config.jitter_scale, jitter_rotate=config.jitter_rotate,
            jitter_baseline=config.jitter_baseline,
        )
        counts = counting_ground_truth(tokenize(markup, vocab), vocab)
        samples.append(FormulaSample(rendered.image, markup, counts))
    return samples


def write_corpus(samples, out_dir, vocab, meta=None):
    """PNG images + TSV manifest + vocabulary file + metadata JSON."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        rel = f"images/{i:05d}.png"
        cv2.imwrite(str(out_dir / rel), np.round(s.image * 255).astype(np.uint8))
        lines.append(f"{rel}\t{s.markup}")
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    vocab.to_file(out_dir / "vocab.txt")
    if meta is not None:
        (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out_dir / "manifest.tsv"


def load_dataset(manifest_path, image_root, vocab: SymbolVocabulary):
    """Read a TSV manifest ("<image-path>\\t<tokens>") into samples."""
    manifest_path = Path(manifest_path)
    image_root = Path(image_root)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    samples = []
    for lineno, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rel, markup = line.split("\t", 1)
        except ValueError:
            raise ValueError(f"{manifest_path}:{lineno}: expected '<path>\\t<tokens>'")
        path = image_root / rel
        img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise FileNotFoundError(f"{manifest_path}:{lineno}: image not found: {path}")
        try:
            seq = tokenize(markup, vocab)
        except Exception as exc:
            raise ValueError(f"{manifest_path}:{lineno}: {exc}") from exc
        counts = counting_ground_truth(seq, vocab)
        samples.append(FormulaSample(img.astype(np.float32) / 255.0, markup, counts))
    return samples


def dataset_id(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.markup.encode("utf-8"))
        h.update(np.ascontiguousarray(s.image).tobytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    p_rotate: float = 0.5
    p_affine: float = 0.5
    p_perspective: float = 0.5
    p_erode: float = 0.25
    p_dilate: float = 0.25
    max_rotate: float = 10.0     # degrees
    max_shear: float = 0.1
    max_perspective: float = 0.05  # fraction of extent
    kernel_range: tuple = (2, 3)

    @classmethod
    def identity(cls):
        return cls(p_rotate=0.0, p_affine=0.0, p_perspective=0.0, p_erode=0.0, p_dilate=0.0)


def rotate(image, degrees):
    h, w = image.shape
    m = cv2.getRotationMatrix2D((w / 2, h / 2), degrees, 1.0)
    return cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR, borderValue=0.0)


def shear(image, sx):
    h, w = image.shape
    m = np.array([[1.0, sx, -sx * h / 2], [0.0, 1.0, 0.0]], dtype=np.float64)
    return cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_LINEAR, borderValue=0.0)


def perspective(image, strength, rng):
    h, w = image.shape
    src = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float32)
    jitter = rng.uniform(-strength, strength, size=(4, 2)).astype(np.float32)
    dst = src + jitter * np.array([w, h], dtype=np.float32)
    m = cv2.getPerspectiveTransform(src, dst)
    return cv2.warpPerspective(image, m, (w, h), flags=cv2.INTER_LINEAR, borderValue=0.0)


def erode(image, k):
    return cv2.erode(image, np.ones((k, k), dtype=np.uint8))


def dilate(image, k):
    return cv2.dilate(image, np.ones((k, k), dtype=np.uint8))


def augment(image, seed, config: AugmentConfig | None = None):
    """Randomly parameterized subset of {rotation, affine, perspective,
    erosion, dilation}; deterministic per seed; output stays in [0, 1]."""
    config = config or AugmentConfig()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    out = image
    if rng.random() < config.p_rotate:
        out = rotate(out, float(rng.uniform(-config.max_rotate, config.max_rotate)))
    if rng.random() < config.p_affine:
        out = shear(out, float(rng.uniform(-config.max_shear, config.max_shear)))
    if rng.random() < config.p_perspective:
        out = perspective(out, config.max_perspective, rng)
    if rng.random() < config.p_erode:
        out = erode(out, int(rng.integers(config.kernel_range[0], config.kernel_range[1] + 1)))
    if rng.random() < config.p_dilate:
        out = dilate(out, int(rng.integers(config.kernel_range[0], config.kernel_range[1] + 1)))
    return np.clip(out, 0.0, 1.0).astype(np.float32, copy=False)


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

@dataclass
class Batch:
    images: torch.Tensor          # (B, 1, H, W) float32, H and W multiples of 16
    mask: torch.Tensor            # (B, 1, H, W) float32, 1 over original extents
    targets: torch.Tensor         # (B, L) int64, eos-padded framed sequences
    target_lengths: torch.Tensor  # (B,) true framed lengths
    counts: torch.Tensor          # (B, C) float32


def _round16(v: int) -> int:
    return int(np.ceil(v / 16) * 16)


def pad_batch(samples, vocab: SymbolVocabulary) -> Batch:
    """Zero-pad images to a common multiple-of-16 extent and pad targets."""
    if not samples:
        raise ValueError("pad_batch needs at least one sample")
    h = _round16(max(s.image.shape[0] for s in samples))
    w = _round16(max(s.image.shape[1] for s in samples))
    b = len(samples)
    images = torch.zeros(b, 1, h, w)
    mask = torch.zeros(b, 1, h, w)
    seqs = [tokenize(s.markup, vocab) for s in samples]
    max_len = max(len(s) for s in seqs)
    targets = torch.full((b, max_len), fill_value=1, dtype=torch.int64)  # eos padding
    lengths = torch.zeros(b, dtype=torch.int64)
    counts = torch.zeros(b, len(vocab))
    for i, (sample, seq) in enumerate(zip(samples, seqs)):
        sh, sw = sample.image.shape
        images[i, 0, :sh, :sw] = torch.from_numpy(np.ascontiguousarray(sample.image))
        mask[i, 0, :sh, :sw] = 1.0
        targets[i, : len(seq)] = torch.tensor(seq.ids, dtype=torch.int64)
        lengths[i] = len(seq)
        counts[i] = torch.from_numpy(counting_ground_truth(seq, vocab))
    return Batch(images, mask, targets, lengths, counts)
