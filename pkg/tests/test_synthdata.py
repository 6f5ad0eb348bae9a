import numpy as np
import pytest
import torch

from mathrec.synthdata import (
    AugmentConfig,
    ConfigError,
    FormulaSample,
    SynthGrammarConfig,
    augment,
    generate_corpus,
    load_dataset,
    pad_batch,
    render_markup,
    rotate,
    sample_markup,
    sample_rng,
    vocab_for,
    write_corpus,
)
from mathrec.vocab import counting_ground_truth, tokenize

STRUCTURE_TOKENS = {"^", "_", "{", "}", "\\frac", "\\sqrt"}


@pytest.fixture(scope="module")
def config():
    return SynthGrammarConfig(max_depth=2)


@pytest.fixture(scope="module")
def corpus(config):
    return generate_corpus(config, 12, seed=7)


def test_corpus_is_deterministic(config, corpus):
    again = generate_corpus(config, 12, seed=7)
    for a, b in zip(corpus, again):
        assert a.markup == b.markup
        assert np.array_equal(a.image, b.image)


def test_different_seeds_differ(config, corpus):
    other = generate_corpus(config, 12, seed=8)
    assert any(a.markup != b.markup for a, b in zip(corpus, other))


def test_samples_tokenize_and_counts_match(config, corpus):
    vocab = vocab_for(config)
    for s in corpus:
        s.validate(vocab)


def test_depth_zero_grammar_is_flat():
    flat = generate_corpus(SynthGrammarConfig(max_depth=0), 30, seed=3)
    for s in flat:
        assert not STRUCTURE_TOKENS.intersection(s.markup.split())


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        generate_corpus(SynthGrammarConfig(symbols=[]), 1, seed=0)
    with pytest.raises(ConfigError):
        generate_corpus(SynthGrammarConfig(canvas_height=0), 1, seed=0)
    with pytest.raises(ConfigError):
        generate_corpus(SynthGrammarConfig(), 0, seed=0)
    with pytest.raises(ConfigError):
        SynthGrammarConfig(symbols=["x", "^"]).validate()


def test_every_visible_symbol_leaves_ink(config, corpus):
    vocab = vocab_for(config)
    for s in corpus:
        rendered = render_markup(s.markup, canvas_height=config.canvas_height)
        visible = [t for t in s.markup.split() if t not in ("^", "_", "{", "}")]
        assert len(rendered.glyphs) == len(visible)
        for g in rendered.glyphs:
            x0, y0 = int(np.floor(g.x0)), int(np.floor(g.y0))
            x1, y1 = int(np.ceil(g.x1)) + 1, int(np.ceil(g.y1)) + 1
            patch = rendered.image[max(y0, 0):y1, max(x0, 0):x1]
            assert patch.sum() > 0, f"no ink for {g.token} in {s.markup!r}"


def test_fraction_layout_oracle():
    r = render_markup("1 + \\frac { 2 } { 3 }", canvas_height=64)
    bars = [b for b in r.rules if b.kind == "frac_bar"]
    assert len(bars) == 1
    bar = bars[0]
    two = next(g for g in r.glyphs if g.token == "2")
    three = next(g for g in r.glyphs if g.token == "3")
    assert two.y1 < bar.y0, "numerator must sit strictly above the bar"
    assert three.y0 > bar.y1, "denominator must sit strictly below the bar"
    assert two.x0 > bar.x0 - 1 and two.x1 < bar.x1 + 1


def test_superscript_sits_above_right():
    r = render_markup("x ^ { 2 }", canvas_height=64)
    x = next(g for g in r.glyphs if g.token == "x")
    two = next(g for g in r.glyphs if g.token == "2")
    assert two.x0 > x.x0
    assert two.y0 < x.y0


def test_subscript_sits_below_right():
    r = render_markup("x _ { 2 }", canvas_height=64)
    x = next(g for g in r.glyphs if g.token == "x")
    two = next(g for g in r.glyphs if g.token == "2")
    assert two.x0 > x.x0
    assert two.y1 > x.y1


def test_render_respects_canvas_height(corpus):
    for s in corpus:
        assert s.image.shape[0] == 64
        assert s.image.dtype == np.float32
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0


# ---------------------------------------------------------------- augment

def test_augment_identity_config_returns_input(corpus):
    img = corpus[0].image
    out = augment(img, seed=11, config=AugmentConfig.identity())
    assert np.array_equal(out, img)


def test_augment_deterministic_per_seed(corpus):
    img = corpus[0].image
    a = augment(img, seed=5)
    b = augment(img, seed=5)
    assert np.array_equal(a, b)
    c = augment(img, seed=6)
    assert a.shape == c.shape


def test_augment_preserves_range(corpus):
    for i, s in enumerate(corpus):
        out = augment(s.image, seed=i)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.shape == s.image.shape


def test_rotation_inverse_oracle(corpus):
    img = corpus[0].image
    back = rotate(rotate(img, 5.0), -5.0)
    assert np.abs(back - img).mean() < 0.05


# ---------------------------------------------------------------- IO

def test_write_then_load_round_trip(tmp_path, config, corpus):
    vocab = vocab_for(config)
    manifest = write_corpus(corpus, tmp_path, vocab, meta={"seed": 7})
    loaded = load_dataset(manifest, tmp_path, vocab)
    assert len(loaded) == len(corpus)
    for a, b in zip(corpus, loaded):
        assert a.markup == b.markup
        # 8-bit PNG quantization only
        assert np.abs(a.image - b.image).max() <= 1 / 255 + 1e-6


def test_load_empty_manifest(tmp_path, config):
    path = tmp_path / "manifest.tsv"
    path.write_text("")
    assert load_dataset(path, tmp_path, vocab_for(config)) == []


def test_load_missing_image_names_path(tmp_path, config):
    path = tmp_path / "manifest.tsv"
    path.write_text("images/nope.png\tx + 1\n")
    with pytest.raises(FileNotFoundError, match="nope.png"):
        load_dataset(path, tmp_path, vocab_for(config))


def test_load_unknown_token_reports_line(tmp_path, config, corpus):
    vocab = vocab_for(config)
    write_corpus(corpus[:2], tmp_path, vocab)
    manifest = tmp_path / "manifest.tsv"
    lines = manifest.read_text().splitlines()
    lines[1] = lines[1].rsplit("\t", 1)[0] + "\t@ bad"
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=":2:"):
        load_dataset(manifest, tmp_path, vocab)


def test_load_missing_manifest(tmp_path, config):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent.tsv", tmp_path, vocab_for(config))


# ---------------------------------------------------------------- batching

def test_pad_batch_single_sample(config, corpus):
    vocab = vocab_for(config)
    batch = pad_batch(corpus[:1], vocab)
    h, w = corpus[0].image.shape
    assert batch.images.shape[0] == 1
    assert batch.images.shape[2] % 16 == 0 and batch.images.shape[3] % 16 == 0
    assert batch.mask[0, 0, :h, :w].min() == 1.0
    assert float(batch.mask.sum()) == h * w


def test_pad_batch_max_extent_rule(config):
    vocab = vocab_for(config)
    a = FormulaSample(np.zeros((32, 48), dtype=np.float32), "x",
                      counting_ground_truth(tokenize("x", vocab), vocab))
    b = FormulaSample(np.zeros((48, 32), dtype=np.float32), "y",
                      counting_ground_truth(tokenize("y", vocab), vocab))
    batch = pad_batch([a, b], vocab)
    assert batch.images.shape[2:] == (48, 48)


def test_pad_batch_targets_eos_padded(config, corpus):
    vocab = vocab_for(config)
    batch = pad_batch(corpus[:4], vocab)
    for i, s in enumerate(corpus[:4]):
        seq = tokenize(s.markup, vocab)
        assert batch.target_lengths[i] == len(seq)
        assert batch.targets[i, : len(seq)].tolist() == list(seq.ids)
        assert (batch.targets[i, len(seq):] == 1).all()
        assert torch.equal(
            batch.counts[i], torch.from_numpy(counting_ground_truth(seq, vocab))
        )


def test_pad_batch_empty_rejected(config):
    with pytest.raises(ValueError):
        pad_batch([], vocab_for(config))


def test_sample_rng_streams_are_stable():
    a = sample_rng(7, 3).integers(0, 1 << 30, size=4)
    b = sample_rng(7, 3).integers(0, 1 << 30, size=4)
    c = sample_rng(7, 4).integers(0, 1 << 30, size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_markup_respects_budget():
    cfg = SynthGrammarConfig(max_len=10, max_depth=2)
    for i in range(50):
        markup = sample_markup(sample_rng(11, i), cfg)
        assert len(markup.split()) <= 10
