import numpy as np
import pytest
import torch

from conftest import make_feature_map
from mathrec.decoder import (
    AttentionDecoder,
    DecoderState,
    masked_softmax,
    positional_encoding_2d,
)


def tiny_decoder(c_feat=8, num_classes=5, dtype=torch.float32, pe=True):
    dec = AttentionDecoder(
        feature_channels=c_feat, num_classes=num_classes, hidden_size=6,
        attn_size=8, embed_size=6, context_size=7, coverage_kernel=3,
        use_positional_encoding=pe,
    )
    return dec.to(dtype)


# ------------------------------------------------------------ positional encoding

def test_positional_encoding_origin_is_sin0_cos1():
    pe = positional_encoding_2d(3, 5, dim=16)
    origin = pe[:, 0, 0]
    assert torch.equal(origin[0:8:2], torch.zeros(4))
    assert torch.equal(origin[1:8:2], torch.ones(4))
    assert torch.equal(origin[8::2], torch.zeros(4))
    assert torch.equal(origin[9::2], torch.ones(4))


def test_positional_encoding_axes_are_independent():
    pe = positional_encoding_2d(4, 6, dim=16)
    # x half constant down columns, y half constant along rows
    assert torch.equal(pe[:8, 0], pe[:8, 3])
    assert torch.equal(pe[8:, :, 0], pe[8:, :, 5])


def test_positional_encoding_pairwise_distinct():
    pe = positional_encoding_2d(4, 4, dim=16).reshape(16, -1)
    cells = pe.T
    for i in range(cells.shape[0]):
        for j in range(i + 1, cells.shape[0]):
            assert not torch.allclose(cells[i], cells[j]), (i, j)


def test_positional_encoding_bit_identical_recomputation():
    a = positional_encoding_2d(5, 7, dim=32)
    b = positional_encoding_2d(5, 7, dim=32)
    assert torch.equal(a, b)


def test_positional_encoding_rejects_bad_dim():
    with pytest.raises(ValueError):
        positional_encoding_2d(2, 2, dim=10)


# ------------------------------------------------------------ attention

def test_masked_softmax_uniform_energies():
    e = torch.zeros(1, 2, 2)
    alpha = masked_softmax(e, None)
    assert torch.allclose(alpha, torch.full((1, 2, 2), 0.25))


def test_masked_softmax_saturation():
    e = torch.zeros(1, 2, 2)
    e[0, 1, 1] = 1000.0
    alpha = masked_softmax(e, None)
    assert float(alpha[0, 1, 1]) == pytest.approx(1.0, abs=1e-6)


def test_masked_softmax_zeroes_masked_cells():
    e = torch.randn(1, 2, 3)
    mask = torch.tensor([[[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]]])
    alpha = masked_softmax(e, mask)
    assert float(alpha[0, 0, 2]) == 0.0
    assert float(alpha[0, 1, 1]) == 0.0
    assert float(alpha[0, 1, 2]) == 0.0
    assert float(alpha.sum()) == pytest.approx(1.0, abs=1e-6)


def test_attention_weights_normalize_under_fuzzing():
    for trial in range(200):
        torch.manual_seed(trial)
        dec = tiny_decoder()
        mask = (torch.rand(2, 1, 3, 4) > 0.3).float()
        mask[:, :, 0, 0] = 1.0  # keep at least one valid cell
        fm = make_feature_map(b=2, mask=mask, seed=trial)
        t_feat = dec.transform_features(fm)
        state = dec.init_state(fm)
        alpha = dec.attention_step(t_feat, state, fm.mask)
        sums = alpha.sum(dim=(1, 2))
        assert torch.allclose(sums, torch.ones(2), atol=1e-5)
        assert float((alpha * (1 - mask[:, 0])).abs().max()) == 0.0


# ------------------------------------------------------------ context

def test_context_sum_one_hot_selects_feature():
    dec = tiny_decoder()
    fm = make_feature_map(b=1, c=8, h=3, w=4)
    alpha = torch.zeros(1, 3, 4)
    alpha[0, 2, 1] = 1.0
    got = dec.context_sum(alpha, fm.values)
    assert torch.allclose(got[0], fm.values[0, :, 2, 1])


def test_context_sum_uniform_is_spatial_mean():
    dec = tiny_decoder()
    fm = make_feature_map(b=1, c=8, h=3, w=4)
    alpha = torch.full((1, 3, 4), 1.0 / 12)
    got = dec.context_sum(alpha, fm.values)
    assert torch.allclose(got[0], fm.values[0].mean(dim=(1, 2)), atol=1e-6)


def test_context_vector_length_fixed_across_grids():
    dec = AttentionDecoder(feature_channels=684, num_classes=10)
    for h, w in [(2, 3), (5, 9)]:
        fm = make_feature_map(b=1, c=684, h=h, w=w)
        alpha = torch.full((1, h, w), 1.0 / (h * w))
        assert dec.context_vector(alpha, fm.values).shape == (1, 256)


# ------------------------------------------------------------ decode contracts

def test_decode_step_probability_simplex():
    dec = tiny_decoder()
    fm = make_feature_map()
    t_feat = dec.transform_features(fm)
    state = dec.init_state(fm)
    counts = torch.rand(1, 5)
    probs, new_state, alpha = dec.decode_step(state, torch.tensor([0]), t_feat, fm, counts)
    assert probs.shape == (1, 5)
    assert float(probs.min()) >= 0.0
    assert float(probs.sum()) == pytest.approx(1.0, abs=1e-6)


def test_decode_step_coverage_accumulates_exactly():
    dec = tiny_decoder()
    fm = make_feature_map()
    t_feat = dec.transform_features(fm)
    state = dec.init_state(fm)
    counts = torch.zeros(1, 5)
    _, s1, a1 = dec.decode_step(state, torch.tensor([0]), t_feat, fm, counts)
    assert torch.equal(s1.coverage - state.coverage, a1.unsqueeze(1))
    assert s1.step == 1
    _, s2, a2 = dec.decode_step(s1, torch.tensor([2]), t_feat, fm, counts)
    # float add/subtract round trip; exactness modulo last-bit rounding
    assert float((s2.coverage - s1.coverage - a2.unsqueeze(1)).abs().max()) <= 1e-7


def test_coverage_telescopes_over_steps():
    dec = tiny_decoder()
    fm = make_feature_map()
    t_feat = dec.transform_features(fm)
    state = dec.init_state(fm)
    counts = torch.rand(1, 5)
    total = torch.zeros_like(state.coverage)
    for t in range(6):
        _, state, alpha = dec.decode_step(state, torch.tensor([t % 5]), t_feat, fm, counts)
        total = total + alpha.unsqueeze(1)
    assert float((state.coverage - total).abs().max()) <= 1e-6


def test_initial_coverage_is_zero():
    dec = tiny_decoder()
    fm = make_feature_map()
    state = dec.init_state(fm)
    assert float(state.coverage.abs().max()) == 0.0
    assert state.step == 0


def test_decode_step_rejects_bad_class_id():
    dec = tiny_decoder()
    fm = make_feature_map()
    t_feat = dec.transform_features(fm)
    state = dec.init_state(fm)
    with pytest.raises(ValueError):
        dec.decode_step(state, torch.tensor([7]), t_feat, fm, torch.zeros(1, 5))


def test_zeroed_count_projection_makes_counts_irrelevant():
    dec = tiny_decoder()
    with torch.no_grad():
        dec.combine_counts.weight.zero_()
    fm = make_feature_map()
    t_feat = dec.transform_features(fm)
    state = dec.init_state(fm)
    p1, _, _ = dec.decode_step(state, torch.tensor([0]), t_feat, fm, torch.zeros(1, 5))
    p2, _, _ = dec.decode_step(state, torch.tensor([0]), t_feat, fm, 100 * torch.rand(1, 5))
    assert torch.equal(p1, p2)


def test_nonzero_count_projection_reacts_to_counts():
    found = False
    for trial in range(20):
        torch.manual_seed(trial + 100)
        dec = tiny_decoder()
        fm = make_feature_map(seed=trial)
        t_feat = dec.transform_features(fm)
        state = dec.init_state(fm)
        p1, _, _ = dec.decode_step(state, torch.tensor([0]), t_feat, fm, torch.zeros(1, 5))
        p2, _, _ = dec.decode_step(state, torch.tensor([0]), t_feat, fm, 50 * torch.ones(1, 5))
        if int(p1.argmax()) != int(p2.argmax()):
            found = True
            break
    assert found, "no count perturbation ever changed the argmax"


# ------------------------------------------------------------ sequence APIs

def test_teacher_forced_row_count_and_simplex():
    dec = tiny_decoder()
    fm = make_feature_map()
    targets = torch.tensor([[0, 3, 4, 1]])
    rows = dec.teacher_forced(fm, torch.rand(1, 5), targets)
    assert rows.shape == (1, 3, 5)
    assert torch.allclose(rows.sum(dim=2), torch.ones(1, 3), atol=1e-6)


def test_teacher_forced_deterministic():
    dec = tiny_decoder()
    fm = make_feature_map()
    targets = torch.tensor([[0, 2, 3, 4, 1]])
    counts = torch.rand(1, 5)
    a = dec.teacher_forced(fm, counts, targets)
    b = dec.teacher_forced(fm, counts, targets)
    assert torch.equal(a, b)


def test_greedy_decode_constant_eos_model():
    dec = tiny_decoder()
    with torch.no_grad():
        for p in dec.parameters():
            p.zero_()
        dec.out.bias[1] = 50.0
    fm = make_feature_map()
    results = dec.greedy_decode(fm, torch.zeros(1, 5), max_len=10)
    assert results[0].ids == (0, 1)
    assert not results[0].truncated
    assert len(results[0].alphas) == 1


def test_greedy_decode_truncation_flag():
    dec = tiny_decoder()
    with torch.no_grad():
        for p in dec.parameters():
            p.zero_()
        dec.out.bias[3] = 50.0  # never emits eos
    fm = make_feature_map()
    results = dec.greedy_decode(fm, torch.zeros(1, 5), max_len=6)
    assert results[0].truncated
    assert len(results[0].ids) == 6
    assert results[0].ids[0] == 0 and all(i == 3 for i in results[0].ids[1:])


def test_greedy_decode_rejects_tiny_max_len():
    dec = tiny_decoder()
    fm = make_feature_map()
    with pytest.raises(ValueError):
        dec.greedy_decode(fm, torch.zeros(1, 5), max_len=1)


# ------------------------------------------------------------ gradients

def test_attention_and_classifier_gradcheck():
    from mathrec.objective import cls_loss_from_logits

    torch.manual_seed(9)
    dec = tiny_decoder(dtype=torch.float64)
    fm = make_feature_map(b=1, c=8, h=2, w=3, dtype=torch.float64)
    counts = torch.rand(1, 5, dtype=torch.float64)
    targets = torch.tensor([[0, 2, 4, 3, 1]])

    def loss_value():
        rows = dec.teacher_forced(fm, counts, targets, return_logits=True)
        return cls_loss_from_logits(rows, targets)

    dec.zero_grad()
    loss_value().backward()

    groups = {
        "energy.weight": dec.energy.weight,          # w of the energy mix
        "energy.bias": dec.energy.bias,
        "coverage_proj.weight": dec.coverage_proj.weight,
        "hidden_proj.weight": dec.hidden_proj.weight,
        "combine_context.weight": dec.combine_context.weight,
        "combine_counts.weight": dec.combine_counts.weight,
        "combine_hidden.weight": dec.combine_hidden.weight,
        "combine_embed.weight": dec.combine_embed.weight,
        "out.weight": dec.out.weight,
        "out.bias": dec.out.bias,
    }
    h = 1e-5
    rng = np.random.default_rng(0)
    for name, p in groups.items():
        analytic = p.grad.view(-1)
        flat = p.data.view(-1)
        picks = rng.choice(flat.numel(), size=min(8, flat.numel()), replace=False)
        for k in picks.tolist():
            orig = float(flat[k])
            flat[k] = orig + h
            up = float(loss_value())
            flat[k] = orig - h
            down = float(loss_value())
            flat[k] = orig
            fd = (up - down) / (2 * h)
            an = float(analytic[k])
            assert abs(fd - an) / max(abs(an), 1e-8) <= 1e-3, (
                f"{name}[{k}]: fd {fd} vs analytic {an}"
            )
