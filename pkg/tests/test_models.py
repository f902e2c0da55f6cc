import numpy as np
import pytest

from vineyield.errors import ValidationError
from vineyield.nn import (
    BackboneConfig,
    CnnRegressor,
    CnnRegressorConfig,
    Tensor,
    TransformerConfig,
    WindowTransformer,
    grad_check,
)

SMALL_BB = BackboneConfig(stages=((4, 2), (8, 2)))


def small_cnn(seed=1, dropout=0.2):
    cfg = CnnRegressorConfig(backbone=SMALL_BB, frame_h=8, frame_w=8,
                             hidden=(16, 16), dropout=dropout)
    return CnnRegressor(cfg, seed=seed)


def small_transformer(fusion=True, seed=2):
    cfg = TransformerConfig(backbone=SMALL_BB, frame_h=8, frame_w=8, token_dim=4,
                            depth=2, heads=2, mlp_ratio=2, fusion=fusion)
    return WindowTransformer(cfg, seed=seed)


def test_cnn_zero_final_layer_outputs_zero():
    model = small_cnn()
    model.eval()
    model.out.w.data[:] = 0.0
    model.out.b.data[:] = 0.0
    pairs = np.random.default_rng(0).standard_normal((3, 3, 8, 16))
    np.testing.assert_allclose(model.predict_pairs(pairs), 0.0)


def test_cnn_eval_deterministic():
    model = small_cnn()
    pairs = np.random.default_rng(1).standard_normal((2, 3, 8, 16))
    a = model.predict_pairs(pairs)
    b = model.predict_pairs(pairs)
    np.testing.assert_array_equal(a, b)


def test_cnn_train_mode_dropout_varies():
    model = small_cnn()
    model.train(True)
    pairs = Tensor(np.random.default_rng(2).standard_normal((2, 3, 8, 16)))
    a = model(pairs).data.copy()
    b = model(pairs).data.copy()
    assert not np.allclose(a, b)


def test_cnn_output_can_go_negative():
    model = small_cnn()
    model.eval()
    model.out.b.data[:] = -5.0
    pairs = np.zeros((1, 3, 8, 16))
    assert model.predict_pairs(pairs)[0] < 0


def test_cnn_full_gradcheck():
    model = small_cnn(dropout=0.0)
    model.eval()
    pairs = Tensor(np.random.default_rng(3).standard_normal((2, 3, 8, 16)),
                   requires_grad=True)
    err = grad_check(lambda: (model(pairs) ** 2.0).sum(),
                     [pairs] + model.parameters(), max_coords=6)
    assert err < 1e-6


def test_transformer_full_gradcheck():
    model = small_transformer(fusion=True)
    model.eval()
    model.fusion.w_position.data = np.array(0.4)
    model.fusion.w_orientation.data = np.array(-0.3)
    frames = Tensor(np.random.default_rng(4).standard_normal((3, 3, 8, 8)),
                    requires_grad=True)
    pos = np.array([0.1, 0.5, 0.9])
    ori = np.array([0.5, 1.0, 0.5])
    err = grad_check(lambda: model.forward_window(frames, pos, ori),
                     [frames] + model.parameters(), max_coords=6)
    assert err < 1e-6


def test_transformer_permutation_invariant_without_fusion():
    model = small_transformer(fusion=False)
    model.eval()
    rng = np.random.default_rng(5)
    frames = rng.standard_normal((5, 3, 8, 8))
    base = model.predict_window(frames, None, None)
    for _ in range(4):
        perm = rng.permutation(5)
        assert abs(model.predict_window(frames[perm], None, None) - base) < 1e-9


def test_transformer_position_swap_changes_output_with_fusion():
    model = small_transformer(fusion=True)
    model.eval()
    model.fusion.w_position.data = np.array(0.4)
    model.fusion.w_orientation.data = np.array(-0.3)
    rng = np.random.default_rng(6)
    frames = rng.standard_normal((4, 3, 8, 8))
    pos = np.array([0.2, 0.4, 0.6, 0.8])
    ori = np.array([0.5, 1.0, 0.5, 1.0])
    base = model.predict_window(frames, pos, ori)
    swapped = pos.copy()
    swapped[[0, 3]] = swapped[[3, 0]]
    assert abs(model.predict_window(frames, swapped, ori) - base) > 1e-6


def test_transformer_single_member_window():
    model = small_transformer()
    model.eval()
    frames = np.random.default_rng(7).standard_normal((1, 3, 8, 8))
    out = model.predict_window(frames, np.array([0.5]), np.array([1.0]))
    assert np.isfinite(out)


def test_transformer_empty_window_rejected():
    model = small_transformer()
    with pytest.raises(ValidationError):
        model.forward_window(Tensor(np.zeros((0, 3, 8, 8))), np.array([]), np.array([]))


def test_transformer_fusion_needs_scalars():
    model = small_transformer(fusion=True)
    frames = Tensor(np.zeros((2, 3, 8, 8)))
    with pytest.raises(ValidationError):
        model.forward_window(frames, None, None)


def test_token_dim_must_match_backbone_output():
    with pytest.raises(ValidationError, match="token dim"):
        TransformerConfig(backbone=SMALL_BB, frame_h=8, frame_w=8, token_dim=8,
                          depth=1, heads=2, mlp_ratio=2)


def test_token_dim_divisible_by_heads():
    with pytest.raises(ValidationError, match="divisible"):
        TransformerConfig(backbone=SMALL_BB, frame_h=8, frame_w=8, token_dim=4,
                          depth=1, heads=3, mlp_ratio=2)


def test_configs_roundtrip_dicts():
    c1 = CnnRegressorConfig(backbone=SMALL_BB, frame_h=8, frame_w=8, hidden=(16, 16), dropout=0.1)
    assert CnnRegressorConfig.from_dict(c1.to_dict()) == c1
    c2 = TransformerConfig(backbone=SMALL_BB, frame_h=8, frame_w=8, token_dim=4,
                           depth=2, heads=2, mlp_ratio=2, fusion=False)
    assert TransformerConfig.from_dict(c2.to_dict()) == c2


def test_class_token_initialized_to_zero():
    model = small_transformer()
    np.testing.assert_array_equal(model.cls.data, 0.0)
