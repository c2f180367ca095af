"""Objective terms: exact small-case values, ranges, and invariances."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mse_by_hand, patch_loss_reference
from textstyler import (
    ConfigError,
    DirectionPair,
    FeatureMap,
    NonFiniteLossError,
    TrainConfig,
    content_loss,
    default_config,
    directional_loss,
    global_clip_loss,
    patch_clip_loss,
    total_loss,
    tv_loss,
)


def axis(i: int, dim: int = 8, scale: float = 1.0) -> torch.Tensor:
    v = torch.zeros(dim)
    v[i] = scale
    return v


def unit_vectors(dim: int = 8):
    return st.lists(
        st.floats(-1.0, 1.0, allow_nan=False), min_size=dim, max_size=dim
    ).filter(lambda v: sum(x * x for x in v) > 1e-4)


class TestGlobalLoss:
    def test_identical_embeddings_zero(self):
        e = axis(0)
        assert float(global_clip_loss(e, e)) == 0.0

    def test_orthogonal_embeddings_one(self):
        assert float(global_clip_loss(axis(0), axis(1))) == 1.0

    def test_antipodal_embeddings_two(self):
        assert float(global_clip_loss(axis(0), axis(0, scale=-1.0))) == 2.0

    @given(a=unit_vectors(), b=unit_vectors())
    @settings(max_examples=60, deadline=None)
    def test_range(self, a, b):
        val = float(global_clip_loss(torch.tensor(a), torch.tensor(b)))
        assert 0.0 <= val <= 2.0


class TestDirectionalLoss:
    def test_parallel_zero(self):
        dt = axis(0, scale=2.0)
        di = axis(0, scale=3.0)
        assert float(directional_loss(DirectionPair(di, dt))) == 0.0

    def test_orthogonal_one(self):
        assert float(directional_loss(DirectionPair(axis(1), axis(0)))) == 1.0

    def test_antiparallel_two(self):
        dt = axis(0, scale=2.0)
        di = axis(0, scale=-6.0)
        assert float(directional_loss(DirectionPair(di, dt))) == 2.0

    def test_zero_text_direction_is_config_error(self):
        with pytest.raises(ConfigError, match="distinct"):
            directional_loss(DirectionPair(axis(0), torch.zeros(8)))

    def test_zero_image_direction_is_uninformative_one(self):
        assert float(directional_loss(DirectionPair(torch.zeros(8), axis(0)))) == 1.0

    @given(di=unit_vectors(), dt=unit_vectors())
    @settings(max_examples=60, deadline=None)
    def test_range(self, di, dt):
        val = float(directional_loss(DirectionPair(torch.tensor(di), torch.tensor(dt))))
        assert 0.0 <= val <= 2.0


def embeds_for_losses(per_patch: list[float], dim: int = 8):
    """Construct embeddings whose per-patch directional losses are the given values.

    With content = 0 and delta_t = e0, a patch embedding cos(theta) e0 +
    sin(theta) e1 yields loss 1 - cos(theta).
    """
    rows = []
    for l in per_patch:
        c = 1.0 - l
        s = (max(0.0, 1.0 - c * c)) ** 0.5
        rows.append([c, s] + [0.0] * (dim - 2))
    return (
        torch.tensor(rows, dtype=torch.float64),
        torch.zeros(dim, dtype=torch.float64),
        torch.cat([torch.ones(1), torch.zeros(dim - 1)]).to(torch.float64),
    )


class TestPatchLoss:
    def test_all_rejected_is_exact_zero(self):
        embeds, content, dt = embeds_for_losses([0.5, 0.6])
        loss, per_patch, rejected = patch_clip_loss(embeds, content, dt, tau=0.7)
        assert float(loss) == 0.0
        assert rejected == (True, True)

    def test_mixed_rejection_keeps_n_denominator(self):
        embeds, content, dt = embeds_for_losses([0.5, 0.9])
        loss, per_patch, rejected = patch_clip_loss(embeds, content, dt, tau=0.7)
        assert rejected == (True, False)
        assert float(loss) == pytest.approx(0.45, abs=1e-9)
        assert per_patch[0] == pytest.approx(0.5, abs=1e-9)
        assert per_patch[1] == pytest.approx(0.9, abs=1e-9)

    def test_tau_zero_keeps_all_positive(self):
        embeds, content, dt = embeds_for_losses([0.25, 0.75])
        loss, per_patch, rejected = patch_clip_loss(embeds, content, dt, tau=0.0)
        assert rejected == (False, False)
        assert float(loss) == pytest.approx(0.5, abs=1e-9)

    def test_loss_equal_to_tau_is_rejected(self):
        embeds, content, dt = embeds_for_losses([0.7])
        loss, per_patch, rejected = patch_clip_loss(embeds, content, dt, tau=0.7)
        # float64 reconstruction of 0.7 is within 1e-12 of tau; accept either
        # side but demand consistency between mask and value.
        assert rejected[0] == (per_patch[0] <= 0.7)
        assert float(loss) == (0.0 if rejected[0] else pytest.approx(0.7, abs=1e-9))

    def test_permutation_invariance(self):
        embeds, content, dt = embeds_for_losses([0.3, 0.9, 1.4, 0.1])
        loss_a, _, _ = patch_clip_loss(embeds, content, dt, tau=0.5)
        perm = embeds[[2, 0, 3, 1]]
        loss_b, _, _ = patch_clip_loss(perm, content, dt, tau=0.5)
        assert float(loss_a) == pytest.approx(float(loss_b), abs=1e-12)

    def test_delta_t_scale_invariance(self):
        embeds, content, dt = embeds_for_losses([0.3, 0.9])
        loss_a, pa, _ = patch_clip_loss(embeds, content, dt, tau=0.5)
        loss_b, pb, _ = patch_clip_loss(embeds, content, dt * 7.5, tau=0.5)
        assert float(loss_a) == pytest.approx(float(loss_b), abs=1e-12)
        assert pa == pytest.approx(pb, abs=1e-12)

    @given(
        losses=st.lists(st.floats(0.0, 2.0), min_size=1, max_size=8),
        tau1=st.floats(0.0, 2.0),
        tau2=st.floats(0.0, 2.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_monotone_rejection(self, losses, tau1, tau2):
        lo, hi = sorted((tau1, tau2))
        embeds, content, dt = embeds_for_losses(losses)
        loss_lo, _, _ = patch_clip_loss(embeds, content, dt, tau=lo)
        loss_hi, _, _ = patch_clip_loss(embeds, content, dt, tau=hi)
        assert float(loss_hi) <= float(loss_lo) + 1e-12

    def test_per_patch_anchor_broadcast(self):
        embeds, content, dt = embeds_for_losses([0.4, 1.2])
        anchors = torch.stack([content, content])
        loss_a, pa, ra = patch_clip_loss(embeds, content, dt, tau=0.5)
        loss_b, pb, rb = patch_clip_loss(embeds, anchors, dt, tau=0.5)
        assert float(loss_a) == float(loss_b)
        assert pa == pb and ra == rb

    def test_empty_patch_list_rejected(self):
        with pytest.raises(ValueError):
            patch_clip_loss(torch.zeros(0, 8), torch.zeros(8), axis(0), tau=0.5)

    def test_zero_delta_t_rejected(self):
        embeds, content, _ = embeds_for_losses([0.5])
        with pytest.raises(ConfigError):
            patch_clip_loss(embeds, content, torch.zeros(8), tau=0.5)

    def test_rejected_gradient_is_exactly_zero(self):
        base = torch.tensor([[0.9, 0.1, 0, 0, 0, 0, 0, 0]], dtype=torch.float64)
        embeds = base.clone().requires_grad_(True)
        dt = axis(0).to(torch.float64)
        # loss ~0.1 <= tau=0.7: rejected
        loss, _, rejected = patch_clip_loss(embeds, torch.zeros(8, dtype=torch.float64), dt, 0.7)
        assert rejected == (True,)
        loss.backward()
        assert torch.count_nonzero(embeds.grad) == 0


class TestContentLoss:
    def test_identical_features_zero(self):
        f = [FeatureMap("conv4_2", torch.rand(4, 3, 3, generator=torch.Generator().manual_seed(0)))]
        assert float(content_loss(f, f)) == 0.0

    def test_unit_offset_is_one(self):
        a = [FeatureMap("conv4_2", torch.zeros(2, 3, 3))]
        b = [FeatureMap("conv4_2", torch.ones(2, 3, 3))]
        assert float(content_loss(a, b)) == 1.0

    def test_two_layer_average_matches_hand_computation(self):
        ca = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        cb = torch.tensor([[[0.0, 0.5], [1.0, 1.5]]])
        oa = torch.tensor([[[1.0, 0.0], [3.0, 0.0]]])
        ob = torch.tensor([[[1.0, 0.5], [1.0, 2.5]]])
        got = float(
            content_loss(
                [FeatureMap("conv4_2", ca), FeatureMap("conv5_2", cb)],
                [FeatureMap("conv4_2", oa), FeatureMap("conv5_2", ob)],
            )
        )
        want = (mse_by_hand(ca.numpy(), oa.numpy()) + mse_by_hand(cb.numpy(), ob.numpy())) / 2
        assert got == pytest.approx(want, abs=1e-7)

    def test_layer_name_mismatch(self):
        a = [FeatureMap("conv4_2", torch.zeros(1, 2, 2))]
        b = [FeatureMap("conv5_2", torch.zeros(1, 2, 2))]
        with pytest.raises(ValueError, match="layer"):
            content_loss(a, b)

    def test_shape_mismatch(self):
        a = [FeatureMap("conv4_2", torch.zeros(1, 2, 2))]
        b = [FeatureMap("conv4_2", torch.zeros(1, 3, 3))]
        with pytest.raises(ValueError, match="shape"):
            content_loss(a, b)

    def test_empty_lists(self):
        with pytest.raises(ValueError):
            content_loss([], [])


class TestTvLoss:
    def test_constant_image_zero(self):
        assert float(tv_loss(torch.full((3, 8, 8), 0.4))) == 0.0

    def test_single_unit_step(self):
        image = torch.tensor([[[0.0, 1.0]]])  # one channel, 1x2
        assert float(tv_loss(image)) == 1.0

    def test_checkerboard_is_two(self):
        idx = torch.arange(8)
        board = ((idx[None, :] + idx[:, None]) % 2).float().expand(3, 8, 8)
        assert float(tv_loss(board)) == 2.0

    def test_1x1_rejected(self):
        with pytest.raises(ValueError):
            tv_loss(torch.zeros(3, 1, 1))

    def test_batched(self):
        a = torch.full((3, 4, 4), 0.2)
        assert float(tv_loss(a.unsqueeze(0))) == 0.0

    def test_gradient_flows(self):
        img = torch.rand(3, 6, 6, generator=torch.Generator().manual_seed(2)).requires_grad_(True)
        tv_loss(img).backward()
        assert float(img.grad.abs().sum()) > 0.0


class TestTotalLoss:
    def test_all_zero_terms(self):
        total, report = total_loss(default_config("single_image"))
        assert float(total) == 0.0
        assert report.l_total == 0.0

    def test_dir_only_weighting(self):
        cfg = default_config("single_image")
        total, report = total_loss(cfg, l_dir=torch.tensor(1.0))
        assert float(total) == 500.0
        report.check(cfg)

    def test_unit_terms_match_weight_sum(self):
        cfg = default_config("single_image")
        total, report = total_loss(
            cfg,
            l_dir=torch.tensor(1.0),
            l_patch=torch.tensor(1.0),
            per_patch=(1.0,),
            rejected=(False,),
            l_content=torch.tensor(1.0),
            l_tv=torch.tensor(1.0),
        )
        assert float(total) == pytest.approx(9650.002, rel=1e-7)
        report.check(cfg)

    def test_zero_weight_terms_stay_off_graph(self):
        cfg = TrainConfig(lambda_dir=0.0, lambda_patch=0.0, lambda_content=150.0, lambda_tv=0.0)
        x = torch.tensor(2.0, requires_grad=True)
        total, _ = total_loss(cfg, l_dir=x * 1000, l_content=x)
        total.backward()
        assert float(x.grad) == 150.0  # only the content path contributed

    @pytest.mark.parametrize(
        "term", ["l_dir", "l_patch", "l_content", "l_tv", "l_global"]
    )
    def test_non_finite_term_named(self, term):
        cfg = TrainConfig(lambda_global=1.0)
        with pytest.raises(NonFiniteLossError, match=term):
            total_loss(cfg, **{term: float("nan")})

    def test_non_finite_inf_caught(self):
        with pytest.raises(NonFiniteLossError):
            total_loss(default_config("single_image"), l_dir=float("inf"))

    def test_report_carries_patch_details(self):
        cfg = default_config("single_image")
        embeds, content, dt = embeds_for_losses([0.5, 0.9])
        l_patch, per_patch, rejected = patch_clip_loss(embeds, content, dt, cfg.tau)
        total, report = total_loss(
            cfg, l_patch=l_patch, per_patch=per_patch, rejected=rejected
        )
        report.check(cfg)
        assert report.num_rejected == 1


class TestOracleEquivalence:
    def test_random_vectors_match_brute_force(self):
        rng = np.random.default_rng(202)
        for _ in range(60):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(2, 16))
            embeds = rng.normal(size=(n, d))
            content = rng.normal(size=d) * 0.5
            dt = rng.normal(size=d)
            if np.linalg.norm(dt) < 1e-3:
                continue
            tau = float(rng.uniform(0, 2))
            want_mean, want_per, want_mask = patch_loss_reference(embeds, content, dt, tau)
            loss, per, mask = patch_clip_loss(
                torch.from_numpy(embeds),
                torch.from_numpy(content),
                torch.from_numpy(dt),
                tau,
            )
            assert float(loss) == pytest.approx(want_mean, abs=1e-9)
            assert list(mask) == want_mask
            for a, b in zip(per, want_per):
                assert a == pytest.approx(b, abs=1e-9)
