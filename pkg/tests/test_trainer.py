import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from nova.checkpoint import CheckpointError, CheckpointState, load_checkpoint, save_checkpoint
from nova.model import ViTConfig
from nova.multicrop import AugmentConfig, CropSpec
from nova.sigreg import SigregConfig
from nova.synthdata import SyntheticSpec, generate_dataset, split_manifest
from nova.trainer import (
    AdamW,
    ModelSpec,
    TrainConfig,
    audit_all_losses,
    build_model,
    clip_global_norm,
    cosine_lr,
    finite_difference_check,
    run_training,
)


def micro_model_spec():
    return ModelSpec(
        vit=ViTConfig(width=32, depth=1, heads=2, patch_size=32),
        predictor_hidden=16,
        out_dim=8,
        text_dim=16,
    )


def micro_aug():
    return AugmentConfig(
        global_crop=CropSpec(count=2, size=224, scale_min=0.8, scale_max=1.0),
        local_crop=CropSpec(count=2, size=96, scale_min=0.5, scale_max=0.7),
    )


def micro_train(**kw):
    base = dict(
        epochs=2, batch_size=8, lr_max=1e-3, lr_min=1e-4, warmup_epochs=1,
        clip_norm=1.0, lam=0.02, seed=0, eval_every=0,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def micro_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("microdata")
    spec = SyntheticSpec(samples_per_class=8, image_size=96, noise_sigma=6.0, seed=1)
    manifest = generate_dataset(spec, out)
    return split_manifest(manifest, 0.25, seed=1)


class TestCosineLr:
    CFG = TrainConfig(epochs=10, batch_size=2, lr_max=1e-4, lr_min=1e-5, warmup_epochs=1)

    def test_warmup_end_hits_peak(self):
        assert cosine_lr(20, self.CFG, steps_per_epoch=20) == pytest.approx(1e-4)

    def test_final_step_hits_floor(self):
        assert cosine_lr(199, self.CFG, steps_per_epoch=20) == pytest.approx(1e-5)

    def test_post_warmup_midpoint(self):
        cfg = TrainConfig(epochs=3, batch_size=2, lr_max=1e-4, lr_min=1e-5, warmup_epochs=1)
        # 30 total steps, warmup 10, span 19; midpoint progress 0.5 at step 19.5
        mid = 0.5 * (cosine_lr(19, cfg, 10) + cosine_lr(20, cfg, 10))
        assert mid == pytest.approx(5.5e-5, rel=2e-3)

    def test_monotone_shape_and_bounds(self):
        lrs = [cosine_lr(s, self.CFG, 20) for s in range(200)]
        warm = lrs[:20]
        rest = lrs[20:]
        assert all(a <= b for a, b in zip(warm, warm[1:]))
        assert all(a >= b for a, b in zip(rest, rest[1:]))
        assert all(1e-5 - 1e-12 <= lr <= 1e-4 + 1e-12 for lr in rest)
        assert lrs[0] == 0.0

    def test_no_warmup(self):
        cfg = TrainConfig(epochs=2, batch_size=2, lr_max=1e-4, lr_min=1e-5, warmup_epochs=0)
        assert cosine_lr(0, cfg, 5) == pytest.approx(1e-4)


class TestAdamW:
    def _adam_oracle_step(self, p, g, m, v, t, lr, b1, b2, eps):
        """Plain Adam in numpy, mirroring the documented update order."""
        m = b1 * m + g * (1.0 - b1)
        v = b2 * v + g * g * (1.0 - b2)
        p = p - lr * ((m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + eps))
        return p, m, v

    def test_zero_decay_bitwise_equals_adam(self):
        torch.manual_seed(0)
        p = torch.nn.Parameter(torch.randn(13, dtype=torch.float64))
        target = torch.randn(13, dtype=torch.float64)
        opt = AdamW({"p": p}, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
        p_ref = p.detach().numpy().copy()
        m_ref = np.zeros(13)
        v_ref = np.zeros(13)
        for t in range(1, 26):
            loss = ((p - target) ** 2).sum()
            opt.zero_grad()
            loss.backward()
            g_ref = p.grad.detach().numpy().copy()
            opt.step(lr=1e-2)
            p_ref, m_ref, v_ref = self._adam_oracle_step(
                p_ref, g_ref, m_ref, v_ref, t, 1e-2, 0.9, 0.999, 1e-8
            )
            assert np.array_equal(p.detach().numpy(), p_ref)

    def test_decay_is_decoupled(self):
        # one step from zero moments: decay shrinks the parameter first,
        # the Adam direction is computed from the raw gradient only
        p = torch.nn.Parameter(torch.tensor([[2.0]], dtype=torch.float64))
        opt = AdamW({"p": p}, weight_decay=0.1)
        p.grad = torch.tensor([[0.5]], dtype=torch.float64)
        opt.step(lr=0.1)
        shrunk = 2.0 * (1 - 0.1 * 0.1)
        adam_step = 0.1 * (0.5 / (abs(0.5) + 1e-8))
        assert float(p) == pytest.approx(shrunk - adam_step, abs=1e-12)

    def test_ndim_le_1_excluded_from_decay(self):
        w = torch.nn.Parameter(torch.ones(3, 3, dtype=torch.float64))
        b = torch.nn.Parameter(torch.ones(3, dtype=torch.float64))
        opt = AdamW({"w": w, "b": b}, weight_decay=0.5)
        w.grad = torch.zeros_like(w)
        b.grad = torch.zeros_like(b)
        opt.step(lr=0.1)
        assert float(w.mean()) < 1.0
        assert float(b.mean()) == 1.0


class TestClipping:
    def test_large_gradient_clipped_to_norm(self):
        p = torch.nn.Parameter(torch.zeros(4))
        p.grad = torch.full((4,), 10.0)
        pre = clip_global_norm([p], 1.0)
        assert pre == pytest.approx(20.0)
        assert float(p.grad.norm()) <= 1.0 + 1e-6

    def test_small_gradient_untouched(self):
        p = torch.nn.Parameter(torch.zeros(4))
        g = torch.tensor([0.1, -0.2, 0.05, 0.0])
        p.grad = g.clone()
        clip_global_norm([p], 1.0)
        assert torch.equal(p.grad, g)


class TestCheckpointFormat:
    def _state(self):
        rng = np.random.default_rng(0)
        return CheckpointState(
            step=17,
            config_hash=123456789,
            tensors={
                "model.w": rng.standard_normal((3, 4)).astype(np.float32),
                "opt.m.w": rng.standard_normal((3, 4)).astype(np.float32),
                "buf.bn": rng.standard_normal(5).astype(np.float32),
                "scalar": np.float32(2.5).reshape(()),
            },
        )

    def test_round_trip_bit_exact(self, tmp_path):
        state = self._state()
        save_checkpoint(state, tmp_path / "c.ckpt")
        loaded = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.step == 17 and loaded.config_hash == 123456789
        assert set(loaded.tensors) == set(state.tensors)
        for k in state.tensors:
            assert np.array_equal(loaded.tensors[k], state.tensors[k])
            assert loaded.tensors[k].dtype == np.float32

    def test_bad_magic_rejected(self, tmp_path):
        save_checkpoint(self._state(), tmp_path / "c.ckpt")
        raw = bytearray((tmp_path / "c.ckpt").read_bytes())
        raw[:4] = b"JUNK"
        (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_truncation_rejected(self, tmp_path):
        save_checkpoint(self._state(), tmp_path / "c.ckpt")
        raw = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "trunc.ckpt").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "trunc.ckpt")

    def test_payload_corruption_fails_checksum(self, tmp_path):
        save_checkpoint(self._state(), tmp_path / "c.ckpt")
        raw = bytearray((tmp_path / "c.ckpt").read_bytes())
        raw[-40] ^= 0xFF
        (tmp_path / "flip.ckpt").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "flip.ckpt")

    def test_unsupported_version(self, tmp_path):
        save_checkpoint(self._state(), tmp_path / "c.ckpt")
        raw = bytearray((tmp_path / "c.ckpt").read_bytes())
        raw[4] = 9
        (tmp_path / "v9.ckpt").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "v9.ckpt")


class TestFiniteDifferenceCheck:
    def test_linear_loss_near_exact(self):
        # moderate magnitudes and O(1) coefficients keep the rounding of the
        # central difference of a linear map far below 1e-10
        w = torch.tensor(np.linspace(-0.3, 0.3, 6), requires_grad=True)
        c = torch.tensor([1.0, -0.5, 0.5, -1.0, 0.5, 1.0], dtype=torch.float64)
        report = finite_difference_check(lambda: (w * c).sum(), {"w": w}, tolerance=1e-10)
        assert report.max_rel_error < 1e-10
        assert report.passed

    def test_corrupted_gradient_detected(self):
        w = torch.tensor(np.arange(1.0, 7.0), requires_grad=True)

        def corrupt(grads):
            return {k: g * 1.01 for k, g in grads.items()}

        report = finite_difference_check(
            lambda: (w**2).sum(), {"w": w}, tolerance=1e-4, grad_transform=corrupt
        )
        assert not report.passed
        assert report.max_rel_error > 1e-4

    def test_audit_all_losses_passes(self):
        results = audit_all_losses(seed=0, n_coords=40)
        assert set(results) == {"mse", "nova", "infonce", "siglip", "sigreg"}
        for name, err in results.items():
            assert err < 1e-4, name

    def test_audit_fault_injection(self):
        results = audit_all_losses(seed=0, fault="mse", n_coords=40)
        assert results["mse"] >= 1e-4
        assert results["infonce"] < 1e-4


class TestTrainingRuns:
    def test_short_run_writes_outputs(self, micro_data, tmp_path):
        train, evals = micro_data
        log, ckpt = run_training(
            micro_model_spec(), micro_train(eval_every=1), micro_aug(), SigregConfig(m=8),
            train, evals, tmp_path / "run",
        )
        assert len(log.steps) == 2 * (len(train) // 8)
        assert ckpt.exists()
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert (tmp_path / "run" / "eval_metrics.csv").exists()
        header = (tmp_path / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == "step,epoch,lr,loss_total,loss_mse,loss_sigreg"
        assert all(math.isfinite(r.loss_total) for r in log.steps)

    def test_same_seed_reproduces_metrics_bytes(self, micro_data, tmp_path):
        train, evals = micro_data
        for name in ("a", "b"):
            run_training(
                micro_model_spec(), micro_train(), micro_aug(), SigregConfig(m=8),
                train, None, tmp_path / name,
            )
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_lambda_zero_excludes_sigreg_from_update(self, micro_data, tmp_path):
        train, _ = micro_data
        # identical runs except for the sigreg seed: at lambda=0 the term is
        # logged but must not influence parameters
        logs = []
        for name, sig_seed in (("s1", 1), ("s2", 2)):
            log, _ = run_training(
                micro_model_spec(), micro_train(lam=0.0), micro_aug(),
                SigregConfig(m=4, seed=sig_seed), train, None, tmp_path / name,
            )
            logs.append(log)
        a, b = logs
        assert [r.loss_total for r in a.steps] == [r.loss_total for r in b.steps]
        assert [r.loss_sigreg for r in a.steps] != [r.loss_sigreg for r in b.steps]
        assert all(r.loss_sigreg is not None for r in a.steps)

    def test_frozen_text_table_unchanged(self, micro_data, tmp_path):
        train, _ = micro_data
        spec = micro_model_spec()
        model_before = build_model(spec, seed=0)
        table_before = {
            tok: model_before.text.table.token_vector(tok).copy() for tok in ("blob", "ring", "findings")
        }
        run_training(spec, micro_train(), micro_aug(), SigregConfig(m=4), train, None, tmp_path / "r")
        model_after = build_model(spec, seed=0)
        state = load_checkpoint(tmp_path / "r" / "final.ckpt")
        from nova.trainer import apply_checkpoint_to_model

        apply_checkpoint_to_model(model_after, state)
        for tok, vec in table_before.items():
            assert np.array_equal(model_after.text.table.token_vector(tok), vec)

    def test_gradient_norm_bounded_after_clipping(self, micro_data):
        from nova.data import ImageStore, epoch_batches
        from nova.trainer import Trainer

        train, _ = micro_data
        cfg = micro_train(lr_max=5e-2, lr_min=5e-3)  # big lr to provoke big grads
        model = build_model(micro_model_spec(), cfg.seed)
        trainer = Trainer(model, cfg, micro_aug(), SigregConfig(m=4))
        store = ImageStore(train)
        spe = len(train) // cfg.batch_size
        for step in range(2):
            indices = epoch_batches(len(train), cfg.batch_size, cfg.seed, 0)[step % spe]
            trainer.train_step(store, indices, step, spe)
            post = math.sqrt(
                sum(float((p.grad.double() ** 2).sum()) for p in trainer.opt.params.values() if p.grad is not None)
            )
            assert post <= cfg.clip_norm + 1e-6

    def test_resume_reproduces_loss_trace(self, micro_data, tmp_path):
        train, _ = micro_data
        spec, cfg = micro_model_spec(), micro_train(epochs=3)
        full, _ = run_training(spec, cfg, micro_aug(), SigregConfig(m=4), train, None, tmp_path / "full")
        _, mid_ckpt = run_training(
            spec, cfg, micro_aug(), SigregConfig(m=4), train, None, tmp_path / "half",
            stop_after_step=3,
        )
        resumed, _ = run_training(
            spec, cfg, micro_aug(), SigregConfig(m=4), train, None, tmp_path / "resumed",
            resume_from=mid_ckpt,
        )
        full_losses = [(r.step, r.loss_total) for r in full.steps]
        resumed_losses = [(r.step, r.loss_total) for r in resumed.steps]
        assert resumed_losses == full_losses[3:]

    def test_epochs_zero_boundary(self, micro_data, tmp_path):
        train, _ = micro_data
        log, ckpt = run_training(
            micro_model_spec(), micro_train(epochs=0), micro_aug(), SigregConfig(m=4),
            train, None, tmp_path / "zero",
        )
        assert log.steps == []
        assert load_checkpoint(ckpt).step == 0
        assert (tmp_path / "zero" / "metrics.csv").read_text().splitlines() == [
            "step,epoch,lr,loss_total,loss_mse,loss_sigreg"
        ]

    def test_contrastive_objectives_run(self, micro_data, tmp_path):
        train, _ = micro_data
        for objective in ("infonce", "siglip"):
            log, _ = run_training(
                micro_model_spec(), micro_train(objective=objective, epochs=1), micro_aug(),
                SigregConfig(m=4), train, None, tmp_path / objective,
            )
            header = (tmp_path / objective / "metrics.csv").read_text().splitlines()[0]
            assert header == "step,epoch,lr,loss_total"
            assert all(r.loss_sigreg is None for r in log.steps)
            assert all(math.isfinite(r.loss_total) for r in log.steps)

    def test_checkpoint_state_round_trip_through_trainer(self, micro_data, tmp_path):
        from nova.trainer import Trainer

        train, _ = micro_data
        cfg = micro_train()
        model = build_model(micro_model_spec(), cfg.seed)
        trainer = Trainer(model, cfg, micro_aug(), SigregConfig(m=4))
        state = trainer.state(step=0, config_hash=7)
        save_checkpoint(state, tmp_path / "t.ckpt")
        model2 = build_model(micro_model_spec(), seed=99)  # different init
        trainer2 = Trainer(model2, cfg, micro_aug(), SigregConfig(m=4))
        trainer2.load_state(load_checkpoint(tmp_path / "t.ckpt"))
        for (n1, p1), (_, p2) in zip(model.named_parameters(), model2.named_parameters()):
            assert torch.equal(p1, p2), n1
