import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from eegphon.core import PHONEMES, EpochSet, LabelRecord
from eegphon.model import ModelConfig
from eegphon.training import (AugmentSpec, EarlyStopper, TrainConfig, augment,
                              build_model, class_weights, evaluate_accuracy,
                              label_smoothing_ce, lr_schedule, mixup_batch,
                              multi_task_loss, sample_epoch_indices,
                              task_targets, train, weighted_sampler,
                              zscore_per_sample)


class TestClassWeights:
    def test_balanced_all_ones(self):
        assert np.allclose(class_weights([10, 10, 10]), 1.0)

    def test_clip_bounds_hit_exactly(self):
        # a rare class among several common ones pushes both clip bounds
        w = class_weights([1, 50, 50, 50, 50])
        assert w.max() == 4.0
        assert w.min() == 0.25
        assert np.all((w >= 0.25) & (w <= 4.0))

    def test_imbalanced_pair_lower_clip(self):
        w = class_weights([100, 1])
        assert w[0] == 0.25                      # 0.0198 clipped up
        assert w[1] == pytest.approx(1.980198, abs=1e-5)

    def test_hand_computed_proportions(self):
        w = class_weights([10, 20, 40])
        want = np.array([4.0, 2.0, 1.0])
        want = want / want.mean()
        assert np.allclose(w, want)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            class_weights([0, 0])


class TestLabelSmoothing:
    def test_target_distribution_values(self):
        # C=11, eps=0.1: true-class mass 0.9 + 0.1/11, off-class 0.1/11
        logits = torch.zeros(1, 11, dtype=torch.float64)
        logits[0, 3] = 2.0
        target = torch.tensor([3])
        eps = 0.1
        loss = label_smoothing_ce(logits, target, eps)
        log_probs = torch.log_softmax(logits, dim=1)
        smooth = torch.full((11,), eps / 11, dtype=torch.float64)
        smooth[3] += 1.0 - eps
        assert abs(float(smooth[3]) - 0.9090909090909091) < 1e-9
        assert abs(float(smooth[0]) - 0.00909090909090909) < 1e-9
        want = -(smooth * log_probs[0]).sum()
        assert abs(float(loss) - float(want)) < 1e-9

    def test_uniform_logits_ln11(self):
        logits = torch.zeros(4, 11, dtype=torch.float64)
        loss = label_smoothing_ce(logits, torch.tensor([0, 3, 7, 10]), 0.1)
        assert abs(float(loss) - math.log(11)) < 1e-9

    def test_eps_zero_is_weighted_ce(self, rng):
        logits = torch.tensor(rng.standard_normal((6, 5)))
        targets = torch.tensor([0, 1, 2, 3, 4, 0])
        weights = torch.tensor([0.5, 1.0, 2.0, 1.5, 0.25],
                               dtype=torch.float64)
        got = label_smoothing_ce(logits, targets, 0.0, weights)
        ref = torch.nn.functional.cross_entropy(logits, targets,
                                                weight=weights)
        assert abs(float(got) - float(ref)) < 1e-9

    def test_nonfinite_rejected(self):
        bad = torch.tensor([[1.0, float("nan")]])
        with pytest.raises(ValueError):
            label_smoothing_ce(bad, torch.tensor([0]), 0.1)


class TestSchedule:
    CFG = TrainConfig()

    def test_zero_at_start(self):
        assert lr_schedule(0, self.CFG) == 0.0

    def test_warmup_end_at_max(self):
        assert lr_schedule(10, self.CFG) == pytest.approx(5e-4)

    def test_final_at_min(self):
        assert lr_schedule(150, self.CFG) == pytest.approx(1e-6)

    def test_continuity_at_warmup_boundary(self):
        left = lr_schedule(10 - 1e-9, self.CFG)
        right = lr_schedule(10 + 1e-9, self.CFG)
        assert abs(left - right) < 1e-12

    def test_monotone_decay_after_warmup(self):
        vals = [lr_schedule(t, self.CFG) for t in range(10, 151)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestMixup:
    def test_lambda_one_identity(self, rng):
        x = torch.randn(4, 6, 3)
        mixed, perm, lam = mixup_batch(x[:1], 0.1, rng)
        assert lam == 1.0
        assert torch.equal(mixed, x[:1])

    def test_equal_inputs_fixed_point(self, rng):
        x = torch.ones(8, 5, 2) * 3.0
        mixed, perm, lam = mixup_batch(x, 0.1, rng)
        assert torch.allclose(mixed, x)

    def test_convexity(self, rng):
        x = torch.randn(6, 4, 2, dtype=torch.float64)
        mixed, perm, lam = mixup_batch(x, 0.1, rng)
        want = lam * x + (1 - lam) * x[torch.as_tensor(perm)]
        assert torch.allclose(mixed, want)

    def test_disabled_in_last_fraction_of_epochs(self):
        cfg = TrainConfig(max_epochs=150, mixup_fraction=0.9)
        assert 134 < cfg.mixup_fraction * cfg.max_epochs <= 135
        # epoch 135 of 150 is the first epoch past the 90% boundary
        assert not (135 < cfg.mixup_fraction * cfg.max_epochs)

    def test_mixed_loss_linearity(self, rng):
        logits = torch.tensor(rng.standard_normal((8, 5)))
        yi = torch.tensor(rng.integers(0, 5, 8))
        yj = torch.tensor(rng.integers(0, 5, 8))
        lam = 0.37
        li = label_smoothing_ce(logits, yi, 0.1)
        lj = label_smoothing_ce(logits, yj, 0.1)
        mixed = lam * li + (1 - lam) * lj
        assert float(mixed) == pytest.approx(lam * float(li)
                                             + (1 - lam) * float(lj))


class TestAugment:
    SPEC = AugmentSpec()

    def test_identity_when_disabled(self, rng):
        spec = AugmentSpec(noise_sigma_rel=0.0, chan_drop=(0.0, 0.0),
                           time_shift_erp=0, time_mask=(0.0, 0.0),
                           amp_scale=(1.0, 1.0))
        x = rng.standard_normal((20, 4))
        out = augment(x, spec, np.random.default_rng(0))
        assert np.array_equal(out, x)

    def test_pure_time_shift_is_roll(self, rng):
        spec = AugmentSpec(noise_sigma_rel=0.0, chan_drop=(0.0, 0.0),
                           time_shift_erp=5, time_mask=(0.0, 0.0),
                           amp_scale=(1.0, 1.0))
        x = rng.standard_normal((30, 2))
        for seed in range(30):
            r = np.random.default_rng(seed)
            out = augment(x, spec, r)
            r2 = np.random.default_rng(seed)
            r2.uniform(0.0, 0.0)                  # chan-drop fraction draw
            shift = int(r2.integers(-5, 6))
            assert np.array_equal(out, np.roll(x, shift, axis=0))

    def test_noise_std_calibration(self):
        # noise-only augmentation on a unit-std calibration signal
        spec = AugmentSpec(chan_drop=(0.0, 0.0), time_shift_erp=0,
                           time_mask=(0.0, 0.0), amp_scale=(1.0, 1.0))
        rng = np.random.default_rng(7)
        x = rng.standard_normal((10_000, 1))
        x /= x.std()
        out = augment(x, spec, np.random.default_rng(8))
        noise_std = (out - x).std()
        assert abs(noise_std - 0.02) / 0.02 < 0.10

    def test_seed_determinism(self, rng):
        x = rng.standard_normal((25, 3))
        a = augment(x, self.SPEC, np.random.default_rng(5))
        b = augment(x, self.SPEC, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestSampler:
    def test_imbalanced_classes_balanced_stream(self):
        labels = np.array([0] * 90 + [1] * 10)
        stream = weighted_sampler(labels, seed=0)
        draws = np.array([labels[next(stream)] for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.01

    def test_single_class(self):
        labels = np.array([2] * 5)
        stream = weighted_sampler(labels, seed=0)
        assert all(labels[next(stream)] == 2 for _ in range(100))

    def test_same_seed_same_stream(self):
        labels = np.arange(50) % 3
        a = weighted_sampler(labels, seed=9)
        b = weighted_sampler(labels, seed=9)
        assert [next(a) for _ in range(500)] == [next(b) for _ in range(500)]

    def test_absent_class_rejected_at_construction(self):
        labels = np.array([0, 0, 2, 2])
        with pytest.raises(ValueError, match=r"\[1\]"):
            weighted_sampler(labels, seed=0, n_classes=3)

    def test_epoch_indices_deterministic(self):
        labels = np.arange(40) % 4
        i1 = sample_epoch_indices(labels, seed=1, epoch=3, n=40)
        i2 = sample_epoch_indices(labels, seed=1, epoch=3, n=40)
        i3 = sample_epoch_indices(labels, seed=1, epoch=4, n=40)
        assert np.array_equal(i1, i2)
        assert not np.array_equal(i1, i3)


class TestZscore:
    def test_constant_channel_maps_to_zero(self):
        data = np.ones((2, 10, 3))
        data[:, :, 1] = np.linspace(0, 1, 10)[None, :]
        out = zscore_per_sample(data)
        assert np.allclose(out[:, :, 0], 0.0)
        assert np.allclose(out[:, :, 2], 0.0)
        assert abs(out[0, :, 1].std() - 1.0) < 1e-9

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_mean_zero_var_one_property(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((3, 17, 4)) * rng.uniform(0.5, 50)
        out = zscore_per_sample(data)
        assert np.abs(out.mean(axis=1)).max() < 1e-6
        assert np.abs(out.std(axis=1) - 1.0).max() < 1e-6


class TestEarlyStopper:
    def test_stops_after_patience_worsening(self):
        stopper = EarlyStopper(patience=30)
        stopper.update(0, 0.8)                    # best epoch
        stopped_at = None
        for epoch in range(1, 100):
            if stopper.update(epoch, 0.8 - 0.001 * epoch):
                stopped_at = epoch
                break
        assert stopper.best_epoch == 0
        assert stopped_at == 30                   # 30 stale epochs after best

    def test_improvement_resets(self):
        stopper = EarlyStopper(patience=3)
        assert not stopper.update(0, 0.5)
        assert not stopper.update(1, 0.4)
        assert not stopper.update(2, 0.6)          # new best resets
        assert not stopper.update(3, 0.5)
        assert not stopper.update(4, 0.5)
        assert stopper.update(5, 0.5)


def _planted_epochs(rng, n_per_class=6, subjects=("S01", "S02")):
    data, labels = [], []
    t = np.arange(24)
    for subj in subjects:
        for ci, ph in enumerate(PHONEMES):
            for _ in range(n_per_class):
                bump = np.exp(-0.5 * ((t - 4 - 1.5 * ci) / 1.5) ** 2)
                w = np.cos(np.arange(4) * (ci + 1))
                x = rng.standard_normal((24, 4)) * 0.2 + 2.0 * bump[:, None] * w
                data.append(x)
                labels.append(LabelRecord.create(subj, ph))
    return EpochSet(data=np.stack(data), labels=tuple(labels),
                    feature_kind="ERP")


TINY_MODEL = ModelConfig(d_model=16, n_blocks=1, n_heads=2,
                         frontend_channels=4, head_hidden=16, dropout=0.0,
                         drop_path_max=0.0)


class TestMultiTaskLoss:
    def test_mean_of_four_heads(self, rng):
        logits = {t: torch.tensor(rng.standard_normal((6, n)))
                  for t, n in (("phoneme", 11), ("place", 2), ("manner", 2),
                               ("voicing", 2))}
        targets = {"phoneme": torch.tensor([0, 1, 2, 3, 4, 5]),
                   "place": torch.tensor([0, 1, 0, 1, 0, 1]),
                   "manner": torch.tensor([1, 0, 1, 0, 1, 0]),
                   "voicing": torch.tensor([0, 0, 1, 1, 0, 1])}
        total, parts = multi_task_loss(logits, targets, 0.1,
                                       {t: None for t in logits})
        individual = [label_smoothing_ce(logits[t], targets[t], 0.1)
                      for t in logits]
        want = float(torch.stack(individual).mean())
        assert abs(float(total) - want) < 1e-9

    def test_masked_head_excluded(self, rng):
        logits = {"phoneme": torch.tensor(rng.standard_normal((3, 11))),
                  "place": torch.tensor(rng.standard_normal((3, 2)))}
        targets = {"phoneme": torch.tensor([0, 1, 2]),
                   "place": torch.tensor([-1, -1, -1])}   # all vowels
        total, parts = multi_task_loss(logits, targets, 0.1,
                                       {t: None for t in logits})
        solo = label_smoothing_ce(logits["phoneme"], targets["phoneme"], 0.1)
        assert abs(float(total) - float(solo)) < 1e-12
        assert "place" not in parts


class TestTrainLoop:
    def test_learns_planted_templates(self, rng):
        epochs = _planted_epochs(rng)
        cfg = TrainConfig(max_epochs=12, warmup_epochs=2, patience=30,
                          batch=32, seed=0, lr_max=2e-3, augment=False,
                          mixup_alpha=0.0)
        model = build_model(TINY_MODEL, 4, seed=0)
        train(model, epochs, None, cfg)
        data = zscore_per_sample(epochs.data)
        targets = {"phoneme": task_targets(epochs.labels, "phoneme")}
        acc = evaluate_accuracy(model, data, targets)["phoneme"]
        assert acc > 3 / 11

    def test_full_run_determinism(self, rng):
        # the determinism contract is stated for single-threaded mode
        epochs = _planted_epochs(rng, n_per_class=2, subjects=("S01",))
        cfg = TrainConfig(max_epochs=3, warmup_epochs=1, patience=30,
                          batch=16, seed=4)
        n_threads = torch.get_num_threads()
        torch.set_num_threads(1)
        try:
            losses = []
            for _ in range(2):
                model = build_model(TINY_MODEL, 4, seed=4)
                result = train(model, epochs, None, cfg)
                losses.append([rec["train_loss_total"]
                               for rec in result.history])
        finally:
            torch.set_num_threads(n_threads)
        assert losses[0] == losses[1]

    def test_gradient_clipping_contract(self, rng):
        epochs = _planted_epochs(rng, n_per_class=2, subjects=("S01",))
        model = build_model(TINY_MODEL, 4, seed=0)
        data = torch.as_tensor(zscore_per_sample(epochs.data),
                               dtype=torch.float32)
        targets = {t: torch.as_tensor(task_targets(epochs.labels, t))
                   for t in TINY_MODEL.tasks}
        out = model(data)
        loss, _ = multi_task_loss(out.logits_per_task, targets, 0.1,
                                  {t: None for t in TINY_MODEL.tasks})
        (loss * 1000).backward()                 # force a large gradient
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        total = math.sqrt(sum(float(p.grad.pow(2).sum())
                              for p in model.parameters()
                              if p.grad is not None))
        assert total <= 1.0 + 1e-6

    def test_ctc_auxiliary_loss_path(self, rng):
        epochs = _planted_epochs(rng, n_per_class=2, subjects=("S01",))
        cfg = TrainConfig(max_epochs=2, warmup_epochs=1, patience=30,
                          batch=16, seed=2, ctc_weight=0.1)
        model_cfg = ModelConfig(d_model=16, n_blocks=1, n_heads=2,
                                frontend_channels=4, head_hidden=16,
                                dropout=0.0, drop_path_max=0.0,
                                ctc_enabled=True)
        model = build_model(model_cfg, 4, seed=2)
        result = train(model, epochs, None, cfg)
        assert all(np.isfinite(rec["train_loss_total"])
                   for rec in result.history)

    def test_empty_train_rejected(self):
        es = EpochSet(data=np.zeros((0, 24, 4)), labels=(),
                      feature_kind="ERP")
        model = build_model(TINY_MODEL, 4, seed=0)
        with pytest.raises(ValueError):
            train(model, es, None, TrainConfig(max_epochs=2, warmup_epochs=1))

    def test_history_schema(self, rng):
        epochs = _planted_epochs(rng, n_per_class=2, subjects=("S01", "S02"))
        from eegphon.evaluation import subject_mask
        tr = epochs.select(subject_mask(epochs.labels, {"S01"}))
        va = epochs.select(subject_mask(epochs.labels, {"S02"}))
        cfg = TrainConfig(max_epochs=2, warmup_epochs=1, patience=30,
                          batch=16, seed=1)
        model = build_model(TINY_MODEL, 4, seed=1)
        result = train(model, tr, va, cfg)
        rec = result.history[0]
        assert {"epoch", "lr", "train_loss", "train_loss_total",
                "val_acc", "val_metric"} <= set(rec)
        assert set(rec["train_loss"]) == set(TINY_MODEL.tasks)


class TestTrainConfig:
    def test_ctc_weight_default(self):
        assert TrainConfig().ctc_weight == 0.1

    def test_warmup_bound(self):
        with pytest.raises(ValueError):
            TrainConfig(warmup_epochs=150, max_epochs=150)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_max=-1.0)
