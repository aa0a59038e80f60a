import json

import pytest
import torch

from tablex.errors import ConfigError, TrainingDiverged
from tablex.network import NetworkSpec, build_network, load_checkpoint
from tablex.trainer import (
    COLUMN,
    TABLE,
    BatchSource,
    Phase,
    TrainConfig,
    Trainer,
    finetune,
    pixel_f1,
    run_schedule,
    _ready_to_switch,
    TrainState,
)

SPEC = NetworkSpec(input_size=32, base_width=2, conv6_width=8)


def make_tuples(n=4, size=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    tuples = []
    for _ in range(n):
        img = torch.rand(3, size, size, generator=g) * 255 - 128
        tmask = torch.zeros(size, size, dtype=torch.int64)
        tmask[8:24, 4:28] = 1
        cmask = torch.zeros(size, size, dtype=torch.int64)
        cmask[8:24, 4:14] = 1
        cmask[8:24, 18:28] = 1
        tuples.append((img, tmask, cmask))
    return tuples


@pytest.fixture
def net():
    torch.manual_seed(0)
    return build_network(SPEC)


@pytest.fixture
def source():
    return BatchSource(make_tuples(), batch_size=2, seed=0)


class TestTrainConfig:
    def test_defaults_match_published_recipe(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 2
        assert cfg.learning_rate == 1e-4
        assert cfg.adam_params() == {"lr": 1e-4, "betas": (0.9, 0.999), "eps": 1e-8}
        assert cfg.total_iterations == 5000
        assert cfg.finetune_iterations == 3000
        assert (cfg.phase1_table_steps, cfg.phase1_column_steps) == (2, 1)

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)


class TestTrainStep:
    def test_column_step_leaves_table_decoder_untouched(self, net, source):
        trainer = Trainer(net, TrainConfig())
        before = [p.detach().clone() for p in net.table_branch.parameters()]
        trainer.train_step(source.next_batch(), COLUMN)
        after = list(net.table_branch.parameters())
        assert all(torch.equal(a, b) for a, b in zip(before, after))

    def test_table_step_moves_encoder_and_table_decoder(self, net, source):
        trainer = Trainer(net, TrainConfig())
        enc_before = [p.detach().clone() for p in net.encoder.parameters()]
        dec_before = [p.detach().clone() for p in net.table_branch.parameters()]
        trainer.train_step(source.next_batch(), TABLE)
        assert any(
            not torch.equal(a, b)
            for a, b in zip(enc_before, net.encoder.parameters())
        )
        assert any(
            not torch.equal(a, b)
            for a, b in zip(dec_before, net.table_branch.parameters())
        )

    def test_overfit_loss_decreases(self, net):
        torch.manual_seed(1)
        single = BatchSource(make_tuples(n=1), batch_size=1, seed=0)
        trainer = Trainer(net, TrainConfig(batch_size=1))
        first = trainer.train_step(single.next_batch(), TABLE)
        last = None
        for _ in range(199):
            last = trainer.train_step(single.next_batch(), TABLE)
        assert last < first

    def test_divergence_raises(self, net, source):
        cfg = TrainConfig(learning_rate=10.0)
        trainer = Trainer(net, cfg)
        with pytest.raises(TrainingDiverged):
            for _ in range(200):
                trainer.train_step(source.next_batch(), TABLE)


class TestSchedule:
    def test_smoke_run_emits_checkpoint(self, net, source, tmp_path):
        cfg = TrainConfig(total_iterations=30, phase_switch_iteration=10, validate_every=10)
        state = run_schedule(net, source, cfg, checkpoint_dir=tmp_path / "ck",
                             log_path=tmp_path / "log.jsonl")
        assert state.iteration == 30
        assert len(state.checkpoint_lineage) >= 1
        assert (tmp_path / "ck" / "final" / "weights.pt").exists()
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        records = [json.loads(l) for l in lines]
        assert all({"iter", "branch", "loss", "phase"} <= set(r) for r in records
                   if "branch" in r)

    def test_phase1_ratio_two_to_one(self, net, source, tmp_path):
        # stays in phase 1 (switch needs a 100-iteration loss history)
        cfg = TrainConfig(total_iterations=30, phase_switch_iteration=1000,
                          validate_every=100)
        state = run_schedule(net, source, cfg, checkpoint_dir=tmp_path / "ck")
        assert state.phase == Phase.RATIO_2_1
        assert state.stuck_in_phase1
        assert abs(state.table_steps - 2 * state.column_steps) <= 1

    def test_phase_switch_requires_comparable_and_decreasing(self):
        cfg = TrainConfig(phase_switch_iteration=100)
        state = TrainState(iteration=200)
        # column loss stuck at 5x the table loss: never switch
        state.table_losses = [0.1] * 200
        state.column_losses = [0.5] * 200
        assert not _ready_to_switch(state, cfg)
        # comparable but table loss flat: still no switch
        state.column_losses = [0.11] * 200
        assert not _ready_to_switch(state, cfg)
        # comparable and decreasing: switch
        state.table_losses = [0.2 - 0.001 * i for i in range(200)]
        state.column_losses = list(state.table_losses)
        assert _ready_to_switch(state, cfg)

    def test_phase_switch_not_before_min_iteration(self):
        cfg = TrainConfig(phase_switch_iteration=500)
        state = TrainState(iteration=499)
        state.table_losses = [0.2 - 0.001 * i for i in range(200)]
        state.column_losses = list(state.table_losses)
        assert not _ready_to_switch(state, cfg)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            BatchSource([], batch_size=2, seed=0)


class TestFinetune:
    def test_zero_iterations_identity(self, net, source, tmp_path):
        before = {k: v.clone() for k, v in net.state_dict().items()}
        cfg = TrainConfig(finetune_iterations=0)
        finetune(net, source, cfg, checkpoint_dir=tmp_path / "ft")
        after = net.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_lineage_chain(self, net, source, tmp_path):
        cfg = TrainConfig(total_iterations=6, phase_switch_iteration=100,
                          validate_every=100)
        state = run_schedule(net, source, cfg, checkpoint_dir=tmp_path / "train")
        parent = state.checkpoint_lineage[-1]
        loaded, _ = load_checkpoint(parent)
        ft_cfg = TrainConfig(finetune_iterations=4)
        ft_state = finetune(loaded, source, ft_cfg, checkpoint_dir=tmp_path / "ft",
                            parent_checkpoint=parent)
        assert ft_state.phase == Phase.RATIO_1_1
        assert ft_state.checkpoint_lineage[0] == parent
        assert len(ft_state.checkpoint_lineage) == 2

    def test_stability_on_same_data(self, net, tmp_path):
        torch.manual_seed(5)
        tuples = make_tuples(n=2)
        source = BatchSource(tuples, batch_size=2, seed=0)
        cfg = TrainConfig(total_iterations=60, phase_switch_iteration=1000,
                          validate_every=100)
        run_schedule(net, source, cfg, checkpoint_dir=tmp_path / "train")
        tail = sum(net_losses(net, tuples)) / len(tuples)
        ft_cfg = TrainConfig(finetune_iterations=40)
        finetune(net, BatchSource(tuples, 2, 1), ft_cfg, checkpoint_dir=tmp_path / "ft")
        after = sum(net_losses(net, tuples)) / len(tuples)
        assert after <= tail * 1.10


def net_losses(net, tuples):
    from tablex.network import branch_loss

    net.eval()
    losses = []
    with torch.no_grad():
        for img, tmask, _ in tuples:
            t_out, _ = net(img.unsqueeze(0))
            losses.append(float(branch_loss(t_out, tmask.unsqueeze(0))))
    return losses


class TestPixelF1:
    def test_perfect(self):
        import numpy as np

        mask = np.zeros((8, 8))
        mask[2:6, 2:6] = 1
        assert pixel_f1(mask, mask, 0.99) == 1.0

    def test_empty_truth_empty_pred(self):
        import numpy as np

        assert pixel_f1(np.zeros((4, 4)), np.zeros((4, 4)), 0.99) == 1.0

    def test_half_recall(self):
        import numpy as np

        truth = np.zeros((4, 4))
        truth[:2] = 1
        pred = np.zeros((4, 4))
        pred[0] = 1
        # precision 1, recall 0.5 -> F1 = 2/3
        assert pixel_f1(pred, truth, 0.99) == pytest.approx(2 / 3)
