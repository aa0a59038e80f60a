import math

import numpy as np
import pytest
import torch

from tablex.errors import ShapeError, WeightLoadError
from tablex.network import (
    BranchOutput,
    NetworkSpec,
    bilinear_kernel,
    branch_loss,
    build_network,
    image_to_tensor,
    load_checkpoint,
    predict_masks,
    save_checkpoint,
)

TINY = NetworkSpec(input_size=64, base_width=2, conv6_width=8)
MINI = NetworkSpec(input_size=32, base_width=2, conv6_width=8)


@pytest.fixture(scope="module")
def tiny_net():
    torch.manual_seed(0)
    return build_network(TINY)


class TestSpec:
    def test_input_size_divisibility(self):
        with pytest.raises(ValueError):
            NetworkSpec(input_size=100)

    def test_channel_widths(self):
        assert NetworkSpec(base_width=64).block_channels == (64, 128, 256, 512, 512)


class TestForward:
    def test_shape_contract(self, tiny_net):
        t_out, c_out = tiny_net(torch.zeros(1, 3, 64, 64))
        assert t_out.logits.shape == (1, 2, 64, 64)
        assert c_out.logits.shape == (1, 2, 64, 64)

    def test_softmax_sums_to_one(self, tiny_net):
        torch.manual_seed(1)
        t_out, c_out = tiny_net(torch.randn(2, 3, 64, 64))
        for out in (t_out, c_out):
            assert float((out.prob.sum(dim=1) - 1).abs().max().detach()) < 1e-6

    def test_untrained_output_finite(self, tiny_net):
        x = torch.randint(0, 256, (1, 3, 64, 64)).float()
        t_out, c_out = tiny_net(x)
        assert torch.isfinite(t_out.logits).all()
        assert torch.isfinite(c_out.logits).all()

    def test_bad_input_shape(self, tiny_net):
        with pytest.raises(ShapeError):
            tiny_net(torch.zeros(1, 1, 64, 64))

    def test_deterministic_with_dropout_disabled(self, tiny_net):
        tiny_net.eval()
        x = torch.randn(1, 3, 64, 64)
        a, _ = tiny_net(x)
        b, _ = tiny_net(x)
        assert torch.equal(a.logits, b.logits)


class TestBranchLoss:
    def test_perfect_prediction_loss_near_zero(self):
        logits = torch.zeros(1, 2, 4, 4)
        logits[:, 1] = 50.0  # prob(class 1) -> 1
        out = BranchOutput(logits, torch.softmax(logits, dim=1))
        loss = branch_loss(out, torch.ones(1, 4, 4))
        assert float(loss) < 1e-6

    def test_uniform_logits_ln2(self):
        logits = torch.zeros(1, 2, 4, 4)
        out = BranchOutput(logits, torch.softmax(logits, dim=1))
        loss = branch_loss(out, torch.zeros(1, 4, 4))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_single_pixel_prob_09(self):
        # logit difference ln(9) gives prob 0.9 on the correct class
        logits = torch.zeros(1, 2, 1, 1)
        logits[0, 1, 0, 0] = math.log(9.0)
        out = BranchOutput(logits, torch.softmax(logits, dim=1))
        loss = branch_loss(out, torch.ones(1, 1, 1))
        assert float(loss) == pytest.approx(-math.log(0.9), abs=1e-6)

    def test_shape_mismatch(self, tiny_net):
        out, _ = tiny_net(torch.zeros(1, 3, 64, 64))
        with pytest.raises(ShapeError):
            branch_loss(out, torch.zeros(1, 32, 32))


class TestGradients:
    def _fresh(self):
        torch.manual_seed(2)
        net = build_network(MINI)
        net.eval()
        return net

    def test_table_backward_reaches_encoder_not_column_decoder(self):
        net = self._fresh()
        t_out, _ = net(torch.randn(1, 3, 32, 32))
        branch_loss(t_out, torch.ones(1, 32, 32)).backward()
        assert any(
            p.grad is not None and p.grad.abs().sum() > 0
            for p in net.encoder.parameters()
        )
        assert all(
            p.grad is None or p.grad.abs().sum() == 0
            for p in net.column_branch.parameters()
        )

    def test_column_backward_reaches_encoder_not_table_decoder(self):
        net = self._fresh()
        _, c_out = net(torch.randn(1, 3, 32, 32))
        branch_loss(c_out, torch.ones(1, 32, 32)).backward()
        assert any(
            p.grad is not None and p.grad.abs().sum() > 0
            for p in net.encoder.parameters()
        )
        assert all(
            p.grad is None or p.grad.abs().sum() == 0
            for p in net.table_branch.parameters()
        )

    def test_finite_difference_on_miniature(self):
        torch.manual_seed(3)
        net = build_network(MINI).double().eval()
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 255
        target = torch.zeros(1, 32, 32)
        target[:, 8:24, 8:24] = 1

        def loss_fn():
            t_out, _ = net(x)
            return branch_loss(t_out, target)

        loss_fn().backward()
        params = [
            p for p in net.parameters()
            if p.grad is not None and p.grad.abs().sum() > 0
        ]
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = params[rng.integers(len(params))]
            idx = tuple(rng.integers(s) for s in p.shape)
            analytic = p.grad[idx].item()
            h = 1e-6 * max(1.0, abs(p.data[idx].item()))
            with torch.no_grad():
                orig = p.data[idx].item()
                p.data[idx] = orig + h
                lp = float(loss_fn())
                p.data[idx] = orig - h
                lm = float(loss_fn())
                p.data[idx] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-12)
            assert rel <= 1e-3


class TestPredictMasks:
    def test_values_in_unit_interval(self, tiny_net):
        img = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        masks = predict_masks(tiny_net, img)
        assert masks.table_prob.shape == (64, 64)
        assert 0.0 <= masks.table_prob.min() and masks.table_prob.max() <= 1.0

    def test_black_image_finite(self, tiny_net):
        masks = predict_masks(tiny_net, np.zeros((64, 64, 3), dtype=np.uint8))
        assert np.isfinite(masks.table_prob).all()
        assert np.isfinite(masks.column_prob).all()


class TestBilinearInit:
    def test_kernel_partition_of_unity(self):
        k = bilinear_kernel(1, 4).numpy()[0, 0]
        # stride-2 transposed conv with this kernel reproduces constants
        assert k.sum() == pytest.approx(4.0)

    def test_upsample_constant_input(self):
        net = build_network(MINI)
        up = net.table_branch.up_pool5
        x = torch.ones(1, 2, 4, 4)
        with torch.no_grad():
            y = up(x)
        inner = y[:, :, 2:-2, 2:-2]
        assert float((inner - 1).abs().max()) < 1e-6


class TestCheckpoint:
    def test_round_trip_forward_identical(self, tiny_net, tmp_path):
        tiny_net.eval()
        x = torch.randn(1, 3, 64, 64)
        before, _ = tiny_net(x)
        save_checkpoint(tiny_net, tmp_path / "ckpt")
        loaded, sidecar = load_checkpoint(tmp_path / "ckpt")
        loaded.eval()
        after, _ = loaded(x)
        assert torch.equal(before.logits, after.logits)
        assert sidecar["spec"]["input_size"] == 64

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(WeightLoadError):
            load_checkpoint(tmp_path / "nope")

    def test_pretrained_without_cache_env(self, monkeypatch):
        monkeypatch.delenv("TABLENET_CACHE", raising=False)
        with pytest.raises(WeightLoadError):
            build_network(TINY, pretrained=True)

    def test_pretrained_shape_mismatch(self, tmp_path, monkeypatch):
        other = build_network(NetworkSpec(input_size=64, base_width=4, conv6_width=8))
        state = {f"features.{i}.weight" if p.ndim == 4 else f"features.{i}.bias": p
                 for i, p in enumerate(other.encoder.parameters())}
        monkeypatch.setenv("TABLENET_CACHE", str(tmp_path))
        torch.save(state, tmp_path / "vgg19_encoder.pt")
        with pytest.raises(WeightLoadError):
            build_network(TINY, pretrained=True)

    def test_pretrained_round_trip(self, tmp_path, monkeypatch):
        torch.manual_seed(4)
        donor = build_network(TINY)
        state = dict(donor.encoder.state_dict())
        monkeypatch.setenv("TABLENET_CACHE", str(tmp_path))
        torch.save(state, tmp_path / "vgg19_encoder.pt")
        net = build_network(TINY, pretrained=True)
        donor_convs = [p for p in donor.encoder.parameters()]
        net_convs = [p for p in net.encoder.parameters()]
        assert all(torch.equal(a, b) for a, b in zip(donor_convs, net_convs))


class TestImageToTensor:
    def test_normalization_and_layout(self):
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        t = image_to_tensor(img)
        assert t.shape == (1, 3, 8, 8)
        assert float(t[0, 0, 0, 0]) == pytest.approx(-123.675)

    def test_rejects_grayscale(self):
        with pytest.raises(ShapeError):
            image_to_tensor(np.zeros((8, 8), dtype=np.uint8))
