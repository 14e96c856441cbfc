import math
import struct

import numpy as np
import pytest

from nasvit.checkpoint import (
    Checkpoint,
    expected_size,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from nasvit.config import RunConfig, TrainConfig
from nasvit.dataset import scan_directory, stratified_split
from nasvit.errors import FormatError, NonFiniteLossError
from nasvit.fusion import ModelConfig, model_forward, param_shapes
from nasvit.presets import gradcheck_model, small_image_preprocess
from nasvit.tensor import Tensor
from nasvit.training import SGD, Adam, EpochRecord, init_params, render_history, snapshot, train


def tiny_run(epochs=2, seed=0, **train_kw):
    return RunConfig(
        model=gradcheck_model(),
        preprocess=small_image_preprocess(),
        train=TrainConfig(epochs=epochs, batch_size=8, seed=seed, **train_kw),
    )


@pytest.fixture
def manifest(small_texture_root):
    return stratified_split(scan_directory(small_texture_root), seed=0)


class TestInit:
    def test_deterministic(self):
        a, b = init_params(gradcheck_model(), seed=3), init_params(gradcheck_model(), seed=3)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_seed_changes_weights(self):
        a, b = init_params(gradcheck_model(), seed=3), init_params(gradcheck_model(), seed=4)
        assert not np.array_equal(a["head.fc1.weight"].data, b["head.fc1.weight"].data)

    def test_biases_zero_scales_one(self):
        p = init_params(ModelConfig())
        for k, v in p.items():
            if k.endswith((".bias", ".beta")):
                assert np.all(v.data == 0), k
            if k.endswith(".gamma"):
                assert np.all(v.data == 1), k

    def test_he_std(self):
        p = init_params(ModelConfig(), seed=0)
        checked = 0
        for k, v in p.items():
            if k.endswith(".weight") and v.data.size >= 1000:
                target = math.sqrt(2.0 / math.prod(v.shape[1:]))
                assert abs(v.data.std() / target - 1) < 0.10, k
                checked += 1
        assert checked >= 5
        assert abs(p["vit.pos"].data.std() / 0.02 - 1) < 0.10

    def test_float32(self):
        assert all(v.data.dtype == np.float32 for v in init_params(gradcheck_model()).values())

    def test_zero_model_is_uniform(self, rng):
        cfg = gradcheck_model()
        out = model_forward(Tensor(rng.random((3, 16, 16))), cfg, init_params(cfg, zero=True))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-7)


class TestOptimizers:
    def _params(self, rng):
        p = {"w": Tensor(rng.standard_normal((4, 4)).astype(np.float32), requires_grad=True)}
        p["w"].grad = rng.standard_normal((4, 4)).astype(np.float32) * 100
        return p

    def test_adam_first_step_bounded_by_lr(self, rng):
        p = self._params(rng)
        before = p["w"].data.copy()
        Adam(p, lr=0.01).step()
        step = np.abs(p["w"].data - before)
        assert np.all(step <= 0.01 * 1.0001)
        # at t=1, m_hat / sqrt(v_hat) = sign(g) up to eps
        np.testing.assert_allclose(step, 0.01, rtol=1e-4)

    def test_adam_hand_two_steps(self):
        p = {"w": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
        opt = Adam(p, lr=0.1, beta1=0.9, beta2=0.999, eps=0.0)
        g1, g2 = 2.0, -1.0
        p["w"].grad = np.array([g1], dtype=np.float32)
        opt.step()
        p["w"].grad = np.array([g2], dtype=np.float32)
        opt.step()
        m = 0.9 * (0.1 * g1) + 0.1 * g2
        v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
        expected = 1.0 - 0.1 - 0.1 * (m / (1 - 0.9**2)) / math.sqrt(v / (1 - 0.999**2))
        np.testing.assert_allclose(p["w"].data, [expected], rtol=1e-5)

    @pytest.mark.parametrize("cls", [Adam, SGD])
    def test_zero_lr_is_noop(self, cls, rng):
        p = self._params(rng)
        before = p["w"].data.copy()
        cls(p, lr=0.0).step()
        assert np.array_equal(p["w"].data, before)

    def test_sgd_step(self):
        p = {"w": Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)}
        p["w"].grad = np.array([0.5, -1.0], dtype=np.float32)
        SGD(p, lr=0.1).step()
        np.testing.assert_allclose(p["w"].data, [0.95, 2.1], rtol=1e-6)


class TestTrain:
    def test_history_and_best(self, manifest):
        best, history = train(tiny_run(epochs=3), manifest)
        assert [h.epoch for h in history] == [1, 2, 3]
        f1s = [h.val_macro_f1 for h in history]
        assert best.val_metrics["macro_f1"] == max(f1s) >= f1s[-1]
        assert best.epoch == 1 + f1s.index(max(f1s))
        assert all(math.isfinite(h.train_loss) and math.isfinite(h.val_loss) for h in history)

    def test_deterministic(self, manifest):
        a_best, a_hist = train(tiny_run(), manifest)
        b_best, b_hist = train(tiny_run(), manifest)
        assert render_history(a_hist) == render_history(b_hist)
        assert to_bytes(a_best) == to_bytes(b_best)

    def test_zero_learning_rate_keeps_init(self, manifest):
        run = tiny_run(epochs=1, learning_rate=0.0)
        best, _ = train(run, manifest)
        init = init_params(run.model, run.train.seed)
        assert all(np.array_equal(best.params[k], init[k].data) for k in init)

    def test_non_finite_loss(self, manifest):
        run = tiny_run(epochs=1)
        params = init_params(run.model)
        params["head.fc2.bias"].data[:] = np.nan
        with pytest.raises(NonFiniteLossError, match="epoch 1"):
            train(run, manifest, params=params)

    def test_render_history(self):
        text = render_history([EpochRecord(1, 1.5, 1.25, 0.4, 0.3333333)])
        assert text == "epoch,train_loss,val_loss,val_accuracy,val_macro_f1\n1,1.500000,1.250000,0.400000,0.333333\n"


class TestCheckpoint:
    @pytest.fixture
    def ckpt(self):
        run = tiny_run()
        return Checkpoint(snapshot(init_params(run.model, seed=7)), run, epoch=4, val_metrics={"macro_f1": 0.5})

    def test_round_trip_predictions(self, ckpt, tmp_path, rng):
        save_checkpoint(ckpt, tmp_path / "m.nvit")
        back = load_checkpoint(tmp_path / "m.nvit")
        assert back.epoch == 4 and back.val_metrics == {"macro_f1": 0.5}
        assert back.run_config == ckpt.run_config
        x = Tensor(rng.random((2, 3, 16, 16)))
        cfg = ckpt.run_config.model
        a = model_forward(x, cfg, {k: Tensor(v) for k, v in ckpt.params.items()}).data
        b = model_forward(x, cfg, back.tensors()).data
        assert np.array_equal(a, b)

    def test_header(self, ckpt):
        buf = to_bytes(ckpt)
        assert buf[:4] == b"NVIT"
        assert struct.unpack("<I", buf[4:8]) == (1,)

    def test_size_formula_default_model(self):
        run = RunConfig()
        c = Checkpoint(snapshot(init_params(run.model)), run)
        buf = to_bytes(c)
        # independent tally: magic, version, config length, config, count, then per-tensor records
        block_len = struct.unpack("<I", buf[8:12])[0]
        tally = 4 + 4 + 4 + block_len + 4
        for name, shape in param_shapes(run.model).items():
            tally += 2 + len(name) + 1 + 4 * len(shape) + 4 * math.prod(shape)
        assert len(buf) == tally == expected_size(c)

    def test_truncated(self, ckpt):
        buf = to_bytes(ckpt)
        # the last record is head.fc2.bias: five f32 values starting 20 bytes before the end
        with pytest.raises(FormatError, match=f"truncated.*head.fc2.bias at offset {len(buf) - 20}"):
            from_bytes(buf[:-3])

    @pytest.mark.parametrize("cut", [2, 6, 10, 30])
    def test_truncated_early(self, ckpt, cut):
        with pytest.raises(FormatError, match="offset"):
            from_bytes(to_bytes(ckpt)[:cut])

    def test_bad_magic(self, ckpt):
        with pytest.raises(FormatError, match="magic at offset 0"):
            from_bytes(b"XVIT" + to_bytes(ckpt)[4:])

    def test_bad_version(self, ckpt):
        buf = to_bytes(ckpt)
        with pytest.raises(FormatError, match="version 2 at offset 4"):
            from_bytes(buf[:4] + struct.pack("<I", 2) + buf[8:])

    def test_trailing_bytes(self, ckpt):
        buf = to_bytes(ckpt)
        with pytest.raises(FormatError, match=f"3 trailing bytes at offset {len(buf)}"):
            from_bytes(buf + b"abc")

    def test_shape_mismatch_names_tensor(self, ckpt):
        params = dict(ckpt.params)
        params["head.fc2.bias"] = np.zeros(6, dtype=np.float32)
        with pytest.raises(FormatError, match="head.fc2.bias"):
            from_bytes(to_bytes(Checkpoint(params, ckpt.run_config)))
