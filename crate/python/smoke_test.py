"""Smoke test for the tfsep_py extension module.

Build and install first, for example with `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import math
import os
import tempfile

import tfsep_py as t

TINY = """
[features]
n_mels = 16

[model]
base_channels = 4
n_classes = 3
input_shape = [16, 64]

[[model.stages]]
channel_multiplier = 1.0
blocks = 1

[[model.stages]]
channel_multiplier = 2.0
blocks = 1
"""


def tone(freq, seconds=1.0, rate=32000):
    return [0.5 * math.sin(2 * math.pi * freq * i / rate) for i in range(int(seconds * rate))]


def main():
    reference = t.analyze()
    assert reference.budget_ok, reference
    assert reference.macs_per_inference <= t.MAC_BUDGET
    assert reference.int8_size_bytes <= t.SIZE_BUDGET_BYTES

    fx = t.FeatureExtractor("n_mels = 16")
    feats = fx.extract(tone(1000.0), 32000)
    assert len(feats) == fx.n_mels == 16
    assert all(len(row) == len(feats[0]) for row in feats)

    model = t.StudentModel.build(TINY, seed=3)
    assert model.input_shape == (16, 64)
    logits = model.forward(feats)
    assert len(logits) == model.n_classes == 3
    assert all(math.isfinite(z) for z in logits)
    assert model.complexity().param_count > 0
    assert "stem.freq.weight" in model.parameter_names()

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.tfsn")
        model.save(path)
        again = t.StudentModel.load(path)
        assert again.forward(feats) == logits

        q = model.quantize([feats, fx.extract(tone(3000.0), 32000)])
        assert q.size_bytes == model.complexity().int8_size_bytes
        qpath = os.path.join(tmp, "model.tfsq")
        q.save(qpath)
        assert t.QuantizedModel.load(qpath).forward(feats) == q.forward(feats)

        out = os.path.join(tmp, "analyze")
        assert t.run_cli(["analyze", "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "complexity.toml"))

    probs = t.temperature_softmax([1.0, 2.0, 3.0], 2.0)
    assert abs(sum(probs) - 1.0) < 1e-12
    total, ce, kl, grad = t.kd_loss([0.0, 1.0], [0.0, 1.0], [0.0, 1.0])
    assert abs(kl) < 1e-12 and abs(total - 0.02 * ce) < 1e-12 and len(grad) == 2

    sched = t.Sgdr(0.01, t0=10.0, tmult=2.0)
    assert sched.lr(0.0) == 0.01
    assert sched.restarts(40.0) == [10.0, 30.0]
    print("smoke test passed")


if __name__ == "__main__":
    main()
