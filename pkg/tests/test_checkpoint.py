import numpy as np
import pytest

from assertkit.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from assertkit.models import build_model, tiny_config
from assertkit.nn import no_grad


def _warm(model, rng, shape):
    """One training-mode pass so BatchNorm buffers differ from their defaults."""
    model.train()
    with no_grad():
        model(rng.standard_normal(shape))
    return model.eval()


@pytest.mark.parametrize("kind,shape", [("senet34", (3, 16, 257)), ("senet50", (2, 16, 257)),
                                        ("meanstd_resnet", (2, 21, 30)), ("dilated_resnet", (2, 16, 257)),
                                        ("afn", (2, 16, 257))])
def test_round_trip_logits_bit_exact(tmp_path, kind, shape):
    rng = np.random.default_rng(0)
    over = dict(input_dim=shape[2], seed=4)
    if kind != "meanstd_resnet":
        over["segment_frames"] = shape[1]
    model = _warm(build_model(tiny_config(kind, **over)), rng, shape)
    x = rng.standard_normal(shape).astype(np.float32)
    with no_grad():
        before = model(x).data
    save_checkpoint(tmp_path / "m.ckpt", Checkpoint.from_model(model, {"epoch": 3, "labels": ["spoof", "bonafide"]}))
    ckpt = load_checkpoint(tmp_path / "m.ckpt")
    assert ckpt.metadata == {"epoch": 3, "labels": ["spoof", "bonafide"]}
    assert ckpt.model_config == model.config
    with no_grad():
        after = ckpt.build()(x).data
    assert after.tobytes() == before.tobytes()


def test_save_is_deterministic(tmp_path):
    model = build_model(tiny_config("senet34"))
    save_checkpoint(tmp_path / "a", Checkpoint.from_model(model))
    save_checkpoint(tmp_path / "b", Checkpoint.from_model(model))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_truncated(tmp_path):
    save_checkpoint(tmp_path / "m", Checkpoint.from_model(build_model(tiny_config("senet34"))))
    (tmp_path / "m").write_bytes((tmp_path / "m").read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "m")


def test_wrong_magic(tmp_path):
    (tmp_path / "m").write_bytes(b"OTHER 1\n[data]\n")
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(tmp_path / "m")


def test_state_mismatch_rejected():
    a = Checkpoint.from_model(build_model(tiny_config("senet34")))
    b = build_model(tiny_config("senet50"))
    with pytest.raises((KeyError, ValueError)):
        b.load_state_dict(a.state)
