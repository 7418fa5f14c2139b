import hashlib
import json
import struct

import numpy as np
import pytest
import yaml

from hrkd import checkpoint
from hrkd.config import RunConfig, flag_fields
from hrkd.exceptions import ConfigurationError, DomainError, FormatError
from hrkd.optim import Adam, warmup_linear
from hrkd.tensor import Tensor
from hrkd.validation import check_domains, check_labels, check_tokens, infer_classes


# -- checkpoint ------------------------------------------------------------------------

def sample_state():
    rng = np.random.default_rng(0)
    header = {"kind": "teacher", "vocab": ["[PAD]", "é"], "nested": {"b": 1, "a": [1.5, None]}}
    arrays = {"w": rng.normal(size=(3, 2)), "scalar": np.array(2.5), "v": rng.normal(size=4)}
    return header, arrays


def test_round_trip(tmp_path):
    header, arrays = sample_state()
    path = checkpoint.save(tmp_path / "x.ckpt", header, arrays)
    h2, a2 = checkpoint.load(path)
    assert h2 == header
    assert list(a2) == list(arrays)
    for k in arrays:
        assert a2[k].shape == np.shape(arrays[k]) and np.array_equal(a2[k], arrays[k])


def test_byte_layout_matches_documentation():
    header = {"b": 1, "a": "x"}
    arrays = {"w": np.array([[1.0, 2.0]])}
    blob = checkpoint.dumps(header, arrays)
    head = b'{"a":"x","b":1}'
    expected = (
        b"HRKDCKPT"
        + struct.pack("<I", 1)
        + hashlib.sha256(head).digest()
        + struct.pack("<Q", len(head))
        + head
        + struct.pack("<I", 1)
        + struct.pack("<H", 1) + b"w"
        + struct.pack("<B", 2) + struct.pack("<2Q", 1, 2)
        + struct.pack("<2d", 1.0, 2.0)
    )
    assert blob == expected


def test_same_state_same_bytes():
    header, arrays = sample_state()
    assert checkpoint.dumps(header, arrays) == checkpoint.dumps(dict(reversed(list(header.items()))), arrays)


@pytest.mark.parametrize(
    "mutate,match",
    [
        (lambda b: b"XXXXXXXX" + b[8:], "magic"),
        (lambda b: b[:8] + struct.pack("<I", 9) + b[12:], "version"),
        (lambda b: b[:60] + bytes([b[60] ^ 1]) + b[61:], "digest"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\0", "trailing"),
    ],
)
def test_corruption_detected(mutate, match):
    blob = checkpoint.dumps(*sample_state())
    with pytest.raises(FormatError, match=match):
        checkpoint.loads(mutate(blob))


# -- config ---------------------------------------------------------------------------

def test_config_defaults_and_digest():
    a, b = RunConfig(), RunConfig()
    assert a.digest == b.digest
    assert RunConfig(seed=1).digest != a.digest
    assert a.teacher.num_layers % a.student.num_layers == 0


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"seed": 5, "student": {"num_layers": 1, "hidden": 16}, "ablations": ["no_comp_agg"]}))
    cfg = RunConfig.load(path)
    assert cfg.seed == 5 and cfg.student.hidden == 16 and cfg.ablations == ["no_comp_agg"]
    cfg2 = cfg.with_overrides({"seed": 9, "student.hidden": 8, "mode": None})
    assert cfg2.seed == 9 and cfg2.student.hidden == 8 and cfg2.mode == "hrkd"
    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps(cfg2.to_dict()))
    assert RunConfig.load(json_path) == cfg2


@pytest.mark.parametrize(
    "raw",
    [{"bogus": 1}, {"sample_rate": 0.0}, {"mode": "fancy"}, {"ablations": ["no_everything"]},
     {"teacher": {"num_layers": 3, "hidden": 64}}, {"temperature": 0}],
)
def test_config_rejects(raw):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(raw)


def test_override_unknown_key():
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides({"teacher.depth": 3})


def test_flag_fields_cover_nested_shapes():
    keys = dict(flag_fields())
    assert keys["teacher.num_layers"] is int and keys["student_lr"] is float and keys["detach_prototypes"] is bool
    assert "ablations" not in keys


# -- optimiser -----------------------------------------------------------------------------

def test_warmup_then_linear_decay():
    mult = [warmup_linear(s, 100, 0.1) for s in range(1, 101)]
    assert mult[0] == pytest.approx(0.1) and mult[9] == 1.0
    assert all(a >= b for a, b in zip(mult[9:], mult[10:]))
    assert mult[-1] == 0.0


def test_adam_matches_reference_update():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1, total_steps=10, warmup=0.1)
    m = v = np.zeros(2)
    x = p.data.copy()
    for step in range(1, 4):
        g = 2 * x
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        lr = 0.1 * warmup_linear(step, 10, 0.1)
        x = x - lr * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-14)


# -- validation -------------------------------------------------------------------------------

def test_validation_helpers():
    X = check_tokens([[2, 5, 0], [2, 1, 1]], vocab_size=6, max_len=3)
    assert X.dtype == np.int64
    with pytest.raises(DomainError):
        check_tokens([[2, 9]], vocab_size=6)
    with pytest.raises(DomainError):
        check_tokens([[2, 1, 1, 1]], max_len=3)
    d = check_domains(None, 3)
    assert d.tolist() == [0, 0, 0]
    with pytest.raises(DomainError):
        check_domains([0, 3], 2, num_domains=2)
    with pytest.raises(DomainError):
        check_labels([0, 2], np.array([0, 1]), classes_per_domain=[2, 2])
    assert infer_classes(np.array([0, 3, 1]), np.array([0, 1, 1]), 3) == [2, 4, 2]
