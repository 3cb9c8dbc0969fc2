import numpy as np
import pytest

from eca_lab.codec import (
    MASK,
    ONE,
    SEP,
    ZERO,
    InvalidPredictionError,
    Task,
    TaskConfig,
    decode_state,
    encode,
    render_tokens,
    round_trip_check,
)
from eca_lab.dataset import SplitSpec, generate_sample, generate_split

ALL_TASKS = [
    TaskConfig(Task.OS),
    TaskConfig(Task.OS, lookahead=3),
    TaskConfig(Task.OO),
    TaskConfig(Task.OSR, lookahead=1),
    TaskConfig(Task.ROS, lookahead=2),
]


@pytest.fixture(scope="module")
def sample():
    return generate_sample(2, 20, 20, 1234)


def test_layout_lengths():
    assert TaskConfig(Task.OS).sequence_length == 230
    assert TaskConfig(Task.OO, horizon=4).sequence_length == 294
    assert TaskConfig(Task.OO).target_length == 80
    assert TaskConfig(Task.OSR).target_length == 52
    assert TaskConfig(Task.ROS).sequence_length == 32 + 1 + 210 + 20


def test_os_layout(sample):
    inst = encode(sample, TaskConfig(Task.OS))
    assert len(inst.input_tokens) == 230
    assert list(inst.mask_positions) == list(range(210, 230))
    assert (inst.input_tokens[210:] == MASK).all()
    assert inst.input_tokens[20] == SEP and inst.input_tokens[209] == SEP
    assert list(inst.input_tokens[:20]) == list(sample.orbit[0].bits)
    assert list(inst.target_bits) == list(sample.orbit[10].bits)


def test_oo_layout(sample):
    inst = encode(sample, TaskConfig(Task.OO))
    assert len(inst.input_tokens) == 294 and len(inst.mask_positions) == 80
    assert [inst.input_tokens[210 + 21 * i + 20] for i in range(4)] == [SEP] * 4
    assert list(inst.target_bits) == list(np.concatenate([sample.orbit[t].bits for t in range(10, 14)]))


def test_osr_layout(sample):
    inst = encode(sample, TaskConfig(Task.OSR))
    assert len(inst.target_bits) == 52
    assert list(inst.target_bits[20:]) == list(sample.rule.outputs)
    assert inst.input_tokens[230] == SEP
    # rule bit j sits at the j-th rule mask position
    assert list(inst.mask_positions[20:]) == list(range(231, 263))


def test_ros_layout(sample):
    inst = encode(sample, TaskConfig(Task.ROS))
    assert list(inst.input_tokens[:32]) == list(sample.rule.outputs)
    assert inst.input_tokens[32] == SEP
    assert list(inst.input_tokens[33:53]) == list(sample.orbit[0].bits)
    osr = encode(sample, TaskConfig(Task.OSR))
    assert list(inst.input_tokens[:32]) == list(osr.target_bits[20:])


@pytest.mark.parametrize("config", ALL_TASKS, ids=lambda c: f"{c.task.value}-k{c.lookahead}")
def test_mask_alignment_and_hygiene(sample, config):
    inst = encode(sample, config)
    toks = inst.input_tokens
    assert len(inst.mask_positions) == len(inst.target_bits) == config.target_length
    assert np.all(np.diff(inst.mask_positions) > 0)
    assert set(np.flatnonzero(toks == MASK)) == set(inst.mask_positions)
    assert len(toks) == config.sequence_length
    # unmasked bits are exactly the visible prefix (plus the rule for ROS)
    visible = toks[toks <= ONE]
    expected = [sample.orbit[t].bits for t in range(config.prefix_len)]
    if config.task is Task.ROS:
        expected = [sample.rule.outputs] + expected
    assert list(visible) == list(np.concatenate(expected))


def test_orbit_too_short():
    s = generate_sample(2, 20, 12, 1)
    encode(s, TaskConfig(Task.OS, lookahead=1))
    with pytest.raises(ValueError):
        encode(s, TaskConfig(Task.OS, lookahead=2))
    with pytest.raises(ValueError):
        encode(s, TaskConfig(Task.OO, horizon=3))


def test_config_validation():
    with pytest.raises(ValueError):
        TaskConfig(Task.OO, lookahead=1)
    with pytest.raises(ValueError):
        TaskConfig(Task.OS, horizon=2)
    with pytest.raises(ValueError):
        TaskConfig(Task.OS, prefix_len=1)
    assert TaskConfig("OO").horizon == 4


def test_decode_state():
    cfg = TaskConfig(Task.OS)
    states, rule = decode_state([ONE, ZERO] * 10, cfg)
    assert str(states[0]) == "10" * 10 and rule is None
    with pytest.raises(InvalidPredictionError):
        decode_state([ONE] * 19 + [SEP], cfg)
    with pytest.raises(InvalidPredictionError):
        decode_state([MASK] * 20, cfg)
    with pytest.raises(ValueError):
        decode_state([ONE] * 19, cfg)


def test_decode_osr(sample):
    cfg = TaskConfig(Task.OSR)
    states, rule = decode_state(encode(sample, cfg).target_bits, cfg)
    assert states == [sample.orbit[10]] and rule == sample.rule


def test_oo_h1_equals_os_k0(sample):
    a = encode(sample, TaskConfig(Task.OO, horizon=1))
    b = encode(sample, TaskConfig(Task.OS))
    assert list(a.target_bits) == list(b.target_bits)
    assert len(a.input_tokens) == len(b.input_tokens) + 1


def test_round_trips_many():
    train, _ = generate_split(SplitSpec(train_count=200, test_count=0, master_seed=4))
    for s in train.samples():
        for cfg in ALL_TASKS:
            assert round_trip_check(s, cfg)


def test_render(sample):
    text = encode(sample, TaskConfig(Task.OS)).render()
    assert text.count("|") == 10 and text.endswith("_" * 20)
    assert render_tokens([0, 1, 2, 3]) == "01|_"
