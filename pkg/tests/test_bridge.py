"""Wire protocol, child transport, and failure containment for the bridge."""
import json
import math
import os
import struct
import sys
import threading
from pathlib import Path
from random import Random

import pytest

from nebula.bridge import (
    DEFAULT_TIMEOUT_S,
    FRAME_ACT,
    FRAME_BYE,
    FRAME_ERR,
    FRAME_HELLO,
    FRAME_OBS,
    FRAME_RESET,
    PROTOCOL_VERSION,
    BridgePolicy,
    ByteChannel,
    SessionSummary,
    decode_action,
    decode_observation,
    encode_action,
    encode_observation,
    read_frame,
    serve_policy_session,
    write_frame,
)
from nebula.capability import run_capability_suite
from nebula.episode import CAMERA_IDS, MODALITIES, MODALITY_STRIDE, Action, Image, Observation
from nebula.errors import (
    BridgeDisconnected,
    BridgeTimeout,
    MalformedAction,
    ProtocolViolation,
)
from nebula.policies import ZeroPolicy
from nebula.runner import RunConfig, rollout
from nebula.stress import profile_resources
from nebula.taskgen import DESK_ARM, criterion_for, generate_task

CHILD = str(Path(__file__).parent / "children" / "bridge_child.py")
GOLDEN = Path(__file__).parent / "golden"


def channel_pair():
    """Bidirectional pipe pair: (harness end, child end)."""
    h2c_r, h2c_w = os.pipe()
    c2h_r, c2h_w = os.pipe()
    return ByteChannel(c2h_r, h2c_w), ByteChannel(h2c_r, c2h_w)


def synth_observation(dof=6, width=2, height=2, t=3, wall_time=0.15):
    views = {}
    for ci, camera_id in enumerate(CAMERA_IDS):
        for mi, modality in enumerate(MODALITIES):
            nbytes = width * height * MODALITY_STRIDE[modality]
            data = bytes((ci * 31 + mi * 7 + k) % 256 for k in range(nbytes))
            views[(camera_id, modality)] = Image(width, height, modality, data)
    q = tuple(i / 10 for i in range(dof))
    return Observation(views=views, q=q, q_dot=(0.0,) * dof, t=t, wall_time=wall_time)


def canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def frame_bytes(ftype: int, payload: bytes = b"") -> bytes:
    return struct.pack("<IB", len(payload) + 1, ftype) + payload


def bridge_argv(*extra):
    return [sys.executable, CHILD, *extra]


def expert_task(seed=0):
    spec, scene = generate_task("Control", "Easy", 1, seed)
    return spec, scene, criterion_for(spec)


def small_config(**overrides):
    return RunConfig(**{"max_steps": 25, "image_width": 16, "image_height": 16, **overrides})


# ---------------------------------------------------------------------------
# Framing.


def test_frame_roundtrip_over_pipe():
    a, b = channel_pair()
    write_frame(a, FRAME_RESET, b'{"instruction": "x"}')
    ftype, payload = read_frame(b, timeout_s=2.0)
    assert (ftype, payload) == (FRAME_RESET, b'{"instruction": "x"}')
    a.close()
    b.close()


def test_frame_rejects_unknown_type():
    a, b = channel_pair()
    a.write(struct.pack("<IB", 1, 42))
    with pytest.raises(ProtocolViolation):
        read_frame(b, timeout_s=2.0)
    a.close()
    b.close()


def test_frame_rejects_bad_lengths():
    for length in (0, 2**31):
        a, b = channel_pair()
        a.write(struct.pack("<IB", length, FRAME_BYE))
        with pytest.raises(ProtocolViolation):
            read_frame(b, timeout_s=2.0)
        a.close()
        b.close()


def test_fuzzed_prefixes_only_raise_bridge_errors():
    # The reader must survive arbitrary garbage: wrong lengths, junk types,
    # truncated payloads. Anything other than a protocol or transport error
    # would crash the evaluating process instead of failing one episode.
    rng = Random(0)
    for _ in range(200):
        a, b = channel_pair()
        junk = bytes(rng.randrange(256) for _ in range(rng.randrange(64)))
        a.write(junk)
        os.close(a._write_fd)  # EOF so short junk cannot block the read
        try:
            while True:
                read_frame(b, timeout_s=0.5)
        except (ProtocolViolation, BridgeDisconnected, BridgeTimeout):
            pass
        os.close(a._read_fd)
        b.close()


# ---------------------------------------------------------------------------
# Payload codecs.


def test_observation_roundtrip():
    obs = synth_observation()
    back = decode_observation(encode_observation(obs))
    assert back.q == obs.q
    assert back.q_dot == obs.q_dot
    assert back.t == obs.t
    assert back.wall_time == obs.wall_time
    assert set(back.views) == set(obs.views)
    for key, img in obs.views.items():
        assert back.views[key].data == img.data
        assert back.views[key].width == img.width


def test_observation_rejects_size_mismatch():
    payload = encode_observation(synth_observation())
    with pytest.raises(ProtocolViolation):
        decode_observation(payload[:-8])
    (header_len,) = struct.unpack_from("<I", payload)
    inflated = struct.pack("<I", len(payload) + 100) + payload[4:]
    with pytest.raises(ProtocolViolation):
        decode_observation(inflated)
    assert header_len > 0


def test_observation_rejects_wrong_blob_stride():
    obs = synth_observation()
    payload = bytearray(encode_observation(obs))
    (header_len,) = struct.unpack_from("<I", payload)
    header = json.loads(bytes(payload[4:4 + header_len]))
    header["cameras"][0]["width"] = 5  # no longer matches the raw blob size
    reheader = canon(header)
    with pytest.raises(ProtocolViolation):
        decode_observation(struct.pack("<I", len(reheader)) + reheader
                           + bytes(payload[4 + header_len:]))


def test_action_roundtrip():
    action = Action(values=(0.5, -1.0, 0.0, 1.0, 0.25, -0.125, 0.75))
    assert decode_action(encode_action(action), dof=6) == action


@pytest.mark.parametrize("payload", [
    b"not json at all",
    b"[0, 0, 0, 0, 0, 0, 0]",
    b'{"values": "zeros"}',
    b'{"values": [0.25]}',
    b'{"values": [0, 0, 0, 0, 0, 0, 0, 0]}',
    b'{"values": [0, 0, 0, 0, 0, 0, NaN]}',
    b'{"values": [0, 0, 0, 0, 0, 0, 1.5]}',
    b'{"values": [0, 0, 0, 0, 0, 0, true]}',
])
def test_malformed_actions_rejected(payload):
    with pytest.raises(MalformedAction):
        decode_action(payload, dof=6)


# ---------------------------------------------------------------------------
# Child-side session loop, run in-process over pipes.


def start_session(policy):
    harness, child = channel_pair()
    box: list[SessionSummary] = []
    thread = threading.Thread(
        target=lambda: box.append(serve_policy_session(child, policy, timeout_s=10.0)))
    thread.start()
    return harness, child, thread, box


def hello_payload(version=PROTOCOL_VERSION):
    return canon({"protocol_version": version, "embodiment": {
        "robot_id": DESK_ARM.robot_id, "dof": DESK_ARM.dof,
        "gripper": DESK_ARM.gripper, "arm_count": DESK_ARM.arm_count,
        "joint_limits": [list(p) for p in DESK_ARM.joint_limits]}})


def test_serve_session_happy_path():
    harness, child, thread, box = start_session(ZeroPolicy())
    write_frame(harness, FRAME_HELLO, hello_payload())
    ftype, payload = read_frame(harness, 5.0)
    reply = json.loads(payload)
    assert ftype == FRAME_HELLO
    assert reply["protocol_version"] == PROTOCOL_VERSION
    assert reply["policy_id"] == "zero"
    assert reply["dof"] == 6
    write_frame(harness, FRAME_RESET, canon({"instruction": "Hold still.", "episode": 1}))
    for t in range(3):
        write_frame(harness, FRAME_OBS, encode_observation(synth_observation(t=t)))
        ftype, payload = read_frame(harness, 5.0)
        assert ftype == FRAME_ACT
        assert decode_action(payload, dof=6).values == (0.0,) * 7
    write_frame(harness, FRAME_BYE)
    assert read_frame(harness, 5.0)[0] == FRAME_BYE
    thread.join(timeout=5.0)
    assert box[0] == SessionSummary(resets=1, actions=3, completed=True, error=None)
    harness.close()
    child.close()


def test_serve_session_rejects_obs_before_reset():
    harness, child, thread, box = start_session(ZeroPolicy())
    write_frame(harness, FRAME_HELLO, hello_payload())
    read_frame(harness, 5.0)
    write_frame(harness, FRAME_OBS, encode_observation(synth_observation()))
    ftype, payload = read_frame(harness, 5.0)
    thread.join(timeout=5.0)
    assert ftype == FRAME_ERR
    assert json.loads(payload)["error"] == "ProtocolViolation"
    assert box[0].error is not None
    assert not box[0].completed
    harness.close()
    child.close()


def test_serve_session_rejects_version_mismatch():
    harness, child, thread, box = start_session(ZeroPolicy())
    write_frame(harness, FRAME_HELLO, hello_payload(version=2))
    ftype, payload = read_frame(harness, 5.0)
    thread.join(timeout=5.0)
    assert ftype == FRAME_ERR
    assert "version" in json.loads(payload)["detail"]
    assert box[0].error is not None
    harness.close()
    child.close()


def test_serve_session_survives_disconnect():
    harness, child, thread, box = start_session(ZeroPolicy())
    write_frame(harness, FRAME_HELLO, hello_payload())
    read_frame(harness, 5.0)
    os.close(harness._write_fd)
    thread.join(timeout=5.0)
    assert "BridgeDisconnected" in box[0].error
    os.close(harness._read_fd)
    child.close()


# ---------------------------------------------------------------------------
# Harness side over a real child process.


def test_bridge_policy_runs_episodes_over_subprocess():
    policy = BridgePolicy(bridge_argv("--mode", "sized"))
    try:
        for seed in (0, 1):  # second episode reuses the same child
            spec, scene, criterion = expert_task(seed)
            result = rollout(policy, scene, criterion, spec.instruction, small_config())
            assert result.failure is None
            assert result.steps_taken == 25
            assert all(a.values == (0.0,) * 7 for a in result.actions)
        assert policy.policy_id == "sized-zero"
        assert policy.artifact_bytes == 123456789
        assert policy.accelerator_mem_bytes == 2048
    finally:
        policy.close()


def test_bridge_policy_resources_pass_through():
    policy = BridgePolicy(bridge_argv("--mode", "sized"))
    try:
        record = profile_resources(policy)
        assert record.resources["policy_artifact_bytes"] == 123456789
        assert record.resources["accelerator_mem_bytes"] == 2048
    finally:
        policy.close()


def test_malformed_act_fails_episode_with_err():
    policy = BridgePolicy(bridge_argv("--mode", "bad-act"))
    try:
        spec, scene, criterion = expert_task()
        result = rollout(policy, scene, criterion, spec.instruction, small_config())
        assert result.final_success == 0
        assert "MalformedAction" in result.failure
        assert "7" in result.failure  # embodiment wants dof+1 values
    finally:
        policy.close()


def test_version_mismatch_fails_handshake():
    policy = BridgePolicy(bridge_argv("--mode", "bad-version"))
    try:
        spec, scene, criterion = expert_task()
        result = rollout(policy, scene, criterion, spec.instruction, small_config())
        assert result.final_success == 0
        assert "ProtocolViolation" in result.failure
    finally:
        policy.close()


def test_stalled_child_times_out():
    policy = BridgePolicy(bridge_argv("--mode", "stall"), timeout_s=0.5)
    try:
        spec, scene, criterion = expert_task()
        result = rollout(policy, scene, criterion, spec.instruction, small_config())
        assert result.final_success == 0
        assert "BridgeTimeout" in result.failure
    finally:
        policy.close()


def test_killed_child_fails_episode_and_suite_continues():
    def factory():
        return BridgePolicy(bridge_argv("--mode", "die-after", "--acts", "5"))

    policy = factory()
    try:
        spec, scene, criterion = expert_task()
        result = rollout(policy, scene, criterion, spec.instruction, small_config())
        assert result.final_success == 0
        assert "BridgeDisconnected" in result.failure
        assert result.steps_taken == 5
    finally:
        policy.close()

    report = run_capability_suite(
        factory, families=("Control",), tiers=("Easy",), episodes_per_task=1, seed=0)
    for row in report.results:
        assert row.successes == 0
        assert any("BridgeDisconnected" in f for f in row.failures)


def test_default_timeout_matches_contract():
    assert DEFAULT_TIMEOUT_S == 5.0
    assert math.isclose(BridgePolicy(["true"]).timeout_s, 5.0)


# ---------------------------------------------------------------------------
# Golden transcript: the wire bytes for a fixed session are frozen.


def golden_session() -> tuple[bytes, bytes]:
    to_child = b"".join([
        frame_bytes(FRAME_HELLO, hello_payload()),
        frame_bytes(FRAME_RESET, canon({"episode": 1, "instruction": "Touch the marker."})),
        frame_bytes(FRAME_OBS, encode_observation(synth_observation())),
        frame_bytes(FRAME_BYE),
    ])
    from_child = b"".join([
        frame_bytes(FRAME_HELLO, canon({
            "dof": 6, "policy_id": "golden", "protocol_version": PROTOCOL_VERSION})),
        frame_bytes(FRAME_ACT, encode_action(Action(values=(0.0,) * 7))),
        frame_bytes(FRAME_BYE),
    ])
    return to_child, from_child


def test_golden_transcript_unchanged():
    to_child, from_child = golden_session()
    assert to_child == bytes.fromhex((GOLDEN / "bridge_to_child.hex").read_text().strip())
    assert from_child == bytes.fromhex((GOLDEN / "bridge_from_child.hex").read_text().strip())


def test_golden_transcript_replays_through_server():
    to_child, _ = golden_session()
    harness, child, thread, box = start_session(ZeroPolicy())
    harness.write(to_child)
    replies = [read_frame(harness, 5.0) for _ in range(3)]
    thread.join(timeout=5.0)
    assert [f for f, _ in replies] == [FRAME_HELLO, FRAME_ACT, FRAME_BYE]
    assert box[0].completed
    harness.close()
    child.close()
