"""Framed wire protocol for evaluating external policies over stdio.

Frames are a u32 little-endian length (covering everything after itself), a
u8 frame type, and a payload. HELLO, RESET, ACT, and ERR payloads are UTF-8
JSON; OBS is binary: a u32-prefixed JSON header describing the camera grid,
the raw image payloads in header order, then q and q_dot as 64-bit floats.

A session is HELLO -> (RESET -> (OBS -> ACT)*)* -> BYE with exactly one ACT
per OBS. The harness side lives in BridgePolicy, which spawns the child
process and satisfies the normal Policy contract; serve_policy_session is
the child-side loop used by the bundled reference children (and mirrored by
clients in other languages). Either side answers a malformed frame with ERR
and aborts the session; a dead transport surfaces as BridgeDisconnected and
a silent one as BridgeTimeout, both of which the episode runner records as
per-episode failures rather than crashes.
"""
from __future__ import annotations

import json
import math
import os
import select
import struct
import subprocess
import sys
import time
from dataclasses import dataclass

from .episode import CAMERA_IDS, MODALITIES, Action, EmbodimentConfig, Image, Observation
from .errors import (
    BridgeDisconnected,
    BridgeTimeout,
    EmbodimentMismatch,
    MalformedAction,
    ProtocolViolation,
)
from .policies import Policy

PROTOCOL_VERSION = 1

FRAME_HELLO = 1
FRAME_RESET = 2
FRAME_OBS = 3
FRAME_ACT = 4
FRAME_ERR = 5
FRAME_BYE = 6
FRAME_NAMES = {
    FRAME_HELLO: "HELLO",
    FRAME_RESET: "RESET",
    FRAME_OBS: "OBS",
    FRAME_ACT: "ACT",
    FRAME_ERR: "ERR",
    FRAME_BYE: "BYE",
}

MAX_FRAME_BYTES = 64 * 1024 * 1024
DEFAULT_TIMEOUT_S = 5.0


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class ByteChannel:
    """Buffered reads with an optional deadline, plain writes, over raw fds."""

    def __init__(self, read_fd: int, write_fd: int):
        self._read_fd = read_fd
        self._write_fd = write_fd
        self._buf = bytearray()

    def read_exact(self, n: int, deadline: float | None) -> bytes:
        while len(self._buf) < n:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BridgeTimeout(f"no data within deadline (wanted {n} bytes)")
                ready, _, _ = select.select([self._read_fd], [], [], remaining)
                if not ready:
                    raise BridgeTimeout(f"no data within deadline (wanted {n} bytes)")
            chunk = os.read(self._read_fd, 65536)
            if not chunk:
                raise BridgeDisconnected("stream closed by peer")
            self._buf += chunk
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def write(self, data: bytes) -> None:
        view = memoryview(data)
        while view:
            try:
                written = os.write(self._write_fd, view)
            except (BrokenPipeError, OSError) as exc:
                raise BridgeDisconnected(f"write failed: {exc}") from exc
            view = view[written:]

    def close(self) -> None:
        for fd in (self._read_fd, self._write_fd):
            try:
                os.close(fd)
            except OSError:
                pass


def stdio_channel() -> ByteChannel:
    return ByteChannel(sys.stdin.fileno(), sys.stdout.fileno())


def write_frame(channel: ByteChannel, ftype: int, payload: bytes = b"") -> None:
    channel.write(struct.pack("<IB", len(payload) + 1, ftype) + payload)


def read_frame(channel: ByteChannel, timeout_s: float | None = None) -> tuple[int, bytes]:
    deadline = time.monotonic() + timeout_s if timeout_s is not None else None
    length, ftype = struct.unpack("<IB", channel.read_exact(5, deadline))
    if length < 1 or length > MAX_FRAME_BYTES:
        raise ProtocolViolation(f"frame length {length} out of range")
    if ftype not in FRAME_NAMES:
        raise ProtocolViolation(f"unknown frame type {ftype}")
    return ftype, channel.read_exact(length - 1, deadline)


# ---------------------------------------------------------------------------
# Payload codecs.


def encode_observation(obs: Observation) -> bytes:
    cameras = []
    blobs = []
    for camera_id in CAMERA_IDS:
        for modality in MODALITIES:
            image = obs.views[(camera_id, modality)]
            cameras.append({
                "camera_id": camera_id,
                "modality": modality,
                "width": image.width,
                "height": image.height,
                "nbytes": len(image.data),
            })
            blobs.append(image.data)
    header = _canon_json({
        "t": obs.t,
        "wall_time": obs.wall_time,
        "dof": len(obs.q),
        "cameras": cameras,
    })
    dof = len(obs.q)
    return b"".join([
        struct.pack("<I", len(header)),
        header,
        *blobs,
        struct.pack(f"<{dof}d", *obs.q),
        struct.pack(f"<{dof}d", *obs.q_dot),
    ])


def decode_observation(payload: bytes) -> Observation:
    if len(payload) < 4:
        raise ProtocolViolation("OBS payload too short for header length")
    (header_len,) = struct.unpack_from("<I", payload)
    if 4 + header_len > len(payload):
        raise ProtocolViolation("OBS header overruns payload")
    try:
        header = json.loads(payload[4:4 + header_len])
    except ValueError as exc:
        raise ProtocolViolation(f"OBS header is not JSON: {exc}") from exc
    views = {}
    offset = 4 + header_len
    for cam in header["cameras"]:
        image = Image(width=cam["width"], height=cam["height"],
                      modality=cam["modality"],
                      data=payload[offset:offset + cam["nbytes"]])
        if len(image.data) != cam["nbytes"]:
            raise ProtocolViolation("OBS image blob truncated")
        if image.expected_nbytes() != cam["nbytes"]:
            raise ProtocolViolation(
                f"OBS blob size {cam['nbytes']} does not match "
                f"{cam['width']}x{cam['height']} {cam['modality']}")
        views[(cam["camera_id"], cam["modality"])] = image
        offset += cam["nbytes"]
    dof = header["dof"]
    tail = payload[offset:]
    if len(tail) != 2 * 8 * dof:
        raise ProtocolViolation(
            f"OBS proprioception size {len(tail)} != {2 * 8 * dof}")
    q = struct.unpack(f"<{dof}d", tail[:8 * dof])
    q_dot = struct.unpack(f"<{dof}d", tail[8 * dof:])
    return Observation(views=views, q=q, q_dot=q_dot,
                       t=header["t"], wall_time=header["wall_time"])


def encode_action(action: Action) -> bytes:
    return _canon_json({"values": list(action.values)})


def decode_action(payload: bytes, dof: int) -> Action:
    try:
        doc = json.loads(payload)
    except ValueError as exc:
        raise MalformedAction(f"ACT is not JSON: {exc}") from exc
    values = doc.get("values") if isinstance(doc, dict) else None
    if not isinstance(values, list):
        raise MalformedAction("ACT payload needs a 'values' list")
    if len(values) != dof + 1:
        raise MalformedAction(f"ACT has {len(values)} values, embodiment wants {dof + 1}")
    floats = []
    for v in values:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise MalformedAction(f"ACT value {v!r} is not a finite number")
        if not -1.0 <= v <= 1.0:
            raise MalformedAction(f"ACT value {v} outside [-1, 1]")
        floats.append(float(v))
    return Action(values=tuple(floats))


def _embodiment_doc(emb: EmbodimentConfig) -> dict:
    return {
        "robot_id": emb.robot_id,
        "dof": emb.dof,
        "gripper": emb.gripper,
        "arm_count": emb.arm_count,
        "joint_limits": [list(pair) for pair in emb.joint_limits],
    }


def _embodiment_from_doc(doc: dict) -> EmbodimentConfig:
    return EmbodimentConfig(
        robot_id=doc["robot_id"],
        dof=doc["dof"],
        gripper=doc["gripper"],
        arm_count=doc["arm_count"],
        joint_limits=tuple(tuple(pair) for pair in doc["joint_limits"]),
    )


def _err_payload(code: str, detail: str) -> bytes:
    return _canon_json({"error": code, "detail": detail})


def _send_err(channel: ByteChannel, code: str, detail: str) -> None:
    try:
        write_frame(channel, FRAME_ERR, _err_payload(code, detail))
    except (BridgeDisconnected, OSError):
        pass


# ---------------------------------------------------------------------------
# Harness side: a Policy backed by a child process.


class BridgePolicy(Policy):
    """Runs an external policy process behind the synchronous Policy contract.

    The child is spawned on first reset, once the embodiment is known, and
    greeted with HELLO; its reply supplies policy_id plus optional artifact
    and accelerator sizes for the resources probe. Transport faults raise
    bridge errors, which the runner records as episode failures.
    """

    mode = "external_bridge"
    needs_observation = True

    def __init__(self, argv, timeout_s: float = DEFAULT_TIMEOUT_S):
        super().__init__()
        self.argv = tuple(argv)
        self.timeout_s = timeout_s
        self.policy_id = "bridge"
        self.artifact_bytes = 0
        self.accelerator_mem_bytes = None
        self._proc: subprocess.Popen | None = None
        self._channel: ByteChannel | None = None
        self._episode = 0

    def _handshake(self, embodiment: EmbodimentConfig) -> None:
        self._proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self._channel = ByteChannel(
            self._proc.stdout.fileno(), self._proc.stdin.fileno())
        write_frame(self._channel, FRAME_HELLO, _canon_json({
            "protocol_version": PROTOCOL_VERSION,
            "embodiment": _embodiment_doc(embodiment),
        }))
        ftype, payload = read_frame(self._channel, self.timeout_s)
        if ftype == FRAME_ERR:
            raise ProtocolViolation(f"child rejected HELLO: {payload.decode(errors='replace')}")
        if ftype != FRAME_HELLO:
            raise ProtocolViolation(f"expected HELLO reply, got {FRAME_NAMES[ftype]}")
        try:
            reply = json.loads(payload)
        except ValueError as exc:
            raise ProtocolViolation(f"HELLO reply is not JSON: {exc}") from exc
        if reply.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolViolation(
                f"protocol version {reply.get('protocol_version')!r} != {PROTOCOL_VERSION}")
        if "dof" in reply and reply["dof"] != embodiment.dof:
            raise EmbodimentMismatch(
                f"child expects dof {reply['dof']}, harness has {embodiment.dof}")
        self.policy_id = str(reply.get("policy_id", "bridge"))
        self.artifact_bytes = int(reply.get("artifact_bytes", 0))
        self.accelerator_mem_bytes = reply.get("accelerator_mem_bytes")
        self._hello_dof = embodiment.dof

    def _on_reset(self) -> None:
        if self._proc is None:
            self._handshake(self._embodiment)
        elif self._embodiment.dof != self._hello_dof:
            raise EmbodimentMismatch(
                f"embodiment changed mid-session: dof {self._embodiment.dof} "
                f"after HELLO with {self._hello_dof}")
        self._episode += 1
        write_frame(self._channel, FRAME_RESET, _canon_json({
            "instruction": self._instruction,
            "episode": self._episode,
        }))

    def _act(self, observation) -> Action:
        if observation is None:
            raise ProtocolViolation("bridge policy requires observations")
        write_frame(self._channel, FRAME_OBS, encode_observation(observation))
        ftype, payload = read_frame(self._channel, self.timeout_s)
        if ftype == FRAME_ERR:
            raise ProtocolViolation(
                f"child error: {payload.decode(errors='replace')}")
        if ftype != FRAME_ACT:
            _send_err(self._channel, "ProtocolViolation",
                      f"expected ACT, got {FRAME_NAMES[ftype]}")
            raise ProtocolViolation(f"expected ACT, got {FRAME_NAMES[ftype]}")
        try:
            return decode_action(payload, self._embodiment.dof)
        except MalformedAction as exc:
            _send_err(self._channel, "MalformedAction", str(exc))
            raise

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            write_frame(self._channel, FRAME_BYE)
            ftype, _ = read_frame(self._channel, 1.0)
        except (BridgeDisconnected, BridgeTimeout, ProtocolViolation, OSError):
            pass
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._channel = None


# ---------------------------------------------------------------------------
# Child side: serve an in-process policy over a channel.


@dataclass
class SessionSummary:
    resets: int = 0
    actions: int = 0
    completed: bool = False
    error: str | None = None


def serve_policy_session(channel: ByteChannel, policy,
                         timeout_s: float | None = None) -> SessionSummary:
    """Drive one HELLO -> (RESET -> (OBS -> ACT)*)* -> BYE session.

    Malformed or out-of-order input gets an ERR frame and ends the session
    with summary.error set; a clean BYE sets summary.completed.
    """
    summary = SessionSummary()
    try:
        ftype, payload = read_frame(channel, timeout_s)
        if ftype != FRAME_HELLO:
            raise ProtocolViolation(f"expected HELLO, got {FRAME_NAMES[ftype]}")
        hello = json.loads(payload)
        if hello.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolViolation(
                f"unsupported protocol version {hello.get('protocol_version')!r}")
        embodiment = _embodiment_from_doc(hello["embodiment"])
        reply = {
            "protocol_version": PROTOCOL_VERSION,
            "policy_id": getattr(policy, "policy_id", "external"),
            "dof": embodiment.dof,
        }
        for key in ("artifact_bytes", "accelerator_mem_bytes"):
            value = getattr(policy, key, None)
            if value is not None:
                reply[key] = value
        write_frame(channel, FRAME_HELLO, _canon_json(reply))

        while True:
            ftype, payload = read_frame(channel, timeout_s)
            if ftype == FRAME_RESET:
                doc = json.loads(payload)
                policy.reset(doc["instruction"], embodiment)
                summary.resets += 1
            elif ftype == FRAME_OBS:
                if summary.resets == 0:
                    raise ProtocolViolation("OBS before any RESET")
                observation = decode_observation(payload)
                action = policy.act(observation)
                write_frame(channel, FRAME_ACT, encode_action(action))
                summary.actions += 1
            elif ftype == FRAME_BYE:
                write_frame(channel, FRAME_BYE)
                summary.completed = True
                return summary
            else:
                raise ProtocolViolation(
                    f"unexpected {FRAME_NAMES[ftype]} frame mid-session")
    except BridgeDisconnected as exc:
        summary.error = f"BridgeDisconnected: {exc}"
        return summary
    except (ProtocolViolation, MalformedAction, KeyError, ValueError) as exc:
        _send_err(channel, type(exc).__name__, str(exc))
        summary.error = f"{type(exc).__name__}: {exc}"
        return summary
