"""Conformance cases for the backend wire protocol.

Each case is a (name, fn) pair run against live loopback servers wrapping
the synthetic backends. Framing cases speak raw bytes; op cases compare
remote results against the in-process backends bit for bit (float32 payloads
round-trip losslessly). The same list backs both the wire test module and
the acceptance suite.
"""

import io
import json
import socket
import struct

import numpy as np

from ivos.core import FeatureMap, QueryPoint
from ivos.interaction import sample_positive_points
from ivos.segmentation import PromptTokens, _pool8
from ivos.wire import (FramingError, MAX_HEADER_BYTES, encode_message,
                       read_message)

CASES = []


def case(name):
    def wrap(fn):
        CASES.append((name, fn))
        return fn
    return wrap


class RawConn:
    """Raw socket access for byte-level framing checks."""

    def __init__(self, endpoint):
        host, _, port = endpoint[len("tcp://"):].rpartition(":")
        self.sock = socket.create_connection((host, int(port)), timeout=5)

    def send(self, data: bytes):
        self.sock.sendall(data)

    def recv_message(self):
        stream = _SockStream(self.sock)
        return read_message(stream)

    def handshake(self):
        self.send(encode_message({"op": "handshake", "protocol": 1,
                                  "role": "client"}))
        return self.recv_message()

    def request(self, header, payloads=()):
        self.send(encode_message(header, payloads))
        return self.recv_message()

    def close(self):
        self.sock.close()


class _SockStream:
    def __init__(self, sock):
        self.sock = sock

    def read(self, n):
        return self.sock.recv(n)


def _expect_error(resp, code):
    header, _ = resp
    assert header["op"] == "error", header
    assert header["code"] == code, header


# --- framing primitives -------------------------------------------------------

@case("framing/roundtrip-no-payload")
def _(env):
    msg = encode_message({"op": "ping", "x": 1})
    header, tensors = read_message(io.BytesIO(msg))
    assert header["op"] == "ping" and header["x"] == 1
    assert tensors == {}


@case("framing/roundtrip-one-tensor")
def _(env):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    msg = encode_message({"op": "data"}, [("t", arr)])
    _, tensors = read_message(io.BytesIO(msg))
    assert tensors["t"].shape == (2, 3, 4)
    assert (tensors["t"] == arr).all()


@case("framing/roundtrip-multiple-tensors")
def _(env):
    a = np.ones((4, 4), dtype=np.float32)
    b = np.full((2, 2, 2), 7.0, dtype=np.float32)
    msg = encode_message({"op": "data"}, [("a", a), ("b", b)])
    _, tensors = read_message(io.BytesIO(msg))
    assert set(tensors) == {"a", "b"}
    assert (tensors["b"] == 7.0).all()


@case("framing/float64-input-downcast-to-f32-bytes")
def _(env):
    arr = np.array([[1.5, 2.25]], dtype=np.float64)
    msg = encode_message({"op": "data"}, [("t", arr)])
    header, tensors = read_message(io.BytesIO(msg))
    assert header["payloads"][0]["dtype"] == "f32"
    assert header["payloads"][0]["nbytes"] == 8
    assert tensors["t"].dtype == np.dtype("<f4")


@case("framing/empty-shape-dimension")
def _(env):
    arr = np.zeros((0, 3), dtype=np.float32)
    msg = encode_message({"op": "data"}, [("t", arr)])
    _, tensors = read_message(io.BytesIO(msg))
    assert tensors["t"].shape == (0, 3)


@case("framing/header-length-prefix-is-little-endian")
def _(env):
    msg = encode_message({"op": "x"})
    (declared,) = struct.unpack("<I", msg[:4])
    assert declared == len(json.dumps({"op": "x", "payloads": []},
                                      sort_keys=True).encode())


@case("framing/payload-bytes-are-little-endian-f32")
def _(env):
    arr = np.array([1.0], dtype=np.float32)
    msg = encode_message({"op": "x"}, [("t", arr)])
    assert msg[-4:] == struct.pack("<f", 1.0)


@case("framing/truncated-length-prefix")
def _(env):
    try:
        read_message(io.BytesIO(b"\x01\x02"))
    except FramingError:
        return
    raise AssertionError("truncated prefix accepted")


@case("framing/zero-header-length")
def _(env):
    try:
        read_message(io.BytesIO(struct.pack("<I", 0)))
    except FramingError:
        return
    raise AssertionError("zero header accepted")


@case("framing/oversized-header-length")
def _(env):
    try:
        read_message(io.BytesIO(struct.pack("<I", MAX_HEADER_BYTES + 1)))
    except FramingError:
        return
    raise AssertionError("oversized header accepted")


@case("framing/truncated-header-body")
def _(env):
    try:
        read_message(io.BytesIO(struct.pack("<I", 100) + b"{}"))
    except FramingError:
        return
    raise AssertionError("truncated header accepted")


@case("framing/header-not-json")
def _(env):
    body = b"not json at all"
    try:
        read_message(io.BytesIO(struct.pack("<I", len(body)) + body))
    except FramingError:
        return
    raise AssertionError("non-JSON header accepted")


@case("framing/header-not-object")
def _(env):
    body = json.dumps([1, 2, 3]).encode()
    try:
        read_message(io.BytesIO(struct.pack("<I", len(body)) + body))
    except FramingError:
        return
    raise AssertionError("non-object header accepted")


@case("framing/header-missing-op")
def _(env):
    body = json.dumps({"payloads": []}).encode()
    try:
        read_message(io.BytesIO(struct.pack("<I", len(body)) + body))
    except FramingError:
        return
    raise AssertionError("op-less header accepted")


@case("framing/nbytes-shape-mismatch")
def _(env):
    body = json.dumps({"op": "x", "payloads": [
        {"name": "t", "dtype": "f32", "shape": [2, 2], "nbytes": 12}]}).encode()
    try:
        read_message(io.BytesIO(struct.pack("<I", len(body)) + body
                                + b"\x00" * 12))
    except FramingError:
        return
    raise AssertionError("nbytes mismatch accepted")


@case("framing/unsupported-dtype")
def _(env):
    body = json.dumps({"op": "x", "payloads": [
        {"name": "t", "dtype": "f64", "shape": [1], "nbytes": 8}]}).encode()
    try:
        read_message(io.BytesIO(struct.pack("<I", len(body)) + body
                                + b"\x00" * 8))
    except FramingError:
        return
    raise AssertionError("f64 payload accepted")


@case("framing/truncated-payload")
def _(env):
    arr = np.zeros(8, dtype=np.float32)
    msg = encode_message({"op": "x"}, [("t", arr)])
    try:
        read_message(io.BytesIO(msg[:-4]))
    except FramingError:
        return
    raise AssertionError("truncated payload accepted")


@case("framing/server-rejects-bad-frame-and-closes")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        body = b"broken{"
        conn.send(struct.pack("<I", len(body) + 50) + body)
        conn.sock.shutdown(socket.SHUT_WR)
        _expect_error(conn.recv_message(), "framing")
    finally:
        conn.close()


# --- handshake -----------------------------------------------------------------

@case("handshake/point-ack")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        header, _ = conn.handshake()
        assert header["op"] == "handshake_ack"
        assert header["backend"] == "point"
        assert header["protocol"] == 1
        assert header["capabilities"]["supports_occlusion"] is True
    finally:
        conn.close()


@case("handshake/box-ack")
def _(env):
    conn = RawConn(env.box_endpoint)
    try:
        header, _ = conn.handshake()
        assert header["backend"] == "box"
    finally:
        conn.close()


@case("handshake/segmenter-ack-declares-dims")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        header, _ = conn.handshake()
        assert header["backend"] == "segmenter"
        assert header["dims"] == {"channels": 8, "height": 16, "width": 16}
        assert header["capabilities"]["supports_mask_prior"] is True
    finally:
        conn.close()


@case("handshake/unsupported-protocol-version")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        resp = conn.request({"op": "handshake", "protocol": 99})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


@case("handshake/op-before-handshake-rejected")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        resp = conn.request({"op": "track", "seed_frame": 0, "frames": [0],
                             "seeds": []})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


@case("handshake/connection-usable-after-backend-error")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        conn.handshake()
        _expect_error(conn.request({"op": "nonsense"}), "backend_error")
        header, _ = conn.request({"op": "handshake", "protocol": 1})
        assert header["op"] == "handshake_ack"
    finally:
        conn.close()


# --- point tracker ops -----------------------------------------------------------

def _point_seed_docs(pts):
    return [{"x": p.x, "y": p.y, "polarity": p.polarity,
             "object_id": p.object_id} for p in pts]


def _track_case(env, seed_frame, frames):
    pts, _ = sample_positive_points(env.truth.visible_mask(1, seed_frame), 4, 1)
    conn = RawConn(env.point_endpoint)
    try:
        conn.handshake()
        header, tensors = conn.request(
            {"op": "track", "seed_frame": seed_frame, "frames": frames,
             "seeds": _point_seed_docs(pts)})
        assert header["op"] == "track_result"
        local_pos, local_occ = env.point_tracker.track(pts, seed_frame, frames)
        assert tensors["positions"].shape == (len(frames), 4, 2)
        assert (tensors["positions"]
                == np.asarray(local_pos, dtype=np.float32)).all()
        assert (tensors["occlusion"]
                == np.asarray(local_occ, dtype=np.float32)).all()
    finally:
        conn.close()


@case("track/forward-from-seed-matches-inprocess")
def _(env):
    _track_case(env, 0, list(range(0, 12)))


@case("track/backward-from-seed-matches-inprocess")
def _(env):
    _track_case(env, 10, list(range(9, -1, -1)))


@case("track/single-frame-range")
def _(env):
    _track_case(env, 4, [4])


@case("track/sparse-frame-list-served-in-order")
def _(env):
    _track_case(env, 6, [6, 8, 10, 12])


@case("track/occlusion-scores-survive-roundtrip")
def _(env):
    pts = [QueryPoint(64.0, 64.0, "positive", 2)]
    conn = RawConn(env.crossing_point_endpoint)
    try:
        conn.handshake()
        frames = list(range(0, 30))
        _, tensors = conn.request(
            {"op": "track", "seed_frame": 0, "frames": frames,
             "seeds": _point_seed_docs(pts)})
        t0, t1 = env.crossing_truth.spec.events["full_cover"]
        occ = tensors["occlusion"][:, 0]
        assert (occ[t0:min(t1 + 1, 30)] == 1.0).all()
        assert occ[0] == 0.0
    finally:
        conn.close()


@case("track/negative-polarity-seeds-accepted")
def _(env):
    pts = [QueryPoint(2.0, 2.0, "negative", 1)]
    conn = RawConn(env.point_endpoint)
    try:
        conn.handshake()
        header, tensors = conn.request(
            {"op": "track", "seed_frame": 0, "frames": [0, 1, 2],
             "seeds": _point_seed_docs(pts)})
        assert header["op"] == "track_result"
        assert tensors["positions"][0, 0, 0] == 2.0   # exact at seed frame
        assert (tensors["occlusion"][:, 0] == 0.0).all()
    finally:
        conn.close()


@case("track/box-op-on-point-backend-rejected")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "track_boxes", "seed_frame": 0,
                             "frames": [0], "seeds": []})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


@case("track/malformed-seed-is-bad-request")
def _(env):
    conn = RawConn(env.point_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "track", "seed_frame": 0, "frames": [0],
                             "seeds": [{"x": 1.0}]})
        _expect_error(resp, "bad_request")
    finally:
        conn.close()


# --- box tracker ops ---------------------------------------------------------------

def _box_seed_docs(boxes):
    return [{"object_id": b.object_id, "x_min": b.x_min, "y_min": b.y_min,
             "x_max": b.x_max, "y_max": b.y_max} for b in boxes]


@case("track-boxes/matches-inprocess")
def _(env):
    seeds = [env.truth.visible_box(1, 0), env.truth.visible_box(2, 0)]
    frames = list(range(0, 20))
    conn = RawConn(env.box_endpoint)
    try:
        conn.handshake()
        header, tensors = conn.request(
            {"op": "track_boxes", "seed_frame": 0, "frames": frames,
             "seeds": _box_seed_docs(seeds)})
        assert header["op"] == "track_boxes_result"
        local_boxes, local_conf = env.box_tracker.track(seeds, 0, frames)
        assert tensors["boxes"].shape == (20, 2, 4)
        assert (tensors["boxes"]
                == np.asarray(local_boxes, dtype=np.float32)).all()
        assert (tensors["confidence"]
                == np.asarray(local_conf, dtype=np.float32)).all()
    finally:
        conn.close()


@case("track-boxes/held-box-confidence-on-occlusion")
def _(env):
    seeds = [env.crossing_truth.visible_box(2, 0)]
    t0, _ = env.crossing_truth.spec.events["full_cover"]
    frames = list(range(0, t0 + 3))
    conn = RawConn(env.crossing_box_endpoint)
    try:
        conn.handshake()
        _, tensors = conn.request(
            {"op": "track_boxes", "seed_frame": 0, "frames": frames,
             "seeds": _box_seed_docs(seeds)})
        assert tensors["confidence"][t0, 0] == np.float32(0.1)
        assert tensors["confidence"][0, 0] == 1.0
    finally:
        conn.close()


@case("track-boxes/point-op-on-box-backend-rejected")
def _(env):
    conn = RawConn(env.box_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "track", "seed_frame": 0, "frames": [0],
                             "seeds": []})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


@case("track-boxes/degenerate-box-is-bad-request")
def _(env):
    conn = RawConn(env.box_endpoint)
    try:
        conn.handshake()
        resp = conn.request(
            {"op": "track_boxes", "seed_frame": 0, "frames": [0],
             "seeds": [{"object_id": 1, "x_min": 5.0, "y_min": 5.0,
                        "x_max": 5.0, "y_max": 9.0}]})
        _expect_error(resp, "bad_request")
    finally:
        conn.close()


# --- segmenter ops ---------------------------------------------------------------------

@case("segment/embed-returns-stable-ref")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        image = env.frames[3].astype(np.float32)
        h1, _ = conn.request({"op": "embed"}, [("image", image)])
        h2, _ = conn.request({"op": "embed"}, [("image", image)])
        assert h1["op"] == "embed_result"
        assert h1["image_ref"] == h2["image_ref"]
        assert h1["image_ref"] == env.segmenter.embed(env.frames[3])
    finally:
        conn.close()


@case("segment/embed-without-image-payload-is-error")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "embed"})
        _expect_error(resp, "bad_request")
    finally:
        conn.close()


@case("segment/embed-foreign-pixels-is-backend-error")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "embed"},
                            [("image", np.zeros((128, 128, 3), np.float32))])
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


def _decode_tokens_doc(tokens):
    return {"object_id": tokens.object_id,
            "positive": [list(p) for p in tokens.positive],
            "negative": [list(p) for p in tokens.negative],
            "box": list(tokens.box) if tokens.box else None}


def _decode_case(env, tokens, mask_prior=None, value=None):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        image = env.frames[0].astype(np.float32)
        ref = conn.request({"op": "embed"}, [("image", image)])[0]["image_ref"]
        payloads = []
        if mask_prior is not None:
            payloads.append(("mask_prior", mask_prior))
        if value is not None:
            payloads.append(("value", value.data))
        header, tensors = conn.request(
            {"op": "decode", "image_ref": ref,
             "tokens": _decode_tokens_doc(tokens)}, payloads)
        assert header["op"] == "decode_result"
        local = env.segmenter.decode(
            ref, tokens if mask_prior is None else tokens.with_prior(mask_prior),
            value)
        assert (tensors["score_map"] == local.score_map).all()
        assert (tensors["low_res_mask"] == local.low_res_mask).all()
        assert (tensors["query_key"] == local.query_key.data).all()
        assert (tensors["value"] == local.dense_value.data).all()
    finally:
        conn.close()


@case("segment/decode-points-and-box-matches-inprocess")
def _(env):
    pts, _ = sample_positive_points(env.truth.visible_mask(1, 0), 8, 1)
    b = env.truth.visible_box(1, 0)
    tokens = PromptTokens(1, tuple((p.x, p.y) for p in pts), (),
                          (b.x_min, b.y_min, b.x_max, b.y_max))
    _decode_case(env, tokens)


@case("segment/decode-with-negative-tokens")
def _(env):
    tokens = PromptTokens(1, ((44.0, 64.0),), ((5.0, 5.0), (120.0, 9.0)), None)
    _decode_case(env, tokens)


@case("segment/decode-second-object")
def _(env):
    pts, _ = sample_positive_points(env.truth.visible_mask(2, 0), 4, 2)
    tokens = PromptTokens(2, tuple((p.x, p.y) for p in pts), (), None)
    _decode_case(env, tokens)


@case("segment/decode-with-mask-prior-payload")
def _(env):
    tokens = PromptTokens(1, ((44.0, 64.0),), (), None)
    prior = np.linspace(0, 1, 256, dtype=np.float32).reshape(16, 16)
    _decode_case(env, tokens, mask_prior=prior)


@case("segment/decode-with-replacement-value-payload")
def _(env):
    tokens = PromptTokens(1, ((44.0, 64.0),), (), None)
    value = np.zeros((8, 16, 16), dtype=np.float32)
    value[0] = _pool8(env.truth.visible_mask(1, 0).astype(np.float64))
    _decode_case(env, tokens, value=FeatureMap.from_array(value))


@case("segment/decode-with-both-priors")
def _(env):
    tokens = PromptTokens(1, ((44.0, 64.0), (48.0, 60.0)), ((9.0, 9.0),),
                          None)
    prior = np.full((16, 16), 0.25, dtype=np.float32)
    value = np.zeros((8, 16, 16), dtype=np.float32)
    value[0] = 0.5
    _decode_case(env, tokens, mask_prior=prior,
                 value=FeatureMap.from_array(value))


@case("segment/decode-unknown-image-ref")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "decode", "image_ref": "synth/deadbeef",
                             "tokens": {"object_id": 1, "positive": [],
                                        "negative": [], "box": None}})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


@case("segment/track-op-on-segmenter-rejected")
def _(env):
    conn = RawConn(env.segmenter_endpoint)
    try:
        conn.handshake()
        resp = conn.request({"op": "track", "seed_frame": 0, "frames": [0],
                             "seeds": []})
        _expect_error(resp, "backend_error")
    finally:
        conn.close()


# --- remote client classes over the loopback servers ----------------------------------

@case("client/remote-point-tracker-bit-identical")
def _(env):
    from ivos.wire import RemotePointTracker
    remote = RemotePointTracker(env.point_endpoint)
    try:
        pts, _ = sample_positive_points(env.truth.visible_mask(1, 2), 6, 1)
        frames = list(range(2, 14))
        r_pos, r_occ = remote.track(pts, 2, frames)
        l_pos, l_occ = env.point_tracker.track(pts, 2, frames)
        assert (np.asarray(r_pos) == np.asarray(l_pos, dtype=np.float32)).all()
        assert (np.asarray(r_occ) == np.asarray(l_occ, dtype=np.float32)).all()
        assert remote.handle.kind == "point"
    finally:
        remote.close()


@case("client/remote-box-tracker-bit-identical")
def _(env):
    from ivos.wire import RemoteBoxTracker
    remote = RemoteBoxTracker(env.box_endpoint)
    try:
        seeds = [env.truth.visible_box(1, 0)]
        frames = list(range(0, 10))
        r_boxes, r_conf = remote.track(seeds, 0, frames)
        l_boxes, l_conf = env.box_tracker.track(seeds, 0, frames)
        assert np.allclose(np.asarray(r_boxes),
                           np.asarray(l_boxes, dtype=np.float32))
        assert np.allclose(np.asarray(r_conf),
                           np.asarray(l_conf, dtype=np.float32))
    finally:
        remote.close()


@case("client/remote-segmenter-bit-identical")
def _(env):
    from ivos.wire import RemoteSegmenter
    remote = RemoteSegmenter(env.segmenter_endpoint)
    try:
        assert (remote.handle.channels, remote.handle.feature_height) == (8, 16)
        ref = remote.embed(env.frames[1])
        pts, _ = sample_positive_points(env.truth.visible_mask(1, 1), 8, 1)
        b = env.truth.visible_box(1, 1)
        tokens = PromptTokens(1, tuple((p.x, p.y) for p in pts), (),
                              (b.x_min, b.y_min, b.x_max, b.y_max))
        r = remote.decode(ref, tokens, None)
        l = env.segmenter.decode(ref, tokens, None)
        assert (r.score_map == l.score_map).all()
        assert (r.query_key.data == l.query_key.data).all()
    finally:
        remote.close()


@case("client/remote-wrong-kind-rejected")
def _(env):
    from ivos.tracking import BackendError
    from ivos.wire import RemotePointTracker
    try:
        RemotePointTracker(env.box_endpoint)
    except BackendError:
        return
    raise AssertionError("point client accepted a box backend")
