"""Length-prefixed backend wire protocol shared by trackers and segmenters.

Every message is a 4-byte little-endian unsigned header length, the UTF-8
JSON header, then the raw tensor payloads in header order. Payloads are
little-endian float32, C-order; each descriptor in header["payloads"]
declares name, dtype, shape and nbytes, and nbytes must equal
4 * prod(shape) or the message is rejected. The first message on a
connection must be a handshake; the acknowledgement declares the backend
kind, capabilities and (for segmenters) feature dimensions. See PROTOCOL.md
for the byte-exact layout.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import FeatureMap, QueryBox, QueryPoint
from .segmentation import (DecodeResult, PromptTokens, SegmenterBackendHandle,
                           SegmenterCapabilities)
from .tracking import (BackendError, TrackerBackendHandle, TrackerCapabilities)

PROTOCOL_VERSION = 1
MAX_HEADER_BYTES = 1 << 24
_LEN = struct.Struct("<I")


class FramingError(BackendError):
    """The byte stream violates the message framing."""


def encode_message(header: dict,
                   payloads: Sequence[Tuple[str, np.ndarray]] = ()) -> bytes:
    """Serialize a header and its tensors into one framed message."""
    descriptors = []
    blobs = []
    for name, arr in payloads:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        blob = arr.tobytes()
        descriptors.append({"name": name, "dtype": "f32",
                            "shape": list(arr.shape), "nbytes": len(blob)})
        blobs.append(blob)
    full = dict(header)
    full["payloads"] = descriptors
    head = json.dumps(full, sort_keys=True).encode("utf-8")
    if len(head) > MAX_HEADER_BYTES:
        raise FramingError("header too large")
    return _LEN.pack(len(head)) + head + b"".join(blobs)


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise FramingError(f"stream ended {remaining} bytes early")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read one framed message; validates declared sizes exactly."""
    raw_len = stream.read(_LEN.size)
    if not raw_len:
        raise EOFError("connection closed")
    if len(raw_len) < _LEN.size:
        raise FramingError("truncated length prefix")
    (header_len,) = _LEN.unpack(raw_len)
    if header_len == 0 or header_len > MAX_HEADER_BYTES:
        raise FramingError(f"implausible header length {header_len}")
    try:
        header = json.loads(_read_exact(stream, header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"bad header: {exc}") from exc
    if not isinstance(header, dict) or "op" not in header:
        raise FramingError("header must be an object with an 'op' field")
    tensors: Dict[str, np.ndarray] = {}
    for desc in header.get("payloads", []):
        if desc.get("dtype") != "f32":
            raise FramingError(f"unsupported dtype {desc.get('dtype')!r}")
        shape = tuple(int(s) for s in desc["shape"])
        nbytes = int(desc["nbytes"])
        expect = 4 * int(np.prod(shape, dtype=np.int64))
        if nbytes != expect:
            raise FramingError(
                f"payload {desc.get('name')!r} declares {nbytes} bytes "
                f"but shape {shape} needs {expect}")
        blob = _read_exact(stream, nbytes)
        tensors[desc["name"]] = np.frombuffer(blob, dtype="<f4").reshape(shape)
    return header, tensors


class _SocketStream:
    """File-like adapter over a socket for the framing helpers."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def read(self, n: int) -> bytes:
        try:
            return self.sock.recv(n)
        except OSError as exc:
            raise FramingError(str(exc)) from exc

    def write(self, data: bytes):
        self.sock.sendall(data)


def _tokens_from_header(doc: dict,
                        tensors: Dict[str, np.ndarray]) -> PromptTokens:
    box = doc.get("box")
    return PromptTokens(
        object_id=int(doc["object_id"]),
        positive=tuple((float(x), float(y)) for x, y in doc.get("positive", [])),
        negative=tuple((float(x), float(y)) for x, y in doc.get("negative", [])),
        box=tuple(float(v) for v in box) if box else None,
        mask_prior=tensors.get("mask_prior"))


def _serve_request(backend, kind: str, header: dict,
                   tensors: Dict[str, np.ndarray]) -> bytes:
    op = header["op"]
    if op == "track" and kind == "point":
        seeds = [QueryPoint(float(s["x"]), float(s["y"]), s["polarity"],
                            int(s["object_id"]))
                 for s in header["seeds"]]
        frames = [int(t) for t in header["frames"]]
        pos, occ = backend.track(seeds, int(header["seed_frame"]), frames)
        return encode_message({"op": "track_result"},
                              [("positions", np.asarray(pos)),
                               ("occlusion", np.asarray(occ))])
    if op == "track_boxes" and kind == "box":
        seeds = [QueryBox(float(s["x_min"]), float(s["y_min"]),
                          float(s["x_max"]), float(s["y_max"]),
                          object_id=int(s["object_id"]))
                 for s in header["seeds"]]
        frames = [int(t) for t in header["frames"]]
        boxes, conf = backend.track(seeds, int(header["seed_frame"]), frames)
        return encode_message({"op": "track_boxes_result"},
                              [("boxes", np.asarray(boxes)),
                               ("confidence", np.asarray(conf))])
    if op == "embed" and kind == "segmenter":
        image = tensors.get("image")
        if image is None:
            raise ValueError("embed needs an 'image' payload")
        ref = backend.embed(np.clip(image, 0, 255).astype(np.uint8))
        return encode_message({"op": "embed_result", "image_ref": ref})
    if op == "decode" and kind == "segmenter":
        tokens = _tokens_from_header(header["tokens"], tensors)
        value = tensors.get("value")
        value_map = FeatureMap.from_array(value) if value is not None else None
        result = backend.decode(header["image_ref"], tokens, value_map)
        return encode_message(
            {"op": "decode_result"},
            [("low_res_mask", result.low_res_mask),
             ("query_key", result.query_key.data),
             ("value", result.dense_value.data),
             ("score_map", result.score_map)])
    raise BackendError(f"op {op!r} not supported by a {kind} backend")


def _handshake_ack(backend, kind: str) -> dict:
    ack = {"op": "handshake_ack", "protocol": PROTOCOL_VERSION, "backend": kind}
    handle = backend.handle
    if kind == "segmenter":
        caps = handle.capabilities
        ack["dims"] = {"channels": handle.channels,
                       "height": handle.feature_height,
                       "width": handle.feature_width}
        ack["capabilities"] = {
            "exports_keys_values": caps.exports_keys_values,
            "supports_mask_prior": caps.supports_mask_prior,
            "supports_iterative_refinement": caps.supports_iterative_refinement,
        }
    else:
        caps = handle.capabilities
        ack["capabilities"] = {"max_points": caps.max_points,
                               "supports_occlusion": caps.supports_occlusion}
    return ack


def serve_connection(stream, backend, kind: str):
    """Run the request loop for one connection (handshake first)."""
    shaken = False
    while True:
        try:
            header, tensors = read_message(stream)
        except EOFError:
            return
        except FramingError as exc:
            stream.write(encode_message(
                {"op": "error", "code": "framing", "message": str(exc)}))
            return
        try:
            if header["op"] == "handshake":
                if int(header.get("protocol", -1)) != PROTOCOL_VERSION:
                    raise BackendError(
                        f"unsupported protocol {header.get('protocol')!r}")
                stream.write(encode_message(_handshake_ack(backend, kind)))
                shaken = True
                continue
            if not shaken:
                raise BackendError("first message must be a handshake")
            stream.write(_serve_request(backend, kind, header, tensors))
        except BackendError as exc:
            stream.write(encode_message(
                {"op": "error", "code": "backend_error", "message": str(exc)}))
        except Exception as exc:  # payload/shape defects etc.
            stream.write(encode_message(
                {"op": "error", "code": "bad_request", "message": str(exc)}))


class WireServer:
    """Threaded TCP server exposing one in-process backend."""

    def __init__(self, backend, kind: str, host: str = "127.0.0.1",
                 port: int = 0):
        if kind not in ("point", "box", "segmenter"):
            raise ValueError(f"unknown backend kind {kind!r}")
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                serve_connection(_SocketStream(self.request), outer.backend,
                                 outer.kind)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.backend = backend
        self.kind = kind
        self._server = Server((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"tcp://{host}:{port}"

    def start(self) -> "WireServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_stdio(backend, kind: str, stdin: BinaryIO, stdout: BinaryIO):
    """Serve the protocol over a stdio-style pipe pair."""

    class _Pipe:
        def read(self, n):
            return stdin.read(n)

        def write(self, data):
            stdout.write(data)
            stdout.flush()

    serve_connection(_Pipe(), backend, kind)


class _WireClient:
    """One protocol connection; a single request in flight at a time."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._stream = _SocketStream(self._sock)
        self._lock = threading.Lock()
        self.ack = self.request({"op": "handshake",
                                 "protocol": PROTOCOL_VERSION,
                                 "role": "client"})[0]

    def request(self, header: dict, payloads=()) -> Tuple[dict, Dict[str, np.ndarray]]:
        with self._lock:
            self._stream.write(encode_message(header, payloads))
            resp, tensors = read_message(self._stream)
        if resp.get("op") == "error":
            raise BackendError(
                f"{resp.get('code')}: {resp.get('message')}")
        return resp, tensors

    def close(self):
        self._sock.close()


def _parse_endpoint(endpoint: str) -> Tuple[str, int]:
    if endpoint.startswith("tcp://"):
        endpoint = endpoint[len("tcp://"):]
    host, _, port = endpoint.rpartition(":")
    return host or "127.0.0.1", int(port)


class RemotePointTracker:
    """Client-side point tracker speaking the wire protocol."""

    def __init__(self, endpoint: str):
        host, port = _parse_endpoint(endpoint)
        self._client = _WireClient(host, port)
        ack = self._client.ack
        if ack.get("backend") != "point":
            raise BackendError(f"endpoint is a {ack.get('backend')!r} backend")
        caps = ack.get("capabilities", {})
        self.handle = TrackerBackendHandle(
            "point", endpoint,
            TrackerCapabilities(int(caps.get("max_points", 1024)),
                                bool(caps.get("supports_occlusion", True))))

    def track(self, seeds: List[QueryPoint], seed_frame: int,
              frames: Sequence[int]):
        header = {
            "op": "track", "seed_frame": int(seed_frame),
            "frames": [int(t) for t in frames],
            "seeds": [{"x": p.x, "y": p.y, "polarity": p.polarity,
                       "object_id": p.object_id} for p in seeds],
        }
        _, tensors = self._client.request(header)
        return tensors["positions"], tensors["occlusion"]

    def close(self):
        self._client.close()


class RemoteBoxTracker:
    """Client-side box tracker speaking the wire protocol."""

    def __init__(self, endpoint: str):
        host, port = _parse_endpoint(endpoint)
        self._client = _WireClient(host, port)
        ack = self._client.ack
        if ack.get("backend") != "box":
            raise BackendError(f"endpoint is a {ack.get('backend')!r} backend")
        caps = ack.get("capabilities", {})
        self.handle = TrackerBackendHandle(
            "box", endpoint,
            TrackerCapabilities(int(caps.get("max_points", 1024)),
                                bool(caps.get("supports_occlusion", True))))

    def track(self, seed_boxes: List[QueryBox], seed_frame: int,
              frames: Sequence[int]):
        header = {
            "op": "track_boxes", "seed_frame": int(seed_frame),
            "frames": [int(t) for t in frames],
            "seeds": [{"object_id": b.object_id, "x_min": b.x_min,
                       "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}
                      for b in seed_boxes],
        }
        _, tensors = self._client.request(header)
        boxes = tensors["boxes"]
        conf = tensors["confidence"]
        boxes_out = [[tuple(float(v) for v in boxes[i, j])
                      for j in range(boxes.shape[1])]
                     for i in range(boxes.shape[0])]
        conf_out = [[float(v) for v in row] for row in conf]
        return boxes_out, conf_out

    def close(self):
        self._client.close()


class RemoteSegmenter:
    """Client-side segmenter speaking the wire protocol."""

    def __init__(self, endpoint: str):
        host, port = _parse_endpoint(endpoint)
        self._client = _WireClient(host, port)
        ack = self._client.ack
        if ack.get("backend") != "segmenter":
            raise BackendError(f"endpoint is a {ack.get('backend')!r} backend")
        dims = ack["dims"]
        caps = ack.get("capabilities", {})
        self.handle = SegmenterBackendHandle(
            endpoint=endpoint, channels=int(dims["channels"]),
            feature_height=int(dims["height"]),
            feature_width=int(dims["width"]),
            capabilities=SegmenterCapabilities(
                bool(caps.get("exports_keys_values", True)),
                bool(caps.get("supports_mask_prior", True)),
                bool(caps.get("supports_iterative_refinement", True))))

    def embed(self, pixels: np.ndarray) -> str:
        header, _ = self._client.request(
            {"op": "embed"},
            [("image", np.asarray(pixels, dtype=np.float32))])
        return header["image_ref"]

    def decode(self, image_ref: str, tokens: PromptTokens,
               value_prior: Optional[FeatureMap]) -> DecodeResult:
        payloads = []
        if tokens.mask_prior is not None:
            payloads.append(("mask_prior", tokens.mask_prior))
        if value_prior is not None:
            payloads.append(("value", value_prior.data))
        header = {
            "op": "decode", "image_ref": image_ref,
            "tokens": {
                "object_id": tokens.object_id,
                "positive": [list(p) for p in tokens.positive],
                "negative": [list(p) for p in tokens.negative],
                "box": list(tokens.box) if tokens.box is not None else None,
            },
        }
        _, tensors = self._client.request(header, payloads)
        return DecodeResult(
            low_res_mask=tensors["low_res_mask"],
            query_key=FeatureMap.from_array(tensors["query_key"]),
            dense_value=FeatureMap.from_array(tensors["value"]),
            score_map=tensors["score_map"])

    def close(self):
        self._client.close()
