"""Online grounding service: latest-wins RGB-D frame buffer, framed-JSON TCP
protocol, an HTTP gateway for browsers, and point-cloud extraction.

Wire format (TCP): 4-byte big-endian length prefix, then a UTF-8 JSON object.
Requests carry a ``type`` of ``ground``, ``push_frame``, or ``health``; error
replies are ``{"error": CODE, "message": ...}``. The HTTP gateway mirrors the
same payloads on ``POST /ground``, ``GET /health``, and ``GET /frame``.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import queue
import signal
import socket
import socketserver
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image

from ._accel import backend_name
from .data import prepare_image
from .errors import EmptyPhraseError

log = logging.getLogger("groundkit.service")

MAX_FRAME_BYTES = 16 * 1024 * 1024
DEFAULT_MAX_IMAGE_SIDE = 2048
CLOUD_CACHE_SIZE = 32


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# frame buffer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray | None  # (H, W) uint16, registered to rgb
    intrinsics: dict
    sequence_id: int
    timestamp: float


class FrameBuffer:
    """Single-slot latest-wins buffer. Frames are immutable; replacement swaps
    one reference under a lock, so readers never observe a torn pair."""

    def __init__(self):
        self._lock = threading.Lock()
        self._latest: Frame | None = None
        self._seq = 0

    def push(self, rgb: np.ndarray, depth: np.ndarray | None, intrinsics: dict) -> int:
        rgb = np.ascontiguousarray(rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ServiceError("BAD_REQUEST", f"rgb must be (H,W,3), got {rgb.shape}")
        if depth is not None:
            depth = np.ascontiguousarray(depth)
            if depth.shape != rgb.shape[:2]:
                raise ServiceError(
                    "BAD_REQUEST",
                    f"depth {depth.shape} not registered to rgb {rgb.shape[:2]}",
                )
        frame_time = time.time()
        with self._lock:
            self._seq += 1
            self._latest = Frame(rgb, depth, dict(intrinsics), self._seq, frame_time)
            return self._seq

    def latest(self) -> Frame | None:
        with self._lock:
            return self._latest


# ---------------------------------------------------------------------------
# point-cloud extraction
# ---------------------------------------------------------------------------


@dataclass
class PointCloud:
    xyz: np.ndarray  # (N, 3) float32 meters
    colors: np.ndarray  # (N, 3) uint8
    box_px: tuple[int, int, int, int]
    intrinsics: dict
    empty: bool = False


def extract_cloud(rgb, depth_mm, intrinsics, box_px, band: float = 0.15) -> PointCloud:
    """Back-project box pixels through the pinhole model, keeping points whose
    depth sits within `band` meters of the in-box median (foreground filter)."""
    x1, y1, x2, y2 = (int(v) for v in box_px)
    h, w = depth_mm.shape
    x1, y1 = max(0, x1), max(0, y1)
    x2, y2 = min(w, x2), min(h, y2)
    if x2 <= x1 or y2 <= y1:
        raise ServiceError("BAD_REQUEST", f"box {box_px} outside {w}x{h} depth map")
    fx, fy = float(intrinsics["fx"]), float(intrinsics["fy"])
    cx, cy = float(intrinsics["cx"]), float(intrinsics["cy"])

    patch = depth_mm[y1:y2, x1:x2].astype(np.float64)
    valid = patch > 0
    if not valid.any():
        log.warning("extract_cloud: no valid depth inside box %s", box_px)
        return PointCloud(
            xyz=np.zeros((0, 3), np.float32),
            colors=np.zeros((0, 3), np.uint8),
            box_px=(x1, y1, x2, y2),
            intrinsics=dict(intrinsics),
            empty=True,
        )
    z = patch / 1000.0
    median = np.median(z[valid])
    keep = valid & (np.abs(z - median) <= band)
    vs, us = np.nonzero(keep)
    zk = z[keep]
    uu = us + x1
    vv = vs + y1
    xs = (uu - cx) * zk / fx
    ys = (vv - cy) * zk / fy
    xyz = np.stack([xs, ys, zk], axis=1).astype(np.float32)
    colors = rgb[vv, uu].astype(np.uint8)
    return PointCloud(
        xyz=xyz, colors=colors, box_px=(x1, y1, x2, y2),
        intrinsics=dict(intrinsics),
    )


def encode_cloud(pc: PointCloud) -> bytes:
    """Binary layout: u32 point count, then per point 3 x f32 (X,Y,Z) + 3 x u8."""
    out = bytearray(struct.pack("<I", pc.xyz.shape[0]))
    for (x, y, z), (r, g, b) in zip(pc.xyz, pc.colors):
        out.extend(struct.pack("<fff3B", x, y, z, r, g, b))
    return bytes(out)


def decode_cloud(raw: bytes) -> PointCloud:
    (count,) = struct.unpack_from("<I", raw, 0)
    xyz = np.zeros((count, 3), np.float32)
    colors = np.zeros((count, 3), np.uint8)
    off = 4
    for i in range(count):
        x, y, z, r, g, b = struct.unpack_from("<fff3B", raw, off)
        xyz[i] = (x, y, z)
        colors[i] = (r, g, b)
        off += 15
    return PointCloud(xyz=xyz, colors=colors, box_px=(0, 0, 0, 0), intrinsics={})


# ---------------------------------------------------------------------------
# codecs
# ---------------------------------------------------------------------------


def _decode_png_b64(data: str, max_side: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            if im.width > max_side or im.height > max_side:
                raise ServiceError(
                    "IMAGE_TOO_LARGE",
                    f"{im.width}x{im.height} exceeds configured max side {max_side}",
                )
            return np.asarray(im.convert("RGB"))
    except ServiceError:
        raise
    except Exception as e:
        raise ServiceError("BAD_REQUEST", f"undecodable image: {e}") from None


def _decode_depth_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im, dtype=np.uint16)
    except Exception as e:
        raise ServiceError("BAD_REQUEST", f"undecodable depth image: {e}") from None


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# the service core
# ---------------------------------------------------------------------------


class GroundingService:
    """Protocol-independent request handling; one inference worker drains a
    bounded FIFO so the model sees a single request at a time."""

    def __init__(
        self,
        model,
        use_clahe: bool = True,
        queue_depth: int = 16,
        max_image_side: int = DEFAULT_MAX_IMAGE_SIDE,
    ):
        self.model = model
        self.use_clahe = use_clahe
        self.max_image_side = max_image_side
        self.buffer = FrameBuffer()
        self._queue: queue.Queue = queue.Queue(maxsize=queue_depth)
        self._clouds: OrderedDict[str, bytes] = OrderedDict()
        self._clouds_lock = threading.Lock()
        self._cloud_seq = 0
        self._stop = threading.Event()
        self._worker = threading.Thread(target=self._work, daemon=True, name="infer")
        self._worker.start()

    def close(self):
        self._stop.set()
        try:
            self._queue.put_nowait(None)
        except queue.Full:
            pass
        self._worker.join(timeout=5)
        # fail any queued jobs the worker never reached so submitters wake up
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                break
            if item is not None:
                _, done, slot = item
                slot["error"] = ServiceError("INTERNAL", "service shut down")
                done.set()

    def _work(self):
        while not self._stop.is_set():
            item = self._queue.get()
            if item is None:
                break
            fn, done, slot = item
            try:
                slot["result"] = fn()
            except Exception as e:  # surfaced on the caller's thread
                slot["error"] = e
            finally:
                done.set()

    def _submit(self, fn):
        done = threading.Event()
        slot: dict = {}
        try:
            self._queue.put_nowait((fn, done, slot))
        except queue.Full:
            raise ServiceError("BUSY", "inference queue full") from None
        done.wait()
        if "error" in slot:
            raise slot["error"]
        return slot["result"]

    # -- message handlers ------------------------------------------------------

    def handle_message(self, msg: dict) -> dict:
        if not isinstance(msg, dict):
            raise ServiceError("BAD_REQUEST", "message must be a JSON object")
        mtype = msg.get("type")
        if mtype == "ground":
            return self.ground(msg)
        if mtype == "push_frame":
            return self.push_frame_message(msg)
        if mtype == "health":
            return self.health()
        raise ServiceError("BAD_REQUEST", f"unknown message type {mtype!r}")

    def push_frame_message(self, msg: dict) -> dict:
        rgb = _decode_png_b64(msg.get("rgb", ""), self.max_image_side)
        depth = _decode_depth_b64(msg["depth"]) if msg.get("depth") else None
        intrinsics = msg.get("intrinsics") or _default_intrinsics(rgb.shape)
        seq = self.buffer.push(rgb, depth, intrinsics)
        return {"sequence_id": seq}

    def health(self) -> dict:
        return {
            "model": "loaded",
            "vocab_size": self.model.vocab.size,
            "anchors": len(self.model.anchor_set),
            "image_size": self.model.config.image_size,
            "encoder": self.model.config.encoder,
            "backend": backend_name(),
        }

    def frame_png(self) -> bytes:
        frame = self.buffer.latest()
        if frame is None:
            raise ServiceError("NO_FRAME", "no frame has been pushed")
        return encode_png(frame.rgb)

    def cloud_bytes(self, cloud_id: str) -> bytes:
        with self._clouds_lock:
            blob = self._clouds.get(cloud_id)
        if blob is None:
            raise ServiceError("NOT_FOUND", f"unknown cloud {cloud_id!r}")
        return blob

    def ground(self, request: dict, t_receipt: float | None = None) -> dict:
        t0 = time.perf_counter() if t_receipt is None else t_receipt
        caption = str(request.get("caption", ""))
        if not caption.strip():
            raise ServiceError("CAPTION_EMPTY", "caption is empty")

        sequence_id = None
        image_field = request.get("image", "buffer")
        if image_field == "buffer":
            frame = self.buffer.latest()
            if frame is None:
                raise ServiceError("NO_FRAME", "no frame has been pushed")
            rgb, depth = frame.rgb, frame.depth
            intrinsics = frame.intrinsics
            sequence_id = frame.sequence_id
        else:
            rgb = _decode_png_b64(image_field, self.max_image_side)
            depth = _decode_depth_b64(request["depth"]) if request.get("depth") else None
            intrinsics = request.get("intrinsics") or _default_intrinsics(rgb.shape)

        def job():
            image = prepare_image(rgb, self.model.config.image_size, self.use_clahe)
            try:
                return self.model.infer_top1(image, caption)
            except EmptyPhraseError:
                raise ServiceError("CAPTION_EMPTY", "caption is empty after cleaning") from None

        grounding = self._submit(job)
        h, w = rgb.shape[:2]
        bp = grounding.box_px
        box_px = [
            int(np.clip(round(bp.x1), 0, w - 1)),
            int(np.clip(round(bp.y1), 0, h - 1)),
            int(np.clip(round(bp.x2), 1, w)),
            int(np.clip(round(bp.y2), 1, h)),
        ]
        if box_px[2] <= box_px[0]:  # rounding can collapse a 1px-wide box
            box_px[2] = min(w, box_px[0] + 1)
        if box_px[3] <= box_px[1]:
            box_px[3] = min(h, box_px[1] + 1)
        cloud_ref = None
        if request.get("want_cloud") and depth is not None:
            pc = extract_cloud(rgb, depth, intrinsics, box_px)
            blob = encode_cloud(pc)
            with self._clouds_lock:
                self._cloud_seq += 1
                cloud_id = f"c{self._cloud_seq}"
                self._clouds[cloud_id] = blob
                while len(self._clouds) > CLOUD_CACHE_SIZE:
                    self._clouds.popitem(last=False)
            cloud_ref = {
                "id": cloud_id,
                "points": int(pc.xyz.shape[0]),
                "url": f"/cloud/{cloud_id}",
                "empty": pc.empty,
            }
        return {
            "box_px": box_px,
            "box_norm": [
                grounding.box_norm.x1,
                grounding.box_norm.y1,
                grounding.box_norm.x2,
                grounding.box_norm.y2,
            ],
            "score": grounding.score,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
            "sequence_id": sequence_id,
            "cloud": cloud_ref,
        }


def _default_intrinsics(shape) -> dict:
    h, w = shape[0], shape[1]
    return {"fx": float(w), "fy": float(w), "cx": w / 2.0, "cy": h / 2.0}


# ---------------------------------------------------------------------------
# framed TCP protocol
# ---------------------------------------------------------------------------


def read_frame(sock) -> dict | None:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        _drain(sock, length)
        raise ServiceError("BAD_REQUEST", f"frame of {length} bytes exceeds limit")
    payload = _recv_exact(sock, length)
    if payload is None:
        return None
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ServiceError("BAD_REQUEST", f"malformed JSON frame: {e}") from None


def write_frame(sock, obj: dict) -> None:
    payload = json.dumps(obj).encode("utf-8")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _drain(sock, n: int) -> None:
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(65536, remaining))
        if not chunk:
            return
        remaining -= len(chunk)


class _TCPHandler(socketserver.BaseRequestHandler):
    def handle(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        service: GroundingService = self.server.service  # type: ignore[attr-defined]
        while True:
            try:
                msg = read_frame(self.request)
            except ServiceError as e:
                write_frame(self.request, {"error": e.code, "message": e.message})
                continue
            except (ConnectionError, OSError):
                return
            if msg is None:
                return
            t0 = time.perf_counter()
            try:
                if msg.get("type") == "ground":
                    reply = service.ground(msg, t_receipt=t0)
                else:
                    reply = service.handle_message(msg)
            except ServiceError as e:
                reply = {"error": e.code, "message": e.message}
            except Exception as e:  # protocol totality: always answer
                log.exception("internal error")
                reply = {"error": "INTERNAL", "message": str(e)}
            try:
                write_frame(self.request, reply)
            except (ConnectionError, OSError):
                return


class FramedTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, service: GroundingService):
        super().__init__(addr, _TCPHandler)
        self.service = service


# ---------------------------------------------------------------------------
# HTTP gateway
# ---------------------------------------------------------------------------


class _HTTPHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True

    @property
    def service(self) -> GroundingService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj: dict):
        self._send(status, json.dumps(obj).encode("utf-8"), "application/json")

    def _send_error_obj(self, e: ServiceError):
        status = {
            "CAPTION_EMPTY": 400,
            "BAD_REQUEST": 400,
            "NO_FRAME": 409,
            "NOT_FOUND": 404,
            "IMAGE_TOO_LARGE": 413,
            "BUSY": 503,
        }.get(e.code, 500)
        self._send_json(status, {"error": e.code, "message": e.message})

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        try:
            if self.path == "/health":
                self._send_json(200, self.service.health())
            elif self.path == "/frame":
                self._send(200, self.service.frame_png(), "image/png")
            elif self.path.startswith("/cloud/"):
                blob = self.service.cloud_bytes(self.path[len("/cloud/") :])
                self._send(200, blob, "application/octet-stream")
            elif self._try_static():
                pass
            else:
                self._send_json(404, {"error": "NOT_FOUND", "message": self.path})
        except ServiceError as e:
            self._send_error_obj(e)
        except Exception as e:
            log.exception("internal error")
            self._send_json(500, {"error": "INTERNAL", "message": str(e)})

    def do_POST(self):
        t0 = time.perf_counter()
        try:
            length = int(self.headers.get("Content-Length", 0))
            if length > MAX_FRAME_BYTES:
                raise ServiceError("BAD_REQUEST", "request body too large")
            try:
                body = json.loads(self.rfile.read(length).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise ServiceError("BAD_REQUEST", f"malformed JSON body: {e}") from None
            if self.path == "/ground":
                self._send_json(200, self.service.ground(body, t_receipt=t0))
            elif self.path == "/push_frame":
                self._send_json(200, self.service.push_frame_message(body))
            else:
                self._send_json(404, {"error": "NOT_FOUND", "message": self.path})
        except ServiceError as e:
            self._send_error_obj(e)
        except Exception as e:
            log.exception("internal error")
            self._send_json(500, {"error": "INTERNAL", "message": str(e)})

    def _try_static(self) -> bool:
        root = getattr(self.server, "static_root", None)
        if root is None:
            return False
        rel = self.path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            return False
        ctype = {
            ".html": "text/html",
            ".js": "application/javascript",
            ".css": "text/css",
            ".png": "image/png",
        }.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)
        return True


class GatewayHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, service: GroundingService, static_root: Path | None = None):
        super().__init__(addr, _HTTPHandler)
        self.service = service
        self.static_root = static_root


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def parse_bind(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1", int(port))


def serve(
    model,
    bind: str,
    http_bind: str | None = None,
    use_clahe: bool = True,
    static_root=None,
    ready_event: threading.Event | None = None,
    stop_event: threading.Event | None = None,
    install_signals: bool = True,
):
    """Run the framed-TCP server (and optional HTTP gateway) until stopped."""
    service = GroundingService(model, use_clahe=use_clahe)
    tcp = FramedTCPServer(parse_bind(bind), service)
    servers = [tcp]
    threads = [threading.Thread(target=tcp.serve_forever, name="tcp", daemon=True)]
    http_server = None
    if http_bind:
        http_server = GatewayHTTPServer(
            parse_bind(http_bind), service,
            static_root=Path(static_root) if static_root else None,
        )
        servers.append(http_server)
        threads.append(
            threading.Thread(target=http_server.serve_forever, name="http", daemon=True)
        )

    stop = stop_event or threading.Event()
    if install_signals:
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())

    for t in threads:
        t.start()
    log.info(
        "serving framed TCP on %s%s (backend: %s)",
        bind, f", HTTP on {http_bind}" if http_bind else "", backend_name(),
    )
    if ready_event is not None:
        ready_event.set()
    try:
        stop.wait()
    finally:
        for s in servers:
            s.shutdown()
            s.server_close()
        service.close()
        log.info("shutdown complete")
