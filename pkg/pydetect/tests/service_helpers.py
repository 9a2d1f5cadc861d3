"""Helpers shared by the server tests: codecs, stub data, live server."""
from __future__ import annotations

import base64
import contextlib
import importlib.util
import io
import threading
import time

import numpy as np
from PIL import Image as PILImage

from pydetect.backends import RawDetection

CANNED = (
    RawDetection(5.0, 7.0, 40.0, 30.0, 15, 0.88),
    RawDetection(12.0, 3.0, 52.0, 44.0, 16, 0.40),
)

ACCEPTANCE_LINES: list[str] = []


def report(label: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"[ACCEPTANCE] {label}: {status} ({detail})")
    assert ok, f"{label}: {detail}"

ULTRALYTICS_INSTALLED = importlib.util.find_spec("ultralytics") is not None
LPIPS_INSTALLED = importlib.util.find_spec("lpips") is not None


def png_b64(array: np.ndarray) -> str:
    buf = io.BytesIO()
    PILImage.fromarray(array, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def frame(height: int = 60, width: int = 100, fill: int = 30) -> np.ndarray:
    data = np.full((height, width, 3), fill, dtype=np.uint8)
    data[7:30, 5:40, 0] = 200
    return data


@contextlib.contextmanager
def live_server(app):
    """Run the app on a real localhost socket; yields the base URL."""
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.monotonic() + 15.0
        while not server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start within 15 s")
            if not thread.is_alive():
                raise RuntimeError("server thread exited before startup")
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=15.0)
