"""TLS-terminating reverse proxy that gates traffic on a presence token.

Every request is checked for the verification cookie. Valid cookie:
transparently forwarded to the origin (headers relayed, hop-by-hop
stripped, gateway cookie scrubbed). No or stale cookie: browsers get the
challenge page, API clients get 401 JSON. The ceremony itself lives under
the reserved /__cahicha/ prefix, which is never forwarded — the origin
needs no changes at all.
"""

from __future__ import annotations

import argparse
import datetime
import http.client
import json
import logging
import mimetypes
import os
import socket
import ssl
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import List, Optional, Tuple

from .codec import MalformedEncoding, decode_base64url
from .config import GatewayConfig, load_config
from .engine import (
    AttestationResponse,
    Mode,
    VerificationEngine,
    VerificationPolicy,
)
from .mds import load_mds_blob
from .tokens import (
    EntropyUnavailable,
    build_cookie,
    load_or_create_token_key,
    mint_token,
    validate_token,
)

logger = logging.getLogger(__name__)

RESERVED_PREFIX = "/__cahicha/"
CHALLENGE_PATH = RESERVED_PREFIX + "challenge"
VERIFY_PATH = RESERVED_PREFIX + "verify"

HOP_BY_HOP = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailers",
        "transfer-encoding",
        "upgrade",
    }
)

_CHALLENGE_PAGE = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<meta name="viewport" content="width=device-width, initial-scale=1">
<title>Human verification</title>
<style>
 body { font-family: system-ui, sans-serif; display: flex; justify-content: center;
        align-items: center; min-height: 90vh; margin: 0; background: #f4f5f7; }
 main { background: #fff; border-radius: 12px; padding: 2.5rem 3rem; max-width: 26rem;
        box-shadow: 0 2px 12px rgba(0,0,0,.08); text-align: center; }
 button { font-size: 1rem; padding: .6rem 1.6rem; border-radius: 8px; border: 0;
          background: #2557d6; color: #fff; cursor: pointer; }
 button[hidden] { display: none; }
 #status { min-height: 2.5rem; color: #444; }
</style>
</head>
<body>
<main>
 <h1>Quick human check</h1>
 <p>Confirm you are a person with one touch of your security key,
    fingerprint reader, or device unlock. Nothing about you is collected.</p>
 <p id="status" role="status" aria-live="polite">Preparing&hellip;</p>
 <button id="retry" hidden>Try again</button>
</main>
<script>
(function () {
  "use strict";
  var statusEl = document.getElementById("status");
  var retryBtn = document.getElementById("retry");
  var retriedStale = false;

  function setStatus(text) { statusEl.textContent = text; }
  function fail(text) { setStatus(text); retryBtn.hidden = false; }

  function b64uToBuf(s) {
    var b64 = s.replace(/-/g, "+").replace(/_/g, "/");
    while (b64.length % 4) b64 += "=";
    var bin = atob(b64), buf = new Uint8Array(bin.length);
    for (var i = 0; i < bin.length; i++) buf[i] = bin.charCodeAt(i);
    return buf.buffer;
  }
  function bufToB64u(buf) {
    var bytes = new Uint8Array(buf), bin = "";
    for (var i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
    return btoa(bin).replace(/\\+/g, "-").replace(/\\//g, "_").replace(/=+$/, "");
  }

  function run() {
    retryBtn.hidden = true;
    if (!window.PublicKeyCredential) {
      fail("This browser has no platform credential support. Please use a recent browser with a security key, fingerprint reader, or screen-lock credential.");
      return;
    }
    setStatus("Requesting challenge\\u2026");
    fetch("/__cahicha/challenge", { cache: "no-store", headers: { Accept: "application/json" } })
      .then(function (r) {
        if (!r.ok) throw new Error("challenge request failed (" + r.status + ")");
        return r.json();
      })
      .then(function (body) {
        var pk = body.publicKey;
        pk.challenge = b64uToBuf(pk.challenge);
        pk.user.id = b64uToBuf(pk.user.id);
        setStatus("Touch your security key or confirm the device prompt\\u2026");
        return navigator.credentials.create({ publicKey: pk }).then(function (cred) {
          if (!cred) throw new Error("no credential produced");
          setStatus("Submitting attestation\\u2026");
          return fetch("/__cahicha/verify", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({
              record_id: body.record_id,
              attestation_object_b64: bufToB64u(cred.response.attestationObject),
              client_data_b64: bufToB64u(cred.response.clientDataJSON),
              redirect_to: location.pathname + location.search,
            }),
          });
        });
      })
      .then(function (resp) {
        if (resp.redirected) { location.href = resp.url; return; }
        if (resp.ok) { location.reload(); return; }
        return resp.json().catch(function () { return {}; }).then(function (err) {
          if (err.error === "ChallengeExpired" && !retriedStale) {
            retriedStale = true;
            run();
            return;
          }
          fail("Verification failed: " + (err.error || resp.status) + ".");
        });
      })
      .catch(function (err) {
        if (err && (err.name === "NotAllowedError" || err.name === "AbortError")) {
          fail("The prompt was dismissed or timed out. Try again when ready.");
        } else {
          fail("Verification could not complete: " + (err && err.message ? err.message : err));
        }
      });
  }

  retryBtn.addEventListener("click", run);
  run();
})();
</script>
</body>
</html>
"""


def safe_redirect_target(target) -> str:
    """Collapse anything but a same-site relative path to '/'."""
    if not isinstance(target, str) or not target.startswith("/"):
        return "/"
    if target.startswith("//") or target.startswith("/\\") or "://" in target:
        return "/"
    return target


def split_cookie_header(header: Optional[str], cookie_name: str) -> Tuple[Optional[str], Optional[str]]:
    """(gateway token value, remaining cookie header or None)."""
    if not header:
        return None, None
    token = None
    kept = []
    for part in header.split(";"):
        name, _, value = part.strip().partition("=")
        if name == cookie_name:
            token = value
        elif part.strip():
            kept.append(part.strip())
    return token, "; ".join(kept) if kept else None


class _AccessLog:
    """One JSON object per line: timestamp, path, verdict, latency_ms."""

    def __init__(self, path: Optional[str]):
        self._lock = threading.Lock()
        if path:
            self._stream = open(path, "a", encoding="utf-8")
        else:
            self._stream = sys.stderr

    def write(self, path: str, verdict: str, latency_ms: float) -> None:
        entry = {
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "path": path,
            "verdict": verdict,
            "latency_ms": round(latency_ms, 3),
        }
        line = json.dumps(entry, separators=(",", ":"))
        with self._lock:
            self._stream.write(line + "\n")
            self._stream.flush()

    def close(self) -> None:
        if self._stream is not sys.stderr:
            self._stream.close()


class _NoDelayHTTPConnection(http.client.HTTPConnection):
    def connect(self):
        super().connect()
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class _UpstreamPool:
    """Per-thread keep-alive connections to the origin."""

    def __init__(self, host: str, port: int, timeout: float):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._local = threading.local()

    def connection(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = _NoDelayHTTPConnection(self.host, self.port, timeout=self.timeout)
            self._local.conn = conn
        return conn

    def discard(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None


class GatewayRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "cahicha"
    disable_nagle_algorithm = True  # keep-alive responses stall 40ms without TCP_NODELAY
    gateway: "Gateway"  # bound by Gateway via subclassing

    # -- plumbing -------------------------------------------------------------

    def log_message(self, format, *args):  # BaseHTTPRequestHandler default is stderr noise
        pass

    def _drain_request_body(self) -> None:
        # unread body bytes would desync the next keep-alive request
        if getattr(self, "_body_read", False):
            return
        self._body_read = True
        remaining = int(self.headers.get("Content-Length") or 0)
        while remaining > 0:
            chunk = self.rfile.read(min(65536, remaining))
            if not chunk:
                break
            remaining -= len(chunk)

    def _send(
        self,
        status: int,
        body: bytes,
        content_type: str = "application/json",
        extra_headers: Optional[List[Tuple[str, str]]] = None,
    ) -> None:
        self._drain_request_body()
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for name, value in extra_headers or []:
            self.send_header(name, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _send_json(self, status: int, payload: dict, extra_headers=None) -> None:
        self._send(status, json.dumps(payload).encode("utf-8"), extra_headers=extra_headers)

    def _read_body(self) -> bytes:
        self._body_read = True
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length > 0 else b""

    # -- request entry points ---------------------------------------------------

    def do_GET(self):
        self._dispatch()

    def do_HEAD(self):
        self._dispatch()

    def do_POST(self):
        self._dispatch()

    def do_PUT(self):
        self._dispatch()

    def do_PATCH(self):
        self._dispatch()

    def do_DELETE(self):
        self._dispatch()

    def do_OPTIONS(self):
        self._dispatch()

    def _dispatch(self):
        started = time.perf_counter()
        self._body_read = False  # handler instances persist across keep-alive requests
        try:
            self._route(started)
        except (BrokenPipeError, ConnectionResetError):
            self.close_connection = True
        except Exception:
            logger.exception("internal fault handling %s %s", self.command, self.path)
            try:
                self._send_json(500, {"error": "internal_error"})
            except OSError:
                pass

    def _route(self, started: float):
        gateway = self.gateway
        path_only = self.path.split("?", 1)[0]

        if path_only.startswith(RESERVED_PREFIX) or path_only == RESERVED_PREFIX.rstrip("/"):
            self._handle_internal(path_only, started)
            return

        token, _ = split_cookie_header(self.headers.get("Cookie"), gateway.config.cookie_name)
        if token:
            check = validate_token(gateway.token_key, token, gateway.now_ms(), gateway.max_age_ms)
            if check.valid:
                self._forward_upstream(started)
                return
        self._challenge_response(started)

    # -- internal endpoints -------------------------------------------------------

    def _handle_internal(self, path_only: str, started: float):
        if path_only == CHALLENGE_PATH and self.command == "GET":
            self._challenge_endpoint(started)
        elif path_only == VERIFY_PATH and self.command == "POST":
            self._verify_endpoint(started)
        elif self.command in ("GET", "HEAD"):
            self._serve_asset(path_only, started)
        else:
            self._send_json(405, {"error": "method_not_allowed"})
            self._log(started, "challenged")

    def _challenge_endpoint(self, started: float):
        try:
            _, options = self.gateway.engine.issue_challenge(self.gateway.now_ms())
        except EntropyUnavailable:
            self._send_json(503, {"error": "entropy_unavailable"})
            self._log(started, "challenged")
            return
        self._send_json(200, options.to_wire(), extra_headers=[("Cache-Control", "no-store")])
        self._log(started, "challenged")

    def _verify_endpoint(self, started: float):
        try:
            body = json.loads(self._read_body().decode("utf-8"))
            record_id = body["record_id"]
            attestation_object = body["attestation_object_b64"]
            client_data = body["client_data_b64"]
        except (ValueError, KeyError, UnicodeDecodeError):
            self._send_json(400, {"error": "malformed_body"})
            self._log(started, "rejected_MalformedBody")
            return
        try:
            response = AttestationResponse(
                record_id=str(record_id),
                attestation_object=decode_base64url(attestation_object),
                client_data=decode_base64url(client_data),
            )
        except (MalformedEncoding, TypeError):
            self._send_json(400, {"error": "malformed_body"})
            self._log(started, "rejected_MalformedBody")
            return

        outcome = self.gateway.engine.verify_attestation(response, self.gateway.now_ms())
        if not outcome.is_human:
            reason = outcome.rejection_reason.value
            self._send_json(403, {"error": reason, "detail": outcome.detail})
            self._log(started, f"rejected_{reason}")
            return

        token = mint_token(self.gateway.token_key, self.gateway.now_ms())
        location = safe_redirect_target(body.get("redirect_to"))
        self._send(
            303,
            b"",
            extra_headers=[
                ("Location", location),
                ("Set-Cookie", build_cookie(token, self.gateway.config)),
                ("Cache-Control", "no-store"),
            ],
        )
        self._log(started, "verified")

    def _serve_asset(self, path_only: str, started: float):
        body, content_type = self.gateway.asset(path_only)
        if body is None:
            self._send_json(404, {"error": "not_found"})
        else:
            self._send(200, body, content_type=content_type)
        self._log(started, "challenged")

    # -- challenge vs forward --------------------------------------------------------

    def _challenge_response(self, started: float):
        accept = self.headers.get("Accept", "")
        if "text/html" in accept:
            body, content_type = self.gateway.challenge_page()
            self._send(200, body, content_type=content_type, extra_headers=[("Cache-Control", "no-store")])
        else:
            self._send_json(401, {"error": "verification_required"})
        self._log(started, "challenged")

    def _forward_upstream(self, started: float):
        gateway = self.gateway
        body = self._read_body()
        headers = self._build_upstream_headers()
        dispatch_latency_ms = (time.perf_counter() - started) * 1000.0

        pool = gateway.pool
        response = None
        for attempt in (1, 2):  # a stale keep-alive connection gets one retry
            conn = pool.connection()
            try:
                conn.putrequest(self.command, self.path, skip_host=True, skip_accept_encoding=True)
                for name, value in headers:
                    conn.putheader(name, value)
                conn.endheaders(body if body else None)
                response = conn.getresponse()
                break
            except socket.timeout:
                pool.discard()
                self._send_json(504, {"error": "upstream_timeout"})
                self._log(started, "upstream_error")
                return
            except (ConnectionError, http.client.HTTPException, OSError):
                pool.discard()
                if attempt == 2:
                    self._send_json(502, {"error": "upstream_unreachable"})
                    self._log(started, "upstream_error")
                    return

        try:
            payload = response.read()
        except socket.timeout:
            pool.discard()
            self._send_json(504, {"error": "upstream_timeout"})
            self._log(started, "upstream_error")
            return
        except (ConnectionError, http.client.HTTPException, OSError):
            pool.discard()
            self._send_json(502, {"error": "upstream_unreachable"})
            self._log(started, "upstream_error")
            return
        if response.will_close:
            pool.discard()

        self.send_response_only(response.status, response.reason)
        had_length = False
        for name, value in response.getheaders():
            lname = name.lower()
            if lname in HOP_BY_HOP:
                continue
            if lname == "content-length":
                had_length = True
            self.send_header(name, value)
        if not had_length:
            self.send_header("Content-Length", str(len(payload)))
        self.send_header("Connection", "keep-alive")
        self.end_headers()
        if self.command != "HEAD" and response.status not in (204, 304):
            self.wfile.write(payload)
        self._log(started, "forwarded", latency_ms=dispatch_latency_ms)

    def _build_upstream_headers(self) -> List[Tuple[str, str]]:
        gateway = self.gateway
        connection_tokens = {
            token.strip().lower()
            for token in (self.headers.get("Connection") or "").split(",")
            if token.strip()
        }
        skip = HOP_BY_HOP | connection_tokens | {"host"}
        headers: List[Tuple[str, str]] = []
        for name, value in self.headers.items():
            lname = name.lower()
            if lname in skip:
                continue
            if lname == "cookie":
                _, remainder = split_cookie_header(value, gateway.config.cookie_name)
                if remainder:
                    headers.append((name, remainder))
                continue
            if lname in ("x-forwarded-for", "x-forwarded-proto", "x-forwarded-host"):
                continue
            headers.append((name, value))

        client_ip = self.client_address[0]
        prior = self.headers.get("X-Forwarded-For")
        headers.append(("X-Forwarded-For", f"{prior}, {client_ip}" if prior else client_ip))
        headers.append(("X-Forwarded-Proto", "https" if gateway.tls_enabled else "http"))
        original_host = self.headers.get("Host")
        if original_host:
            headers.append(("X-Forwarded-Host", original_host))
        headers.append(("Host", f"{gateway.config.upstream_host}:{gateway.config.upstream_port}"))
        headers.append(("Connection", "keep-alive"))
        return headers

    def _log(self, started: float, verdict: str, latency_ms: Optional[float] = None) -> None:
        if latency_ms is None:
            latency_ms = (time.perf_counter() - started) * 1000.0
        self.gateway.access_log.write(self.path.split("?", 1)[0], verdict, latency_ms)


class Gateway:
    """Owns the listening server and all verification state."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.max_age_ms = config.token_max_age_hours * 3600 * 1000
        self.token_key = load_or_create_token_key(config.token_key_path)
        self.access_log = _AccessLog(config.access_log_path)
        self.pool = _UpstreamPool(
            config.upstream_host, config.upstream_port, config.upstream_timeout_seconds
        )
        self.tls_enabled = not config.unsafe_no_tls

        trust_store = None
        if config.mode == "strict":
            with open(config.mds_blob_path, "rb") as handle:
                blob = handle.read()
            with open(config.mds_root_path, "rb") as handle:
                root = handle.read()
            trust_store = load_mds_blob(blob, root)
            logger.info("trust store loaded: %d entries", len(trust_store))

        handler = type("BoundGatewayHandler", (GatewayRequestHandler,), {"gateway": self})
        self.server = ThreadingHTTPServer((config.listen_host, config.listen_port), handler)
        self.server.daemon_threads = True
        if self.tls_enabled:
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            context.load_cert_chain(config.tls_cert_path, config.tls_key_path)
            self.server.socket = context.wrap_socket(self.server.socket, server_side=True)

        origins = list(config.expected_origins) or [self._default_origin()]
        policy = VerificationPolicy(
            mode=Mode(config.mode),
            expected_origins=tuple(origins),
            rp_id=config.rp_id,
            challenge_ttl_s=config.challenge_ttl_seconds,
        )
        self.engine = VerificationEngine(policy, trust_store=trust_store)
        self._thread: Optional[threading.Thread] = None

    def _default_origin(self) -> str:
        scheme = "https" if self.tls_enabled else "http"
        port = self.port
        if (scheme, port) in (("https", 443), ("http", 80)):
            return f"{scheme}://{self.config.rp_id}"
        return f"{scheme}://{self.config.rp_id}:{port}"

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def base_url(self) -> str:
        scheme = "https" if self.tls_enabled else "http"
        return f"{scheme}://{self.config.listen_host}:{self.port}"

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def challenge_page(self) -> Tuple[bytes, str]:
        if self.config.assets_dir:
            index = os.path.join(self.config.assets_dir, "index.html")
            if os.path.isfile(index):
                with open(index, "rb") as handle:
                    return handle.read(), "text/html; charset=utf-8"
        return _CHALLENGE_PAGE.encode("utf-8"), "text/html; charset=utf-8"

    def asset(self, path_only: str) -> Tuple[Optional[bytes], str]:
        name = path_only[len(RESERVED_PREFIX):] if path_only.startswith(RESERVED_PREFIX) else ""
        if name in ("", "index.html"):
            return self.challenge_page()
        if not self.config.assets_dir:
            return None, ""
        base = os.path.realpath(self.config.assets_dir)
        target = os.path.realpath(os.path.join(base, name))
        if not target.startswith(base + os.sep) or not os.path.isfile(target):
            return None, ""
        content_type = mimetypes.guess_type(target)[0] or "application/octet-stream"
        with open(target, "rb") as handle:
            return handle.read(), content_type

    def serve_forever(self) -> None:
        logger.info("gateway listening on %s -> upstream %s", self.base_url, self.config.upstream)
        self.server.serve_forever()

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        self.access_log.close()


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="cahicha-gateway", description=__doc__)
    parser.add_argument("--config", help="path to key=value config file")
    parser.add_argument("--listen", help="host:port to listen on")
    parser.add_argument("--upstream", help="origin server host:port")
    parser.add_argument("--mode", choices=["general", "strict"])
    parser.add_argument(
        "--unsafe-no-tls",
        action="store_true",
        default=None,
        help="serve plaintext HTTP (localhost development only)",
    )
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    config = load_config(
        args.config,
        overrides={
            "listen": args.listen,
            "upstream": args.upstream,
            "mode": args.mode,
            "unsafe_no_tls": args.unsafe_no_tls,
        },
    )
    gateway = Gateway(config)
    try:
        gateway.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        gateway.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
