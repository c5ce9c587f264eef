"""Load and resilience benchmarks against a running gateway.

Two experiment shapes:

  verified  ramp up N simulated humans (each completes the ceremony once
            via the soft authenticator, then browses with its cookie),
            hold, ramp down; record per-second throughput and latency
            percentiles.
  flood     cookie-less HTTP flood with uniform headers and no ceremony,
            modelled on high-rate DoS tooling; the origin stub's own
            arrival counter proves nothing leaked through the gate.
  mixed     both at once: the flood plus verified clients who must keep
            succeeding while it runs.

The origin stub lives here too, so gate soundness is measured at the
destination instead of inferred from gateway logs. Every report must
satisfy requests_total == forwarded + blocked + failed before it is
written; a violation exits nonzero.
"""

from __future__ import annotations

import argparse
import collections
import csv
import json
import logging
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, List, Optional, Tuple

import requests

from .codec import encode_base64url
from .engine import CreationOptions
from .softauth import HONEST, AuthenticatorBehavior, SoftAuthenticator

logger = logging.getLogger(__name__)

STUB_MARKER_HEADER = "X-Origin-Stub"
FLOOD_USER_AGENT = "Mozilla/4.0 (compatible; flood-bench)"


class TargetUnreachable(RuntimeError):
    pass


class AccountingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# origin stub
# --------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    stub: "OriginStub"

    def log_message(self, format, *args):
        pass

    def _respond(self, status: int, body: bytes, content_type="application/json", extra=()):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header(STUB_MARKER_HEADER, "1")
        for name, value in extra:
            self.send_header(name, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _handle(self):
        path = self.path.split("?", 1)[0]
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        if path == "/__stub/stats":
            self._respond(200, json.dumps({"arrivals": self.stub.arrivals}).encode())
            return
        if path == "/__stub/reset":
            self.stub.reset()
            self._respond(200, b"{}")
            return
        self.stub.count(self.command, path)
        if path == "/echo":
            self._respond(200, body, content_type=self.headers.get("Content-Type") or "application/octet-stream")
        elif path == "/headers":
            seen = {name: value for name, value in self.headers.items()}
            self._respond(200, json.dumps(seen).encode())
        elif path.startswith("/status/"):
            code = int(path.rsplit("/", 1)[1])
            self._respond(code, json.dumps({"status": code}).encode())
        elif path.startswith("/slow/"):
            time.sleep(float(path.rsplit("/", 1)[1]))
            self._respond(200, b'{"slow": true}')
        else:
            self._respond(200, json.dumps({"path": path, "method": self.command}).encode())

    do_GET = do_POST = do_PUT = do_DELETE = do_HEAD = do_PATCH = do_OPTIONS = _handle


class OriginStub:
    """Echo server standing in for the protected site, counting arrivals."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._lock = threading.Lock()
        self._arrivals = 0
        self.by_path: Dict[str, int] = collections.Counter()
        handler = type("BoundStubHandler", (_StubHandler,), {"stub": self})
        self.server = ThreadingHTTPServer((host, port), handler)
        self.server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def arrivals(self) -> int:
        with self._lock:
            return self._arrivals

    def count(self, method: str, path: str) -> None:
        with self._lock:
            self._arrivals += 1
            self.by_path[path] += 1

    def reset(self) -> None:
        with self._lock:
            self._arrivals = 0
            self.by_path.clear()

    def start(self) -> "OriginStub":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def read_stub_arrivals(stats_url: str) -> int:
    response = requests.get(stats_url, timeout=10)
    response.raise_for_status()
    return response.json()["arrivals"]


# --------------------------------------------------------------------------
# scenarios and reports
# --------------------------------------------------------------------------


@dataclass
class BenchScenario:
    kind: str  # "verified" | "flood" | "mixed"
    target_url: str
    users: int = 6
    spawn_rate: float = 1.0  # users started per second
    duration: int = 60  # hold seconds at full load
    flood_threads: int = 64
    think_time: float = 1.0  # pause between a verified user's requests
    request_path: str = "/"
    origin_stub_stats_url: Optional[str] = None
    tls_ca: Optional[str] = None  # CA bundle path; None disables verification

    def __post_init__(self):
        if self.kind not in ("verified", "flood", "mixed"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.users < 1 or self.duration < 1:
            raise ValueError("users and duration must be >= 1")


@dataclass
class BenchReport:
    kind: str
    duration_s: float
    requests_total: int
    failures_total: int
    forwarded_to_origin: int
    blocked_at_gateway: int
    rps_series: List[int]
    failures_series: List[int]
    latency_p50_ms: float
    latency_p95_ms: float
    latency_p99_ms: float
    per_second_p50_ms: List[float]
    per_second_p95_ms: List[float]
    steady_rps: float = 0.0
    steady_p50_ms: float = 0.0
    client_forwarded: int = 0
    flood_breaches: int = 0  # flood requests that reached the origin; must stay 0

    def assert_identity(self) -> None:
        total = self.forwarded_to_origin + self.blocked_at_gateway + self.failures_total
        if self.requests_total != total:
            raise AccountingError(
                f"accounting identity violated: {self.requests_total} requests != "
                f"{self.forwarded_to_origin} forwarded + {self.blocked_at_gateway} blocked "
                f"+ {self.failures_total} failed"
            )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def percentile(values: List[float], q: float) -> float:
    """Nearest-rank percentile; 0.0 for an empty series."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, int(-(-q * len(ordered) // 100)))  # ceil without floats
    return ordered[rank - 1]


class _Collector:
    """Contention-safe accumulator for worker samples."""

    def __init__(self):
        self._lock = threading.Lock()
        self.samples: List[Tuple[float, float, str]] = []  # (wall time, latency ms, category)

    def record(self, when: float, latency_ms: float, category: str) -> None:
        with self._lock:
            self.samples.append((when, latency_ms, category))


def _build_report(
    kind: str,
    collector: _Collector,
    started: float,
    ended: float,
    forwarded_to_origin: int,
    steady_window: Optional[Tuple[float, float]] = None,
) -> BenchReport:
    samples = collector.samples
    seconds = max(1, int(ended - started + 0.999))
    rps = [0] * seconds
    failures_series = [0] * seconds
    latencies_by_second: List[List[float]] = [[] for _ in range(seconds)]
    latencies = []
    blocked = failed = forwarded_seen = breaches = 0
    steady_latencies = []
    steady_count = 0

    for when, latency_ms, category in samples:
        bucket = min(seconds - 1, max(0, int(when - started)))
        rps[bucket] += 1
        if category == "failed":
            failed += 1
            failures_series[bucket] += 1
            continue
        latencies.append(latency_ms)
        latencies_by_second[bucket].append(latency_ms)
        if category == "forwarded":
            forwarded_seen += 1
        elif category == "breach":
            breaches += 1
            forwarded_seen += 1  # it did reach the origin; the identity must balance
        else:
            blocked += 1
        if steady_window and steady_window[0] <= when < steady_window[1]:
            steady_latencies.append(latency_ms)
            steady_count += 1

    steady_rps = 0.0
    if steady_window:
        span = max(steady_window[1] - steady_window[0], 1e-9)
        steady_rps = steady_count / span

    return BenchReport(
        kind=kind,
        duration_s=round(ended - started, 3),
        requests_total=len(samples),
        failures_total=failed,
        forwarded_to_origin=forwarded_to_origin,
        blocked_at_gateway=blocked,
        rps_series=rps,
        failures_series=failures_series,
        latency_p50_ms=round(percentile(latencies, 50), 3),
        latency_p95_ms=round(percentile(latencies, 95), 3),
        latency_p99_ms=round(percentile(latencies, 99), 3),
        per_second_p50_ms=[round(percentile(v, 50), 3) for v in latencies_by_second],
        per_second_p95_ms=[round(percentile(v, 95), 3) for v in latencies_by_second],
        steady_rps=round(steady_rps, 3),
        steady_p50_ms=round(percentile(steady_latencies, 50), 3),
        client_forwarded=forwarded_seen,
        flood_breaches=breaches,
    )


# --------------------------------------------------------------------------
# ceremony + workers
# --------------------------------------------------------------------------


def perform_ceremony(
    session: requests.Session,
    base_url: str,
    authenticator: Optional[SoftAuthenticator] = None,
    behavior: AuthenticatorBehavior = HONEST,
    verify=None,
    origin: Optional[str] = None,
    redirect_to: str = "/",
) -> requests.Response:
    """Complete the challenge/verify exchange; the session gains the cookie.

    origin defaults to base_url; pass it explicitly when the gateway is
    addressed by IP but expects its rp_id host in the client data.
    """
    if authenticator is None:
        authenticator = SoftAuthenticator()
    challenge = session.get(f"{base_url}/__cahicha/challenge", timeout=10, verify=verify)
    challenge.raise_for_status()
    wire = challenge.json()
    public_key = wire["publicKey"]
    options = CreationOptions(
        record_id=wire["record_id"],
        challenge=public_key["challenge"],
        rp_id=public_key["rp"]["id"],
        rp_name=public_key["rp"]["name"],
        user_id=b"",
        user_name=public_key["user"]["name"],
        user_display_name=public_key["user"]["displayName"],
        pub_key_cred_params=tuple(p["alg"] for p in public_key["pubKeyCredParams"]),
        user_verification=public_key["authenticatorSelection"]["userVerification"],
        attestation=public_key["attestation"],
        timeout_ms=public_key["timeout"],
    )
    response = authenticator.create_credential(options, origin or base_url, behavior)
    submission = session.post(
        f"{base_url}/__cahicha/verify",
        json={
            "record_id": response.record_id,
            "attestation_object_b64": encode_base64url(response.attestation_object),
            "client_data_b64": encode_base64url(response.client_data),
            "redirect_to": redirect_to,
        },
        timeout=10,
        allow_redirects=False,
        verify=verify,
    )
    return submission


def _verified_worker(
    scenario: BenchScenario,
    collector: _Collector,
    stop_at: float,
    ready: threading.Event,
) -> None:
    session = requests.Session()
    verify = scenario.tls_ca if scenario.tls_ca else False
    try:
        submission = perform_ceremony(session, scenario.target_url, verify=verify)
        if submission.status_code != 303:
            raise TargetUnreachable(f"ceremony rejected: {submission.status_code}")
    except Exception:
        logger.exception("worker ceremony failed")
        collector.record(time.time(), 0.0, "failed")
        ready.set()
        return
    ready.set()

    url = scenario.target_url.rstrip("/") + scenario.request_path
    while time.time() < stop_at:
        begin = time.perf_counter()
        when = time.time()
        try:
            reply = session.get(url, timeout=10, verify=verify)
            latency_ms = (time.perf_counter() - begin) * 1000.0
            if reply.headers.get(STUB_MARKER_HEADER) == "1" and reply.ok:
                collector.record(when, latency_ms, "forwarded")
            elif reply.status_code >= 500:
                collector.record(when, latency_ms, "failed")
            else:
                collector.record(when, latency_ms, "blocked")
        except requests.RequestException:
            collector.record(when, 0.0, "failed")
        if scenario.think_time > 0:
            time.sleep(scenario.think_time)


def _flood_worker(scenario: BenchScenario, collector: _Collector, stop_at: float) -> None:
    # uniform headers, no cookies, no ceremony: the bot signature
    session = requests.Session()
    session.headers.update({"User-Agent": FLOOD_USER_AGENT, "Accept": "*/*"})
    verify = scenario.tls_ca if scenario.tls_ca else False
    url = scenario.target_url.rstrip("/") + scenario.request_path
    use_post = False
    while time.time() < stop_at:
        begin = time.perf_counter()
        when = time.time()
        try:
            if use_post:
                reply = session.post(url, data=b"x=1", timeout=10, verify=verify)
            else:
                reply = session.get(url, timeout=10, verify=verify)
            use_post = not use_post
            latency_ms = (time.perf_counter() - begin) * 1000.0
            if reply.headers.get(STUB_MARKER_HEADER) == "1":
                collector.record(when, latency_ms, "breach")  # gate breach, never expected
            elif reply.status_code >= 500:
                collector.record(when, latency_ms, "failed")
            else:
                collector.record(when, latency_ms, "blocked")
        except requests.RequestException:
            collector.record(when, 0.0, "failed")


def _preflight(scenario: BenchScenario) -> None:
    verify = scenario.tls_ca if scenario.tls_ca else False
    try:
        requests.get(
            f"{scenario.target_url}/__cahicha/challenge", timeout=5, verify=verify
        ).raise_for_status()
    except requests.RequestException as exc:
        raise TargetUnreachable(f"gateway not reachable at {scenario.target_url}: {exc}") from exc


# --------------------------------------------------------------------------
# runners
# --------------------------------------------------------------------------


def run_verified_load(scenario: BenchScenario) -> BenchReport:
    """Ramp-up / hold / ramp-down profile with verified clients."""
    _preflight(scenario)
    arrivals_before = _stub_arrivals(scenario)
    collector = _Collector()
    started = time.time()
    interval = 1.0 / max(scenario.spawn_rate, 0.001)
    ramp = interval * (scenario.users - 1)
    hold_end = started + ramp + scenario.duration

    threads = []
    for index in range(scenario.users):
        ready = threading.Event()
        # stagger stops symmetrically with starts: ramp-down mirrors ramp-up
        stop_at = hold_end + index * interval
        worker = threading.Thread(
            target=_verified_worker, args=(scenario, collector, stop_at, ready), daemon=True
        )
        worker.start()
        threads.append(worker)
        ready.wait(timeout=30)
        if index < scenario.users - 1:
            time.sleep(interval)

    for worker in threads:
        worker.join()
    ended = time.time()
    steady_window = (started + ramp + 2.0, hold_end)
    return _build_report(
        scenario.kind, collector, started, ended,
        _stub_arrivals(scenario) - arrivals_before,
        steady_window=steady_window,
    )


def run_bot_flood(scenario: BenchScenario) -> BenchReport:
    """Cookie-less flood; forwarded_to_origin must come back 0."""
    _preflight(scenario)
    arrivals_before = _stub_arrivals(scenario)
    collector = _Collector()
    started = time.time()
    stop_at = started + scenario.duration
    threads = [
        threading.Thread(target=_flood_worker, args=(scenario, collector, stop_at), daemon=True)
        for _ in range(scenario.flood_threads)
    ]
    for worker in threads:
        worker.start()
    for worker in threads:
        worker.join()
    ended = time.time()
    return _build_report(
        scenario.kind, collector, started, ended,
        _stub_arrivals(scenario) - arrivals_before,
    )


def run_mixed(scenario: BenchScenario) -> BenchReport:
    """Flood plus verified clients exercising the gate simultaneously."""
    _preflight(scenario)
    arrivals_before = _stub_arrivals(scenario)
    collector = _Collector()
    started = time.time()
    stop_at = started + scenario.duration

    flood = [
        threading.Thread(target=_flood_worker, args=(scenario, collector, stop_at), daemon=True)
        for _ in range(scenario.flood_threads)
    ]
    verified = []
    for _ in range(scenario.users):
        ready = threading.Event()
        worker = threading.Thread(
            target=_verified_worker, args=(scenario, collector, stop_at, ready), daemon=True
        )
        worker.start()
        verified.append((worker, ready))
    for worker, ready in verified:
        ready.wait(timeout=30)
    for worker in flood:
        worker.start()
    for worker in flood:
        worker.join()
    for worker, _ in verified:
        worker.join()
    ended = time.time()
    return _build_report(
        scenario.kind, collector, started, ended,
        _stub_arrivals(scenario) - arrivals_before,
    )


def _stub_arrivals(scenario: BenchScenario) -> int:
    if not scenario.origin_stub_stats_url:
        raise TargetUnreachable("origin stub stats url not configured")
    return read_stub_arrivals(scenario.origin_stub_stats_url)


RUNNERS = {"verified": run_verified_load, "flood": run_bot_flood, "mixed": run_mixed}


# --------------------------------------------------------------------------
# report output
# --------------------------------------------------------------------------


def emit_report(report: BenchReport, path: str) -> None:
    """Serialize to .json or .csv; the accounting identity gates the write."""
    report.assert_identity()
    if path.endswith(".csv"):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["second", "requests", "failures", "p50_ms", "p95_ms"])
            for second, count in enumerate(report.rps_series):
                writer.writerow(
                    [
                        second,
                        count,
                        report.failures_series[second],
                        report.per_second_p50_ms[second],
                        report.per_second_p95_ms[second],
                    ]
                )
    else:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(report.to_dict(), handle, indent=2)
            handle.write("\n")


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="cahicha-loadbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--target", required=True, help="gateway base url")
        p.add_argument("--duration", type=int, default=60)
        p.add_argument("--report", help="output path (.json or .csv)")
        p.add_argument("--origin-stub-port", type=int, help="port of the origin stub (for its arrival counter)")
        p.add_argument("--origin-stub-host", default="127.0.0.1")
        p.add_argument("--tls-ca", help="CA bundle to trust for https targets")

    verified = sub.add_parser("verified", help="ramped verified-user load")
    common(verified)
    verified.add_argument("--users", type=int, default=6)
    verified.add_argument("--spawn-rate", type=float, default=1.0)
    verified.add_argument("--think", type=float, default=1.0)

    flood = sub.add_parser("flood", help="cookie-less request flood")
    common(flood)
    flood.add_argument("--threads", type=int, default=64)

    mixed = sub.add_parser("mixed", help="flood with concurrent verified clients")
    common(mixed)
    mixed.add_argument("--users", type=int, default=1)
    mixed.add_argument("--threads", type=int, default=64)
    mixed.add_argument("--think", type=float, default=1.0)

    stub = sub.add_parser("stub", help="run the instrumented origin stub")
    stub.add_argument("--port", type=int, default=8080)
    stub.add_argument("--host", default="127.0.0.1")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    if args.command == "stub":
        origin = OriginStub(args.host, args.port)
        print(f"origin stub on http://{args.host}:{origin.port} (stats at /__stub/stats)")
        try:
            origin.server.serve_forever()
        except KeyboardInterrupt:
            origin.stop()
        return 0

    stats_url = None
    if args.origin_stub_port:
        stats_url = f"http://{args.origin_stub_host}:{args.origin_stub_port}/__stub/stats"
    scenario = BenchScenario(
        kind=args.command,
        target_url=args.target.rstrip("/"),
        users=getattr(args, "users", 1),
        spawn_rate=getattr(args, "spawn_rate", 1.0),
        duration=args.duration,
        flood_threads=getattr(args, "threads", 64),
        think_time=getattr(args, "think", 1.0),
        origin_stub_stats_url=stats_url,
        tls_ca=args.tls_ca,
    )
    try:
        report = RUNNERS[args.command](scenario)
    except TargetUnreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        report.assert_identity()
    except AccountingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    summary = (
        f"{report.kind}: {report.requests_total} requests, {report.failures_total} failures, "
        f"{report.forwarded_to_origin} forwarded to origin, {report.blocked_at_gateway} blocked, "
        f"p50={report.latency_p50_ms}ms p95={report.latency_p95_ms}ms p99={report.latency_p99_ms}ms"
    )
    print(summary)
    if args.report:
        emit_report(report, args.report)
        print(f"report written to {args.report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
