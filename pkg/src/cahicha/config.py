"""Gateway deployment configuration.

Sources, in override order: built-in defaults < config file (key = value,
TOML-style scalars and string lists) < CAHICHA_* environment variables <
command-line flags. Strict mode without metadata paths is a startup
error, never a runtime fallback.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from typing import List, Mapping, Optional

ENV_PREFIX = "CAHICHA_"

_LIST_RE = re.compile(r"^\[(.*)\]$", re.DOTALL)


class ConfigError(ValueError):
    pass


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8443"
    upstream: str = "127.0.0.1:8080"
    mode: str = "general"  # "general" | "strict"
    rp_id: str = "localhost"
    expected_origins: List[str] = field(default_factory=list)  # empty: derived from listen
    cookie_name: str = "cahicha_token"
    token_key_path: str = "cahicha.key"
    token_max_age_hours: int = 24
    challenge_ttl_seconds: int = 120
    tls_cert_path: Optional[str] = None
    tls_key_path: Optional[str] = None
    unsafe_no_tls: bool = False
    mds_blob_path: Optional[str] = None
    mds_root_path: Optional[str] = None
    access_log_path: Optional[str] = None
    upstream_timeout_seconds: float = 30.0
    assets_dir: Optional[str] = None

    def validate(self) -> "GatewayConfig":
        if self.mode not in ("general", "strict"):
            raise ConfigError(f"mode must be general or strict, got {self.mode!r}")
        if self.mode == "strict" and not (self.mds_blob_path and self.mds_root_path):
            raise ConfigError("strict mode requires mds_blob_path and mds_root_path")
        if _normalize_hostport(self.upstream) == _normalize_hostport(self.listen):
            raise ConfigError("upstream_origin must not equal listen_address")
        if not self.unsafe_no_tls and not (self.tls_cert_path and self.tls_key_path):
            raise ConfigError(
                "TLS is mandatory (ceremonies need a secure context); "
                "provide tls_cert_path/tls_key_path or pass --unsafe-no-tls for localhost dev"
            )
        if self.token_max_age_hours <= 0 or self.challenge_ttl_seconds <= 0:
            raise ConfigError("token_max_age_hours and challenge_ttl_seconds must be positive")
        return self

    @property
    def listen_host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def listen_port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    @property
    def upstream_host(self) -> str:
        return _strip_scheme(self.upstream).rsplit(":", 1)[0]

    @property
    def upstream_port(self) -> int:
        bare = _strip_scheme(self.upstream)
        if ":" in bare:
            return int(bare.rsplit(":", 1)[1])
        return 80


def _strip_scheme(address: str) -> str:
    return address.split("://", 1)[1] if "://" in address else address


def _normalize_hostport(address: str) -> str:
    return _strip_scheme(address).rstrip("/")


def _parse_scalar(raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    match = _LIST_RE.match(raw)
    if match:
        inner = match.group(1).strip()
        if not inner:
            return []
        return [_unquote(item.strip()) for item in inner.split(",")]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return _unquote(raw)


def _unquote(raw: str) -> str:
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def parse_config_file(path: str) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = stripped.partition("=")
            values[key.strip()] = _parse_scalar(raw)
    return values


def load_config(
    path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[dict] = None,
) -> GatewayConfig:
    if env is None:
        env = os.environ
    values: dict = {}
    if path:
        values.update(parse_config_file(path))

    known = {f.name: f for f in fields(GatewayConfig)}
    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            raw = env[env_key]
            if name == "expected_origins":
                values[name] = [item.strip() for item in raw.split(",") if item.strip()]
            else:
                values[name] = _parse_scalar(raw)

    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    config = GatewayConfig(**values)
    return config.validate()
