import contextlib

import pytest

from cahicha.engine import (
    Mode,
    VerificationEngine,
    VerificationPolicy,
)
from cahicha.fixtures import CertificateAuthority, MetadataEntrySpec, build_mds_blob
from cahicha.mds import load_mds_blob
from cahicha.softauth import AttestationFixtureKeys, SoftAuthenticator

ORIGIN = "https://localhost:8443"
RP_ID = "localhost"
ROGUE_AAGUID = bytes.fromhex("deadbeefdeadbeefdeadbeefdeadbeef")


@pytest.fixture(scope="session")
def authority():
    return CertificateAuthority(seed=20260808)


@pytest.fixture(scope="session")
def fixture_keys(authority):
    """Attestation chain for the aaguid registered in the fixture blob."""
    return AttestationFixtureKeys.create(authority)


@pytest.fixture(scope="session")
def rogue_keys(authority):
    """Valid chain from the same CA, but an aaguid absent from the blob."""
    return AttestationFixtureKeys.create(authority, aaguid=ROGUE_AAGUID)


@pytest.fixture(scope="session")
def mds_blob(authority, fixture_keys):
    return build_mds_blob(
        authority,
        [
            MetadataEntrySpec(
                aaguid=fixture_keys.aaguid,
                description="Fixture Security Key",
                root_certificates_der=[authority.certificate_der],
            ),
            MetadataEntrySpec(
                aaguid=bytes.fromhex("0102030405060708090a0b0c0d0e0f10"),
                description="Revoked Fixture Key",
                root_certificates_der=[authority.certificate_der],
                status="REVOKED",
            ),
        ],
    )


@pytest.fixture(scope="session")
def trust_store(mds_blob, authority):
    return load_mds_blob(mds_blob, authority.certificate_der)


def make_policy(mode=Mode.GENERAL, **overrides) -> VerificationPolicy:
    defaults = dict(mode=mode, expected_origins=(ORIGIN,), rp_id=RP_ID)
    defaults.update(overrides)
    return VerificationPolicy(**defaults)


@pytest.fixture
def general_engine():
    return VerificationEngine(make_policy())


@pytest.fixture
def strict_engine(trust_store):
    return VerificationEngine(make_policy(mode=Mode.STRICT), trust_store=trust_store)


def run_ceremony(engine, authenticator=None, behavior=None, origin=ORIGIN, now_ms=1_000, mutate_options=None):
    """Issue a challenge, answer it with the oracle, return (record, response)."""
    if authenticator is None:
        authenticator = SoftAuthenticator()
    record, options = engine.issue_challenge(now_ms)
    if mutate_options is not None:
        options = mutate_options(options)
    kwargs = {} if behavior is None else {"behavior": behavior}
    return record, authenticator.create_credential(options, origin, **kwargs)


@contextlib.contextmanager
def gateway_environment(tmp_path, mode="general", tls=False, trust_files=None, **config_overrides):
    """Origin stub + gateway on free ports; yields a small handle object."""
    from cahicha.config import GatewayConfig
    from cahicha.fixtures import self_signed_server_cert
    from cahicha.gateway import Gateway
    from cahicha.loadbench import OriginStub

    stub = OriginStub().start()
    settings = dict(
        listen="127.0.0.1:0",
        upstream=f"127.0.0.1:{stub.port}",
        mode=mode,
        rp_id=RP_ID,
        token_key_path=str(tmp_path / "token.key"),
        access_log_path=str(tmp_path / "access.log"),
        unsafe_no_tls=not tls,
    )
    ca_path = None
    if tls:
        cert_pem, key_pem = self_signed_server_cert([RP_ID])
        cert_file = tmp_path / "tls-cert.pem"
        key_file = tmp_path / "tls-key.pem"
        cert_file.write_bytes(cert_pem)
        key_file.write_bytes(key_pem)
        settings["tls_cert_path"] = str(cert_file)
        settings["tls_key_path"] = str(key_file)
        ca_path = str(cert_file)
    if mode == "strict":
        settings["mds_blob_path"] = trust_files[0]
        settings["mds_root_path"] = trust_files[1]
    settings.update(config_overrides)

    gateway = Gateway(GatewayConfig(**settings).validate())
    gateway.start_background()

    class Env:
        pass

    env = Env()
    env.gateway = gateway
    env.stub = stub
    env.base_url = f"{'https' if tls else 'http'}://{RP_ID}:{gateway.port}"
    env.ca_path = ca_path
    env.access_log_path = settings["access_log_path"]
    env.stats_url = f"http://127.0.0.1:{stub.port}/__stub/stats"
    try:
        yield env
    finally:
        gateway.shutdown()
        stub.stop()


@pytest.fixture
def gateway_env(tmp_path):
    with gateway_environment(tmp_path) as env:
        yield env
