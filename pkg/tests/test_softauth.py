import dataclasses

import pytest

from cahicha.codec import decode_attestation_object, parse_client_data, sha256
from cahicha.engine import RejectionReason
from cahicha.softauth import (
    ATTESTATION_NONE,
    ATTESTATION_PACKED_SELF,
    ATTESTATION_PACKED_X5C,
    DEFAULT_AAGUID,
    AuthenticatorBehavior,
    SoftAuthenticator,
    UnsupportedOption,
    export_response,
    load_response,
    replay_response,
)
from tests.conftest import ORIGIN, run_ceremony


class TestOracleFidelity:
    def test_honest_response_round_trips_with_no_field_loss(self, general_engine):
        behavior = AuthenticatorBehavior(sign_count_start=7)
        _, response = run_ceremony(general_engine, behavior=behavior)

        client = parse_client_data(response.client_data)
        assert client.ceremony_type == "webauthn.create"
        assert client.origin == ORIGIN

        attestation = decode_attestation_object(response.attestation_object)
        auth = attestation.auth_data
        assert auth.rp_id_hash == sha256(b"localhost")
        assert auth.flags.up and auth.flags.uv and auth.flags.at and not auth.flags.ed
        assert auth.sign_count == 7
        assert auth.attested_credential.aaguid == DEFAULT_AAGUID
        assert len(auth.attested_credential.credential_id) == 32
        assert auth.serialize() == attestation.auth_data_bytes

    def test_x5c_response_carries_chain(self, general_engine, fixture_keys):
        authenticator = SoftAuthenticator(attestation=fixture_keys)
        behavior = AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C)
        _, response = run_ceremony(general_engine, authenticator=authenticator, behavior=behavior)
        attestation = decode_attestation_object(response.attestation_object)
        assert attestation.attestation_statement["x5c"] == fixture_keys.certificate_chain_der
        assert attestation.auth_data.attested_credential.aaguid == fixture_keys.aaguid

    def test_none_format_has_empty_statement(self, general_engine):
        behavior = AuthenticatorBehavior(attestation_format=ATTESTATION_NONE)
        _, response = run_ceremony(general_engine, behavior=behavior)
        attestation = decode_attestation_object(response.attestation_object)
        assert attestation.format == "none"
        assert attestation.attestation_statement == {}

    def test_flags_override_controls_layout(self, general_engine):
        # ED set: an empty extensions map is appended and parses
        behavior = AuthenticatorBehavior(flags_override=0x01 | 0x40 | 0x80)
        _, response = run_ceremony(general_engine, behavior=behavior)
        auth = decode_attestation_object(response.attestation_object).auth_data
        assert auth.flags.ed and auth.extension_bytes == b"\xa0"
        # AT clear: no attested credential section
        behavior = AuthenticatorBehavior(flags_override=0x01)
        _, response = run_ceremony(general_engine, behavior=behavior)
        auth = decode_attestation_object(response.attestation_object).auth_data
        assert auth.attested_credential is None

    def test_rejects_options_without_es256(self, general_engine):
        _, options = general_engine.issue_challenge(1_000)
        options = dataclasses.replace(options, pub_key_cred_params=(-257,))
        with pytest.raises(UnsupportedOption):
            SoftAuthenticator().create_credential(options, ORIGIN)

    def test_x5c_without_provisioned_keys_refused(self, general_engine):
        _, options = general_engine.issue_challenge(1_000)
        behavior = AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C)
        with pytest.raises(UnsupportedOption):
            SoftAuthenticator().create_credential(options, ORIGIN, behavior)


class TestBehaviorCoverage:
    """Each adversarial knob in isolation maps to its rejection reason."""

    @pytest.mark.parametrize(
        "behavior,expected",
        [
            (AuthenticatorBehavior(set_up=False), RejectionReason.MISSING_USER_PRESENCE),
            (AuthenticatorBehavior(wrong_challenge=b"\x42" * 32), RejectionReason.CHALLENGE_MISMATCH),
            (AuthenticatorBehavior(wrong_origin="https://attacker.example"), RejectionReason.ORIGIN_MISMATCH),
            (AuthenticatorBehavior(corrupt_signature=True), RejectionReason.BAD_SIGNATURE),
        ],
    )
    def test_general_mode_table(self, general_engine, behavior, expected):
        _, response = run_ceremony(general_engine, behavior=behavior)
        outcome = general_engine.verify_attestation(response, 2_000)
        assert outcome.rejection_reason is expected

    @pytest.mark.parametrize(
        "behavior,expected",
        [
            (AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C, set_up=False),
             RejectionReason.MISSING_USER_PRESENCE),
            (AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C, set_uv=False),
             RejectionReason.MISSING_USER_VERIFICATION),
            (AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C, corrupt_signature=True),
             RejectionReason.BAD_SIGNATURE),
            (AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_SELF),
             RejectionReason.UNTRUSTED_AUTHENTICATOR),
        ],
    )
    def test_strict_mode_table(self, strict_engine, fixture_keys, behavior, expected):
        authenticator = SoftAuthenticator(attestation=fixture_keys)
        _, response = run_ceremony(strict_engine, authenticator=authenticator, behavior=behavior)
        outcome = strict_engine.verify_attestation(response, 2_000)
        assert outcome.rejection_reason is expected

    def test_honest_accepted_in_both_modes(self, general_engine, strict_engine, fixture_keys):
        authenticator = SoftAuthenticator(attestation=fixture_keys)
        behavior = AuthenticatorBehavior(attestation_format=ATTESTATION_PACKED_X5C)
        for engine in (general_engine, strict_engine):
            _, response = run_ceremony(engine, authenticator=authenticator, behavior=behavior)
            assert engine.verify_attestation(response, 2_000).is_human


class TestDeterminism:
    def test_identical_seed_and_behavior_yield_identical_bytes(self, general_engine):
        record, options = general_engine.issue_challenge(1_000)
        first = SoftAuthenticator(seed=2024).create_credential(options, ORIGIN)
        second = SoftAuthenticator(seed=2024).create_credential(options, ORIGIN)
        assert first.attestation_object == second.attestation_object
        assert first.client_data == second.client_data

    def test_different_seeds_differ(self, general_engine):
        _, options = general_engine.issue_challenge(1_000)
        first = SoftAuthenticator(seed=1).create_credential(options, ORIGIN)
        second = SoftAuthenticator(seed=2).create_credential(options, ORIGIN)
        assert first.attestation_object != second.attestation_object

    def test_unseeded_instances_differ(self, general_engine):
        _, options = general_engine.issue_challenge(1_000)
        first = SoftAuthenticator().create_credential(options, ORIGIN)
        second = SoftAuthenticator().create_credential(options, ORIGIN)
        assert first.attestation_object != second.attestation_object


class TestReplay:
    def test_replay_is_byte_identical(self, general_engine):
        _, response = run_ceremony(general_engine)
        copy = replay_response(response)
        assert copy == response
        assert copy is not response

    def test_replay_of_accepted_response_rejected(self, general_engine):
        _, response = run_ceremony(general_engine)
        assert general_engine.verify_attestation(response, 2_000).is_human
        outcome = general_engine.verify_attestation(replay_response(response), 2_000)
        assert outcome.rejection_reason is RejectionReason.CHALLENGE_REPLAYED

    def test_copy_of_unsubmitted_response_is_first_use(self, general_engine):
        _, response = run_ceremony(general_engine)
        copy = replay_response(response)
        assert general_engine.verify_attestation(copy, 2_000).is_human

    def test_replay_against_different_record(self, general_engine):
        _, response = run_ceremony(general_engine)
        other_record, _ = general_engine.issue_challenge(1_000)
        moved = dataclasses.replace(replay_response(response), record_id=other_record.record_id)
        outcome = general_engine.verify_attestation(moved, 2_000)
        assert outcome.rejection_reason is RejectionReason.CHALLENGE_MISMATCH


class TestFixtureExport:
    def test_export_load_round_trip(self, tmp_path, general_engine):
        _, response = run_ceremony(general_engine)
        path = tmp_path / "response.json"
        export_response(response, str(path))
        loaded = load_response(str(path))
        assert loaded == response
