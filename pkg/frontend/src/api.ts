import { base64UrlToBuffer } from "./base64url";

/** Creation options as the gateway serializes them (binary fields base64url). */
export interface WireCreationOptions {
  record_id: string;
  publicKey: {
    challenge: string;
    rp: { id: string; name: string };
    user: { id: string; name: string; displayName: string };
    pubKeyCredParams: Array<{ type: "public-key"; alg: number }>;
    authenticatorSelection: { userVerification: string };
    attestation: string;
    timeout: number;
  };
}

export interface AttestationSubmission {
  record_id: string;
  attestation_object_b64: string;
  client_data_b64: string;
  redirect_to: string;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export async function fetchChallenge(fetchFn: FetchLike): Promise<WireCreationOptions> {
  const response = await fetchFn("/__cahicha/challenge", {
    cache: "no-store",
    headers: { Accept: "application/json" },
  });
  if (!response.ok) {
    throw new Error(`challenge request failed (${response.status})`);
  }
  return (await response.json()) as WireCreationOptions;
}

/**
 * Decode the base64url binary fields (challenge, user.id) into buffers as
 * the platform API requires; everything else passes through unchanged.
 */
export function toPlatformOptions(wire: WireCreationOptions): CredentialCreationOptions {
  const pk = wire.publicKey;
  return {
    publicKey: {
      challenge: base64UrlToBuffer(pk.challenge),
      rp: pk.rp,
      user: {
        id: base64UrlToBuffer(pk.user.id),
        name: pk.user.name,
        displayName: pk.user.displayName,
      },
      pubKeyCredParams: pk.pubKeyCredParams,
      authenticatorSelection: pk.authenticatorSelection as AuthenticatorSelectionCriteria,
      attestation: pk.attestation as AttestationConveyancePreference,
      timeout: pk.timeout,
    },
  };
}

export async function submitAttestation(
  fetchFn: FetchLike,
  submission: AttestationSubmission
): Promise<Response> {
  return fetchFn("/__cahicha/verify", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(submission),
  });
}
