import {
  AttestationSubmission,
  FetchLike,
  fetchChallenge,
  submitAttestation,
  toPlatformOptions,
} from "./api";
import { bufferToBase64Url } from "./base64url";

export type Phase = "loading" | "awaiting-gesture" | "submitting" | "redirecting" | "failed";

export interface PageState {
  phase: Phase;
  recordId: string | null;
  redirectTo: string;
  failureReason: string | null;
}

/** The platform seam: in a browser this is navigator.credentials. */
export interface CredentialsApi {
  create(options: CredentialCreationOptions): Promise<Credential | null>;
}

export interface CeremonyEnvironment {
  fetchFn: FetchLike;
  credentials: CredentialsApi | null;
  /** Where to go after verification; captured from the blocked request. */
  redirectTo: string;
  navigate: (url: string) => void;
  onState?: (state: PageState) => void;
}

interface AttestationCredential extends Credential {
  response: {
    attestationObject: ArrayBuffer;
    clientDataJSON: ArrayBuffer;
  };
}

const UNSUPPORTED_BROWSER =
  "This browser has no platform credential support. Use a recent browser " +
  "with a security key, fingerprint reader, or screen-lock credential.";

/**
 * Run the full ceremony: fetch options, prompt for the hardware gesture,
 * submit the attestation, follow the redirect. A stale challenge (403
 * ChallengeExpired) is retried once automatically with a fresh challenge.
 *
 * Nothing beyond the ceremony response and its record_id ever leaves the
 * page; the returned state is terminal ("redirecting" or "failed").
 */
export async function runVerification(env: CeremonyEnvironment): Promise<PageState> {
  return attempt(env, true);
}

async function attempt(env: CeremonyEnvironment, retryStale: boolean): Promise<PageState> {
  let state: PageState = {
    phase: "loading",
    recordId: null,
    redirectTo: env.redirectTo,
    failureReason: null,
  };
  const advance = (next: Partial<PageState>): PageState => {
    state = { ...state, ...next };
    env.onState?.(state);
    return state;
  };
  advance({});

  if (!env.credentials) {
    return advance({ phase: "failed", failureReason: UNSUPPORTED_BROWSER });
  }

  let wire;
  try {
    wire = await fetchChallenge(env.fetchFn);
  } catch (error) {
    return advance({ phase: "failed", failureReason: describe(error) });
  }
  advance({ phase: "awaiting-gesture", recordId: wire.record_id });

  let credential: AttestationCredential;
  try {
    const created = await env.credentials.create(toPlatformOptions(wire));
    if (!created) {
      return advance({ phase: "failed", failureReason: "no credential produced" });
    }
    credential = created as AttestationCredential;
  } catch (error) {
    if (isDismissal(error)) {
      return advance({
        phase: "failed",
        failureReason: "The prompt was dismissed or timed out. Try again when ready.",
      });
    }
    return advance({ phase: "failed", failureReason: describe(error) });
  }

  advance({ phase: "submitting" });
  const submission: AttestationSubmission = {
    record_id: wire.record_id,
    attestation_object_b64: bufferToBase64Url(credential.response.attestationObject),
    client_data_b64: bufferToBase64Url(credential.response.clientDataJSON),
    redirect_to: env.redirectTo,
  };

  let response: Response;
  try {
    response = await submitAttestation(env.fetchFn, submission);
  } catch (error) {
    return advance({ phase: "failed", failureReason: describe(error) });
  }

  if (response.redirected) {
    advance({ phase: "redirecting" });
    env.navigate(response.url);
    return state;
  }
  if (response.ok) {
    // verification beat the redirect (e.g. fetch not following); reload in place
    advance({ phase: "redirecting" });
    env.navigate(env.redirectTo);
    return state;
  }

  let reason = `verification failed (${response.status})`;
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) {
      reason = body.error;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  if (reason === "ChallengeExpired" && retryStale) {
    return attempt(env, false);
  }
  return advance({ phase: "failed", failureReason: reason });
}

function isDismissal(error: unknown): boolean {
  return (
    error instanceof Error &&
    (error.name === "NotAllowedError" || error.name === "AbortError")
  );
}

function describe(error: unknown): string {
  if (error instanceof Error) {
    return error.message;
  }
  return String(error);
}
