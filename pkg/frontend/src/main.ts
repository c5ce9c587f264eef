import { runVerification } from "./ceremony";

const PHASE_TEXT: Record<string, string> = {
  loading: "Requesting challenge…",
  "awaiting-gesture": "Touch your security key or confirm the device prompt…",
  submitting: "Submitting attestation…",
  redirecting: "Verified. Taking you back…",
};

function start(): void {
  const status = document.getElementById("status");
  const retry = document.getElementById("retry") as HTMLButtonElement | null;
  if (!status || !retry) {
    return;
  }

  const run = () => {
    retry.hidden = true;
    void runVerification({
      fetchFn: (input, init) => fetch(input, init),
      credentials:
        "PublicKeyCredential" in window && navigator.credentials
          ? navigator.credentials
          : null,
      redirectTo: location.pathname + location.search,
      navigate: (url) => {
        location.href = url;
      },
      onState: (state) => {
        if (state.phase === "failed") {
          status.textContent = `Verification failed: ${state.failureReason}`;
          retry.hidden = false;
        } else {
          status.textContent = PHASE_TEXT[state.phase] ?? state.phase;
        }
      },
    });
  };

  retry.addEventListener("click", run);
  run();
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", start);
} else {
  start();
}
