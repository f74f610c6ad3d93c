/** Entry point: wires the API client, the reducer, and the renderer. */

import { ApiClient, ApiError } from "./api.js";
import type { ChatEvent, ChatState, TurnError } from "./state.js";
import { initialState, reduce } from "./state.js";
import { render } from "./render.js";

function toTurnError(err: unknown): TurnError {
  if (err instanceof ApiError) {
    return { status: err.status, code: err.code, message: err.message };
  }
  return { status: 0, code: "network", message: "Could not reach the service." };
}

/** The slice of ApiClient the app needs; tests substitute a fake. */
export type ServiceClient = Pick<
  ApiClient,
  "createSession" | "postTurn" | "photoUrl"
>;

export function startApp(root: HTMLElement, client: ServiceClient, city: string) {
  let state: ChatState = initialState(city);

  const handlers = {
    onSubmit: (text: string) => void sendTurn(text),
    onRetry: (text: string) => void sendTurn(text, { resend: true }),
    onDismiss: () => dispatch({ type: "banner_dismissed" }),
    photoUrl: (photoId: string) => client.photoUrl(photoId),
  };

  function dispatch(event: ChatEvent): void {
    state = reduce(state, event);
    render(root, state, handlers);
  }

  async function sendTurn(text: string, opts?: { resend: boolean }) {
    if (state.pending || state.sessionId === null) return;
    const sessionId = state.sessionId;
    // A retried utterance is already in the stream; don't append it twice.
    if (opts?.resend) {
      dispatch({ type: "banner_dismissed" });
      state = { ...state, pending: true };
      render(root, state, handlers);
    } else {
      dispatch({ type: "turn_submitted", text });
    }
    try {
      const result = await client.postTurn(sessionId, text);
      dispatch({ type: "turn_succeeded", result });
    } catch (err) {
      dispatch({ type: "turn_failed", text, error: toTurnError(err) });
    }
  }

  render(root, state, handlers);
  client.createSession(city).then(
    (sessionId) => dispatch({ type: "session_created", sessionId }),
    (err) => dispatch({ type: "session_failed", error: toTurnError(err) }),
  );

  return { dispatch, sendTurn, get state() { return state; } };
}

declare global {
  interface Window { __polyfind?: ReturnType<typeof startApp> }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(window.location.search);
  const city = params.get("city") ?? "demo";
  const client = new ApiClient(params.get("api") ?? "");
  window.__polyfind = startApp(
    document.getElementById("app")!,
    client,
    city,
  );
}
