/** Pure view-model for the chat screen: state + reducer, no DOM, no I/O. */

import type { TurnResult } from "./api.js";

export interface Message {
  role: "user" | "system";
  text: string;
}

export interface TurnError {
  status: number;
  code: string;
  message: string;
}

export type BannerKind = "busy" | "provider" | "error";

export interface Banner {
  kind: BannerKind;
  message: string;
  /** Utterance to resend when the user hits retry; null = not retryable. */
  retryText: string | null;
}

export interface ChatState {
  city: string;
  sessionId: string | null;
  /** Session creation failed; the chat is unusable. */
  fatal: string | null;
  /** A turn is in flight: input stays disabled. */
  pending: boolean;
  messages: Message[];
  /** Last successful turn; drives the cards / gallery / booking panels. */
  latest: TurnResult | null;
  remaining: number | null;
  mode: "search" | "booking";
  banner: Banner | null;
}

export type ChatEvent =
  | { type: "session_created"; sessionId: string }
  | { type: "session_failed"; error: TurnError }
  | { type: "turn_submitted"; text: string }
  | { type: "turn_succeeded"; result: TurnResult }
  | { type: "turn_failed"; text: string; error: TurnError }
  | { type: "banner_dismissed" };

export function initialState(city: string): ChatState {
  return {
    city,
    sessionId: null,
    fatal: null,
    pending: false,
    messages: [],
    latest: null,
    remaining: null,
    mode: "search",
    banner: null,
  };
}

function bannerFor(error: TurnError, text: string): Banner {
  if (error.status === 409) {
    return {
      kind: "busy",
      message: "Still answering the previous message — try again in a moment.",
      retryText: text,
    };
  }
  if (error.status === 502) {
    return {
      kind: "provider",
      message: "The translation service is unavailable right now.",
      retryText: text,
    };
  }
  return { kind: "error", message: error.message, retryText: null };
}

export function reduce(state: ChatState, event: ChatEvent): ChatState {
  switch (event.type) {
    case "session_created":
      return { ...state, sessionId: event.sessionId, fatal: null };
    case "session_failed":
      return { ...state, fatal: event.error.message };
    case "turn_submitted":
      return {
        ...state,
        pending: true,
        banner: null,
        messages: [...state.messages, { role: "user", text: event.text }],
      };
    case "turn_succeeded":
      return {
        ...state,
        pending: false,
        latest: event.result,
        remaining: event.result.entities_remaining.length,
        mode: event.result.mode,
        messages: [
          ...state.messages,
          { role: "system", text: event.result.spoken },
        ],
      };
    case "turn_failed":
      return {
        ...state,
        pending: false,
        banner: bannerFor(event.error, event.text),
      };
    case "banner_dismissed":
      return { ...state, banner: null };
  }
}
