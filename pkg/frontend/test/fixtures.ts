/** Payloads recorded verbatim from a live service run against the demo city. */

import type { SessionSnapshot, TurnResult } from "../src/api.js";
import recorded from "./fixtures/recorded.json";

function turn(name: keyof typeof recorded): TurnResult {
  return recorded[name] as unknown as TurnResult;
}

export const TURN_MULTI = turn("turn_multi_entity");
export const TURN_SINGLE = turn("turn_single_entity");
export const TURN_BOOKING_DATE = turn("turn_booking_date");
export const TURN_BOOKING_TIME = turn("turn_booking_time");
export const TURN_BOOKING_PARTY = turn("turn_booking_party");
export const TURN_CONFIRMED = turn("turn_booking_confirmed");
export const TURN_RESET = turn("turn_reset");
export const SESSION_CREATED = recorded.session_created as {
  session_id: string;
};
export const SESSION_SNAPSHOT =
  recorded.session_snapshot as unknown as SessionSnapshot;
export const ERROR_UNKNOWN_CITY = recorded.error_unknown_city as {
  error: { code: string; message: string };
};
