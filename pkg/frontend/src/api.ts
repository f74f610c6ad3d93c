/** Typed client for the polyfind session service HTTP API. */

export interface ResponseItem {
  entity_id: string;
  entity_name: string;
  kind: "fact" | "review" | "menu" | "photo";
  text: string;
  score: number;
}

export interface PhotoItem {
  photo_id: string;
  caption: string | null;
  score: number;
}

export interface BookingSlots {
  date: string | null;
  time: string | null;
  party_size: number | null;
}

export interface Confirmation {
  entity_id: string;
  date: string;
  time: string;
  party_size: number;
  session_id: string;
}

export interface TurnResult {
  responses: ResponseItem[];
  photos: PhotoItem[];
  spoken: string;
  entities_remaining: string[];
  mode: "search" | "booking";
  booking?: BookingSlots;
  confirmation?: Confirmation;
}

export interface SessionSnapshot {
  session_id: string;
  city: string;
  language: string;
  entities_remaining: string[];
  mode: "search" | "booking";
  booking: BookingSlots;
  history_length: number;
  created: number;
  updated: number;
}

/** Error envelope every non-2xx body carries: {"error": {code, message}}. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = "unknown";
  let message = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body?.error?.code) {
      code = body.error.code;
      message = body.error.message ?? message;
    }
  } catch {
    /* non-JSON error body; keep the fallback */
  }
  return new ApiError(resp.status, code, message);
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const resp = await fetch(this.base + path, {
      method,
      headers: body === undefined
        ? undefined
        : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  async createSession(city: string, language?: string): Promise<string> {
    const body: Record<string, string> = { city };
    if (language !== undefined) body.language = language;
    const created = await this.request<{ session_id: string }>(
      "POST",
      "/v1/sessions",
      body,
    );
    return created.session_id;
  }

  postTurn(sessionId: string, text: string): Promise<TurnResult> {
    return this.request<TurnResult>(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/turns`,
      { text },
    );
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request<SessionSnapshot>(
      "GET",
      `/v1/sessions/${encodeURIComponent(sessionId)}`,
    );
  }

  /** URL for an <img> tag; photo bytes are served by the same service. */
  photoUrl(photoId: string): string {
    const parts = photoId.split("/").map(encodeURIComponent);
    return `${this.base}/v1/photos/${parts.join("/")}`;
  }
}
