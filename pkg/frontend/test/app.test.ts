import { describe, expect, it, vi } from "vitest";

import type { ServiceClient } from "../src/app.js";
import { startApp } from "../src/app.js";
import { ApiError } from "../src/api.js";
import { TURN_MULTI, TURN_SINGLE } from "./fixtures.js";

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function fakeClient(overrides: Partial<ServiceClient> = {}): ServiceClient {
  return {
    createSession: vi.fn(async () => "sid-1"),
    postTurn: vi.fn(async () => TURN_MULTI),
    photoUrl: (id: string) => `/v1/photos/${id}`,
    ...overrides,
  };
}

describe("startApp against a fake service", () => {
  it("enables the composer once the session exists", async () => {
    const root = document.createElement("div");
    startApp(root, fakeClient(), "demo");
    expect(root.querySelector<HTMLInputElement>(".utterance")!.disabled).toBe(
      true,
    );
    await flush();
    expect(root.querySelector<HTMLInputElement>(".utterance")!.disabled).toBe(
      false,
    );
  });

  it("runs a full turn through submit → pending → rendered result", async () => {
    const root = document.createElement("div");
    const client = fakeClient();
    const app = startApp(root, client, "demo");
    await flush();

    const input = root.querySelector<HTMLInputElement>(".utterance")!;
    input.value = "cheap mexican food";
    root
      .querySelector("form")!
      .dispatchEvent(new Event("submit", { cancelable: true }));
    expect(app.state.pending).toBe(true);
    await flush();

    expect(client.postTurn).toHaveBeenCalledWith("sid-1", "cheap mexican food");
    expect(app.state.pending).toBe(false);
    expect(root.querySelectorAll(".entity-card").length).toBe(2);
  });

  it("shows a busy banner on 409 and retries the same utterance", async () => {
    const root = document.createElement("div");
    const postTurn = vi
      .fn()
      .mockRejectedValueOnce(new ApiError(409, "busy", "turn in progress"))
      .mockResolvedValueOnce(TURN_SINGLE);
    const app = startApp(root, fakeClient({ postTurn }), "demo");
    await flush();

    const input = root.querySelector<HTMLInputElement>(".utterance")!;
    input.value = "the service stayed wonderful.";
    root
      .querySelector("form")!
      .dispatchEvent(new Event("submit", { cancelable: true }));
    await flush();
    expect(root.querySelector<HTMLElement>(".banner")!.dataset.kind).toBe(
      "busy",
    );
    // the utterance is only in the stream once
    expect(root.querySelectorAll(".msg.user").length).toBe(1);

    root.querySelector<HTMLButtonElement>("button.retry")!.click();
    await flush();
    expect(postTurn).toHaveBeenLastCalledWith(
      "sid-1",
      "the service stayed wonderful.",
    );
    expect(root.querySelectorAll(".msg.user").length).toBe(1);
    expect(app.state.remaining).toBe(1);
    expect(root.querySelectorAll(".gallery img").length).toBe(
      TURN_SINGLE.photos.length,
    );
  });

  it("shows the fatal panel when the session cannot be created", async () => {
    const root = document.createElement("div");
    const createSession = vi
      .fn()
      .mockRejectedValue(new ApiError(404, "unknown_city", "no such city"));
    startApp(root, fakeClient({ createSession }), "narnia");
    await flush();
    expect(root.querySelector(".fatal")!.textContent).toBe("no such city");
  });
});
