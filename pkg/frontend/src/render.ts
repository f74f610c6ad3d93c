/** DOM rendering for the chat view-model. Full re-render per state change. */

import type { PhotoItem, ResponseItem, TurnResult } from "./api.js";
import type { ChatState } from "./state.js";

export interface RenderHandlers {
  onSubmit(text: string): void;
  onRetry(text: string): void;
  onDismiss(): void;
  photoUrl(photoId: string): string;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function header(state: ChatState): HTMLElement {
  const head = el("header", "chat-header");
  head.appendChild(el("h1", "title", `polyfind · ${state.city}`));
  const mode = el(
    "span",
    "mode-banner",
    state.mode === "booking" ? "Booking in progress" : "Searching",
  );
  mode.dataset.mode = state.mode;
  head.appendChild(mode);
  if (state.remaining !== null) {
    const label = state.remaining === 1 ? "restaurant" : "restaurants";
    head.appendChild(
      el("span", "remaining", `${state.remaining} ${label} remaining`),
    );
  }
  return head;
}

function stream(state: ChatState): HTMLElement {
  const pane = el("main", "stream");
  for (const msg of state.messages) {
    pane.appendChild(el("div", `msg ${msg.role}`, msg.text));
  }
  return pane;
}

/** One card per restaurant, headed by its best-ranked response. */
function entityCards(responses: ResponseItem[]): HTMLElement {
  const cards = el("div", "cards");
  const byEntity = new Map<string, ResponseItem[]>();
  for (const r of responses) {
    const group = byEntity.get(r.entity_id);
    if (group) group.push(r);
    else byEntity.set(r.entity_id, [r]);
  }
  for (const [entityId, group] of byEntity) {
    const top = group[0]!;
    const card = el("article", "entity-card");
    card.dataset.entityId = entityId;
    card.appendChild(el("h2", "entity-name", top.entity_name));
    const body = el("p", "card-text", top.text);
    body.dataset.kind = top.kind;
    card.appendChild(body);
    card.appendChild(el("span", "score", top.score.toFixed(2)));
    cards.appendChild(card);
  }
  return cards;
}

function gallery(
  photos: PhotoItem[],
  photoUrl: (id: string) => string,
): HTMLElement {
  const strip = el("div", "gallery");
  for (const photo of photos) {
    const fig = el("figure", "photo");
    const img = el("img");
    img.src = photoUrl(photo.photo_id);
    img.alt = photo.caption ?? "restaurant photo";
    fig.appendChild(img);
    if (photo.caption) fig.appendChild(el("figcaption", "", photo.caption));
    strip.appendChild(fig);
  }
  return strip;
}

/** Everything known about the one remaining restaurant. */
function singleEntity(
  latest: TurnResult,
  photoUrl: (id: string) => string,
): HTMLElement {
  const panel = el("div", "single-entity");
  const first = latest.responses[0];
  if (first) panel.appendChild(el("h2", "entity-name", first.entity_name));
  if (latest.photos.length > 0) {
    panel.appendChild(gallery(latest.photos, photoUrl));
  }
  const list = el("ul", "responses");
  for (const r of latest.responses) {
    const item = el("li", "response");
    item.appendChild(el("span", "kind", r.kind));
    item.appendChild(el("span", "text", r.text));
    list.appendChild(item);
  }
  panel.appendChild(list);
  return panel;
}

function bookingPanel(latest: TurnResult): HTMLElement {
  const panel = el("div", "booking-panel");
  panel.appendChild(el("h2", "", "Booking"));
  const slots = latest.booking ?? { date: null, time: null, party_size: null };
  const list = el("dl", "slots");
  const rows: [string, string | number | null][] = [
    ["Date", slots.date],
    ["Time", slots.time],
    ["Party size", slots.party_size],
  ];
  for (const [label, value] of rows) {
    list.appendChild(el("dt", "", label));
    list.appendChild(el("dd", "", value === null ? "—" : String(value)));
  }
  panel.appendChild(list);
  return panel;
}

function confirmationPanel(latest: TurnResult): HTMLElement {
  const conf = latest.confirmation!;
  const panel = el("div", "confirmation");
  panel.appendChild(el("h2", "", "Booking confirmed"));
  const list = el("dl", "slots");
  const rows: [string, string][] = [
    ["Restaurant", conf.entity_id],
    ["Date", conf.date],
    ["Time", conf.time],
    ["Party size", String(conf.party_size)],
  ];
  for (const [label, value] of rows) {
    list.appendChild(el("dt", "", label));
    list.appendChild(el("dd", "", value));
  }
  panel.appendChild(list);
  return panel;
}

function results(
  state: ChatState,
  photoUrl: (id: string) => string,
): HTMLElement {
  const section = el("section", "results");
  const latest = state.latest;
  if (!latest) return section;
  if (latest.confirmation) {
    section.appendChild(confirmationPanel(latest));
  } else if (latest.mode === "booking") {
    section.appendChild(bookingPanel(latest));
  } else if (latest.entities_remaining.length === 1) {
    section.appendChild(singleEntity(latest, photoUrl));
  } else if (latest.responses.length > 0) {
    section.appendChild(entityCards(latest.responses));
  }
  return section;
}

function banner(state: ChatState, handlers: RenderHandlers): HTMLElement {
  const bar = el("div", "banner");
  const active = state.banner;
  if (!active) return bar;
  bar.dataset.kind = active.kind;
  bar.appendChild(el("span", "banner-text", active.message));
  if (active.retryText !== null) {
    const retry = el("button", "retry", "Retry");
    retry.type = "button";
    retry.addEventListener("click", () =>
      handlers.onRetry(active.retryText!),
    );
    bar.appendChild(retry);
  }
  const dismiss = el("button", "dismiss", "Dismiss");
  dismiss.type = "button";
  dismiss.addEventListener("click", () => handlers.onDismiss());
  bar.appendChild(dismiss);
  return bar;
}

function composer(state: ChatState, handlers: RenderHandlers): HTMLElement {
  const form = el("form", "composer");
  const input = el("input", "utterance");
  input.type = "text";
  input.placeholder = "Describe the restaurant you want…";
  input.autocomplete = "off";
  input.disabled = state.pending || state.sessionId === null;
  const send = el("button", "send", "Send");
  send.type = "submit";
  send.disabled = input.disabled;
  form.appendChild(input);
  form.appendChild(send);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value.trim();
    if (text && !input.disabled) handlers.onSubmit(text);
  });
  return form;
}

export function render(
  root: HTMLElement,
  state: ChatState,
  handlers: RenderHandlers,
): void {
  root.textContent = "";
  root.appendChild(header(state));
  if (state.fatal) {
    root.appendChild(el("div", "fatal", state.fatal));
    return;
  }
  root.appendChild(stream(state));
  root.appendChild(results(state, handlers.photoUrl));
  root.appendChild(banner(state, handlers));
  root.appendChild(composer(state, handlers));
}
