/** HTTP client for the episode server: snapshot fetch, decision posting, and
 * a fetch-stream reader for the server-sent event feed (works in browsers and
 * under node, no EventSource needed). */

import { FeedEvent, HumanCommand, Snapshot, validateSnapshot } from "./types.js";

export interface DecisionReply {
  ok: boolean;
  status: number;
  error?: string;
}

export async function fetchState(base: string): Promise<Snapshot> {
  const resp = await fetch(`${base}/state`);
  if (!resp.ok) {
    throw new Error(`state fetch failed: ${resp.status}`);
  }
  return validateSnapshot(await resp.json());
}

export async function postDecision(base: string, command: HumanCommand): Promise<DecisionReply> {
  const resp = await fetch(`${base}/decision`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(command),
  });
  const doc = (await resp.json()) as { ok?: boolean; error?: string };
  return { ok: resp.ok && doc.ok === true, status: resp.status, error: doc.error };
}

/** Incremental SSE parser: feed it chunks, it yields complete events. */
export class SseParser {
  private buffer = "";

  push(chunk: string): FeedEvent[] {
    this.buffer += chunk;
    const events: FeedEvent[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      for (const line of block.split("\n")) {
        if (line.startsWith("data: ")) {
          events.push(JSON.parse(line.slice(6)) as FeedEvent);
        }
      }
    }
    return events;
  }
}

/** Stream the event feed, invoking the callback per event; resolves when the
 * stream closes. The caller reconnects with the last seen id. */
export async function followEvents(
  base: string,
  after: number,
  onEvent: (event: FeedEvent) => void | Promise<void>,
  signal?: AbortSignal,
): Promise<void> {
  const resp = await fetch(`${base}/events?after=${after}`, { signal });
  if (!resp.ok || resp.body === null) {
    throw new Error(`event stream failed: ${resp.status}`);
  }
  const reader = resp.body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) {
      return;
    }
    for (const event of parser.push(decoder.decode(value, { stream: true }))) {
      await onEvent(event);
    }
  }
}
