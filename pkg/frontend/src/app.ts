/** Application shell: holds the latest snapshot, the panel lock, and the
 * event-feed loop with reconnect-by-resnapshot. */

import { fetchState, followEvents, postDecision } from "./api.js";
import { Handlers, renderError, renderSnapshot, showToast } from "./render.js";
import { FeedEvent, SchemaError, Snapshot } from "./types.js";

export class App {
  snapshot: Snapshot | null = null;
  locked = false;
  lastEventId = -1;
  finished = false;
  private stopped = false;

  constructor(private root: HTMLElement, private base: string) {}

  handlers: Handlers = {
    onChooseNode: (nodeId: number) => {
      void this.submit({ kind: "choose_node", node_id: nodeId });
    },
    onExploreScene: () => {
      void this.submit({ kind: "choose_explore_scene" });
    },
    onStop: () => {
      void this.submit({ kind: "declare_stop" });
    },
  };

  /** One in-flight decision per request: lock on send, unlock on the next
   * decision-requested event, re-enable immediately on rejection. */
  async submit(command: { kind: "choose_node" | "choose_explore_scene" | "declare_stop"; node_id?: number }): Promise<void> {
    if (this.locked) {
      return;
    }
    this.locked = true;
    this.render();
    const reply = await postDecision(this.base, command);
    if (!reply.ok) {
      this.locked = false;
      await this.resnapshot();
      showToast(this.root, reply.error ?? `rejected (${reply.status})`);
    }
  }

  render(): void {
    if (this.snapshot) {
      renderSnapshot(this.root, this.snapshot, this.locked, this.handlers);
    }
  }

  async resnapshot(): Promise<void> {
    try {
      this.snapshot = await fetchState(this.base);
      this.finished = this.snapshot.finished;
      this.render();
    } catch (err) {
      if (err instanceof SchemaError) {
        renderError(this.root, `snapshot schema mismatch: ${err.message}`);
      } else {
        throw err;
      }
    }
  }

  private async onEvent(event: FeedEvent): Promise<void> {
    if (typeof event.id === "number") {
      this.lastEventId = event.id;
    }
    switch (event.type) {
      case "gap":
        await this.resnapshot();
        return;
      case "decision-requested":
        this.locked = false;
        await this.resnapshot();
        return;
      case "step-complete":
      case "node-created":
      case "episode-finished":
        await this.resnapshot();
        return;
      default:
        return;
    }
  }

  /** Fetch the initial snapshot and follow the feed until the episode ends. */
  async run(): Promise<void> {
    await this.resnapshot();
    while (!this.finished && !this.stopped) {
      try {
        await followEvents(this.base, this.lastEventId, (e) => this.onEvent(e));
      } catch {
        // transient drop: fall through to resnapshot and reconnect
      }
      if (!this.finished && !this.stopped) {
        await this.resnapshot();
      }
    }
  }

  stop(): void {
    this.stopped = true;
  }
}

export function mount(doc: Document, base: string): App {
  const root = doc.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }
  const app = new App(root as HTMLElement, base);
  void app.run();
  return app;
}
