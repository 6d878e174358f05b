/** DOM rendering: grid layer, agent marker, node cards, decision panel,
 * metrics strip, toast, error banner, and the end-of-episode modal. Pure
 * functions of (container, snapshot) so they run identically under jsdom.
 * No game logic lives here: every decision travels through POST /decision. */

import { FREE, NodeCard, OBSTACLE, Snapshot, decodeGrid } from "./types.js";

export interface Handlers {
  onChooseNode(nodeId: number): void;
  onExploreScene(): void;
  onStop(): void;
}

const HEADING_GLYPH: Record<string, string> = { N: "▲", E: "▶", S: "▼", W: "◀" };

function el(doc: Document, tag: string, className: string, text = ""): HTMLElement {
  const node = doc.createElement(tag);
  node.className = className;
  if (text) {
    node.textContent = text;
  }
  return node;
}

function renderGrid(doc: Document, snap: Snapshot): HTMLElement {
  const grid = decodeGrid(snap.map);
  const frontier = new Set(snap.map.frontiers.map(([x, y]) => y * snap.map.width + x));
  const [ax, ay] = snap.pose.cell;
  const container = el(doc, "div", "grid");
  container.style.setProperty("--grid-cols", String(snap.map.width));
  for (let y = snap.map.height - 1; y >= 0; y--) {
    for (let x = 0; x < snap.map.width; x++) {
      const idx = y * snap.map.width + x;
      let kind = "unknown";
      if (frontier.has(idx)) {
        kind = "frontier";
      } else if (grid[idx] === FREE) {
        kind = "free";
      } else if (grid[idx] === OBSTACLE) {
        kind = "obstacle";
      }
      const cell = el(doc, "div", `cell ${kind}`);
      cell.dataset.x = String(x);
      cell.dataset.y = String(y);
      if (x === ax && y === ay) {
        cell.classList.add("agent");
        cell.textContent = HEADING_GLYPH[snap.pose.heading] ?? "@";
      }
      container.appendChild(cell);
    }
  }
  return container;
}

function renderCard(doc: Document, node: NodeCard, snap: Snapshot, locked: boolean,
                    handlers: Handlers): HTMLElement {
  const pending = snap.pending_decision;
  const clickable = !locked && !node.explored && pending !== null &&
    pending.candidates.includes(node.id);
  const card = el(doc, "div", "card");
  card.dataset.nodeId = String(node.id);
  if (node.explored) {
    card.classList.add("explored");
  }
  if (clickable) {
    card.classList.add("clickable");
  }
  const title = el(doc, "div", "card-label", node.label);
  if (node.target_candidate) {
    title.appendChild(el(doc, "span", "badge target", "target?"));
  }
  if (node.explored) {
    title.appendChild(el(doc, "span", "badge explored", "explored"));
  }
  card.appendChild(title);
  card.appendChild(el(doc, "div", "card-caption", node.caption ?? "(no caption yet)"));
  if (clickable) {
    card.addEventListener("click", () => handlers.onChooseNode(node.id));
  }
  return card;
}

function renderPanel(doc: Document, snap: Snapshot, locked: boolean,
                     handlers: Handlers): HTMLElement {
  const panel = el(doc, "div", "panel");
  const active = snap.pending_decision !== null && !locked;
  const prompt = snap.pending_decision
    ? `Where should the agent look for the ${snap.pending_decision.target}?`
    : locked
      ? "Decision sent, waiting for the agent…"
      : "Agent is moving…";
  panel.appendChild(el(doc, "div", "panel-prompt", prompt));
  const explore = el(doc, "button", "explore-scene", "Explore the scene") as HTMLButtonElement;
  explore.disabled = !active;
  if (active) {
    explore.addEventListener("click", () => handlers.onExploreScene());
  }
  const stop = el(doc, "button", "declare-stop", "Give up") as HTMLButtonElement;
  stop.disabled = !active;
  if (active) {
    stop.addEventListener("click", () => handlers.onStop());
  }
  panel.appendChild(explore);
  panel.appendChild(stop);
  return panel;
}

function renderMetrics(doc: Document, snap: Snapshot): HTMLElement {
  const strip = el(doc, "div", "metrics");
  strip.appendChild(el(doc, "span", "metric steps",
                       `steps ${snap.metrics.steps_used} / ${snap.metrics.budget}`));
  strip.appendChild(el(doc, "span", "metric moved",
                       `cells moved ${snap.metrics.cells_moved}`));
  strip.appendChild(el(doc, "span", "metric target", `target: ${snap.metrics.target}`));
  strip.appendChild(el(doc, "span", "metric phase", snap.phase));
  return strip;
}

function renderModal(doc: Document, snap: Snapshot): HTMLElement {
  const modal = el(doc, "div", "modal");
  const verdict = snap.success ? "Target found" : "Episode over, target not found";
  modal.appendChild(el(doc, "div", "modal-title", verdict));
  modal.appendChild(el(doc, "div", "modal-spl",
                       `SPL ${(snap.spl ?? 0).toFixed(3)} in ${snap.metrics.steps_used} steps`));
  return modal;
}

/** Repaint the whole view from one snapshot. */
export function renderSnapshot(root: HTMLElement, snap: Snapshot, locked: boolean,
                               handlers: Handlers): void {
  const doc = root.ownerDocument;
  root.replaceChildren();
  root.appendChild(renderMetrics(doc, snap));
  root.appendChild(renderGrid(doc, snap));
  const cards = el(doc, "div", "cards");
  for (const node of snap.graph) {
    cards.appendChild(renderCard(doc, node, snap, locked, handlers));
  }
  root.appendChild(cards);
  root.appendChild(renderPanel(doc, snap, locked, handlers));
  if (snap.finished) {
    root.appendChild(renderModal(doc, snap));
  }
}

export function renderError(root: HTMLElement, message: string): void {
  const doc = root.ownerDocument;
  root.replaceChildren();
  root.appendChild(el(doc, "div", "error-banner", message));
}

export function showToast(root: HTMLElement, message: string): void {
  const doc = root.ownerDocument;
  const toast = el(doc, "div", "toast", message);
  root.appendChild(toast);
}
