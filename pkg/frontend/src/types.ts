/** Wire schema served by the episode server (GET /state, GET /events). */

export const UNKNOWN = 0;
export const FREE = 1;
export const OBSTACLE = 2;

export interface MapDoc {
  width: number;
  height: number;
  /** row-major run-length encoding, index = y * width + x */
  rle: [number, number][];
  frontiers: [number, number][];
}

export interface NodeCard {
  id: number;
  label: string;
  centroid: number[];
  caption: string | null;
  explored: boolean;
  target_candidate: boolean;
}

export interface PendingDecision {
  target: string;
  candidates: number[];
}

export interface Metrics {
  steps_used: number;
  budget: number;
  cells_moved: number;
  target: string;
}

export interface Snapshot {
  step: number;
  phase: string;
  pose: { cell: [number, number]; heading: string };
  map: MapDoc;
  graph: NodeCard[];
  pending_decision: PendingDecision | null;
  metrics: Metrics;
  finished: boolean;
  success: boolean | null;
  spl: number | null;
}

export interface FeedEvent {
  type: string;
  id?: number;
  step?: number;
  node_id?: number;
  label?: string;
  target?: string;
  candidates?: number[];
  success?: boolean;
  spl?: number;
}

export type CommandKind = "choose_node" | "choose_explore_scene" | "declare_stop";

export interface HumanCommand {
  kind: CommandKind;
  node_id?: number;
}

export class SchemaError extends Error {}

function isCellPair(value: unknown): value is [number, number] {
  return Array.isArray(value) && value.length === 2 &&
    typeof value[0] === "number" && typeof value[1] === "number";
}

/** Validate a /state document; throws SchemaError on mismatch. */
export function validateSnapshot(doc: unknown): Snapshot {
  if (typeof doc !== "object" || doc === null) {
    throw new SchemaError("snapshot is not an object");
  }
  const snap = doc as Record<string, unknown>;
  if (typeof snap.step !== "number" || typeof snap.phase !== "string") {
    throw new SchemaError("snapshot missing step/phase");
  }
  const pose = snap.pose as Record<string, unknown> | undefined;
  if (!pose || !isCellPair(pose.cell) || typeof pose.heading !== "string") {
    throw new SchemaError("snapshot pose malformed");
  }
  const map = snap.map as Record<string, unknown> | undefined;
  if (!map || typeof map.width !== "number" || typeof map.height !== "number" ||
      !Array.isArray(map.rle) || !Array.isArray(map.frontiers)) {
    throw new SchemaError("snapshot map malformed");
  }
  const total = (map.rle as [number, number][]).reduce((acc, run) => acc + run[0], 0);
  if (total !== (map.width as number) * (map.height as number)) {
    throw new SchemaError("map run-length encoding does not cover the grid");
  }
  if (!Array.isArray(snap.graph)) {
    throw new SchemaError("snapshot graph malformed");
  }
  for (const node of snap.graph as Record<string, unknown>[]) {
    if (typeof node.id !== "number" || typeof node.label !== "string" ||
        typeof node.explored !== "boolean") {
      throw new SchemaError("snapshot node card malformed");
    }
  }
  if (typeof snap.finished !== "boolean") {
    throw new SchemaError("snapshot missing finished flag");
  }
  return doc as Snapshot;
}

/** Expand the run-length grid; result[y * width + x] is a cell state. */
export function decodeGrid(map: MapDoc): Uint8Array {
  const out = new Uint8Array(map.width * map.height);
  let i = 0;
  for (const [count, value] of map.rle) {
    out.fill(value, i, i + count);
    i += count;
  }
  return out;
}
