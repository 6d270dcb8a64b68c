/** Session recorder: cursor position polling plus event listeners.
 *
 * Mouse position is sampled on a fixed timer (default 150 ms) rather than
 * per-event, so idle hovering still produces a steady stream; clicks,
 * scrolls, and the initial load are captured through listeners.  The
 * export is one JSON Lines record per session in the pipeline's canonical
 * schema, timestamps as ms offsets from the session start.
 *
 * The recorder talks to the page only through RecorderHost, so tests can
 * script a synthetic browsing session with no DOM.
 */

export interface PointerState {
  x: number;
  y: number;
}

export interface ClickInfo {
  x: number;
  y: number;
  targetPath: string;
}

export interface RecorderHost {
  now(): number;
  setInterval(cb: () => void, ms: number): number;
  clearInterval(id: number): void;
  /** Latest known cursor position, or null before any movement. */
  pointer(): PointerState | null;
  onClick(cb: (info: ClickInfo) => void): () => void;
  onScroll(cb: (pos: PointerState) => void): () => void;
  viewport(): { width: number; height: number };
}

export interface RecordedEvent {
  x: number;
  y: number;
  t: number;
  name: string;
  targetPath?: string;
}

export interface SessionMeta {
  id?: string;
  query?: string;
  gender?: string | null;
  age?: number | null;
}

export class SessionRecorder {
  private readonly host: RecorderHost;
  private readonly pollIntervalMs: number;
  private events: RecordedEvent[] = [];
  private startedAt = 0;
  private timer: number | null = null;
  private unsubscribe: Array<() => void> = [];

  constructor(host: RecorderHost, pollIntervalMs = 150) {
    this.host = host;
    this.pollIntervalMs = pollIntervalMs;
  }

  get running(): boolean {
    return this.timer !== null;
  }

  start(): void {
    if (this.timer !== null) return;
    this.events = [];
    this.startedAt = this.host.now();
    const origin = this.host.pointer() ?? { x: 0, y: 0 };
    this.push(origin.x, origin.y, "load");
    this.unsubscribe.push(
      this.host.onClick((info) => this.push(info.x, info.y, "click", info.targetPath)),
      this.host.onScroll((pos) => this.push(pos.x, pos.y, "scroll")),
    );
    this.timer = this.host.setInterval(() => {
      const p = this.host.pointer();
      if (p !== null) this.push(p.x, p.y, "mousemove");
    }, this.pollIntervalMs);
  }

  stop(): RecordedEvent[] {
    if (this.timer !== null) {
      this.host.clearInterval(this.timer);
      this.timer = null;
    }
    for (const off of this.unsubscribe) off();
    this.unsubscribe = [];
    return this.events.slice();
  }

  private push(x: number, y: number, name: string, targetPath?: string): void {
    const ev: RecordedEvent = {
      x: Math.max(0, x),
      y: Math.max(0, y),
      t: Math.max(0, this.host.now() - this.startedAt),
      name,
    };
    if (targetPath !== undefined) ev.targetPath = targetPath;
    this.events.push(ev);
  }

  /** One canonical JSONL line for the recorded session. */
  toJsonl(meta: SessionMeta = {}): string {
    const vp = this.host.viewport();
    return eventsToJsonl(this.events, vp.width, vp.height, meta);
  }
}

/** Serialize events in the canonical session schema.
 *
 * Event rows are [x, y, t] for plain mousemoves, with the name appended
 * for anything else and the target path appended when present.
 */
export function eventsToJsonl(
  events: readonly RecordedEvent[],
  viewportWidth: number,
  viewportHeight: number,
  meta: SessionMeta = {},
): string {
  const rows = events.map((e) => {
    const row: Array<number | string | null> = [e.x, e.y, e.t];
    if (e.name !== "mousemove" || e.targetPath !== undefined) row.push(e.name);
    if (e.targetPath !== undefined) row.push(e.targetPath);
    return row;
  });
  const record = {
    id: meta.id ?? `recorded-${Date.now()}`,
    query: meta.query ?? "",
    gender: meta.gender ?? null,
    age: meta.age ?? null,
    vw: viewportWidth,
    vh: viewportHeight,
    events: rows,
  };
  return JSON.stringify(record) + "\n";
}

/** Short structural path for a DOM element, root to target. */
export function elementPath(el: { tagName: string; parentElement: unknown } | null): string {
  const parts: string[] = [];
  let node = el as { tagName: string; parentElement: unknown } | null;
  let depth = 0;
  while (node !== null && depth < 32) {
    parts.push(node.tagName.toLowerCase());
    node = node.parentElement as { tagName: string; parentElement: unknown } | null;
    depth += 1;
  }
  return "/" + parts.reverse().join("/");
}
