// Event-stream subscription with sequence-number resume, and the log console
// model that fans events out into one ordered pane per source.

import type { EventRecord } from "./types.js";

export interface EventSourceLike {
  onmessage: ((event: { data: string }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export class EventStream {
  lastSeq = 0;
  private source: EventSourceLike | null = null;
  private closed = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private makeSource: EventSourceFactory,
    private base: string = "",
    private retryMs = 1000,
  ) {}

  start(onEvent: (e: EventRecord) => void): void {
    this.closed = false;
    this.open(onEvent);
  }

  private open(onEvent: (e: EventRecord) => void): void {
    if (this.closed) return;
    const source = this.makeSource(`${this.base}/events?from=${this.lastSeq}`);
    this.source = source;
    source.onmessage = (message) => {
      const event = JSON.parse(message.data) as EventRecord;
      if (event.seq > this.lastSeq) {
        this.lastSeq = event.seq;
        onEvent(event);
      }
    };
    source.onerror = () => {
      source.close();
      if (this.closed) return;
      // reconnect resumes from the last delivered sequence number
      this.retryTimer = setTimeout(() => this.open(onEvent), this.retryMs);
    };
  }

  stop(): void {
    this.closed = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.source?.close();
  }
}

export interface LogPaneState {
  source: string;
  events: EventRecord[];
}

// One tab per event source; every pane's events are ordered by seq.
export class LogConsole {
  panes = new Map<string, LogPaneState>();
  onNewPane: ((source: string) => void) | null = null;
  onEvent: ((pane: LogPaneState, event: EventRecord) => void) | null = null;

  push(event: EventRecord): LogPaneState {
    let pane = this.panes.get(event.source);
    if (!pane) {
      pane = { source: event.source, events: [] };
      this.panes.set(event.source, pane);
      this.onNewPane?.(event.source);
    }
    const last = pane.events[pane.events.length - 1];
    if (last !== undefined && event.seq <= last.seq) {
      return pane; // replays/duplicates never reorder a pane
    }
    pane.events.push(event);
    this.onEvent?.(pane, event);
    return pane;
  }

  sources(): string[] {
    return [...this.panes.keys()];
  }

  eventsFor(source: string): EventRecord[] {
    return this.panes.get(source)?.events ?? [];
  }
}
