// Live event feed: long-poll against /events with a cursor, dropping to a
// plain 2-second refresh poll when the stream endpoint is unavailable.

import { ApiClient, RuntimeEvent } from "./api.js";

export const FALLBACK_POLL_MS = 2000;
export const LONG_POLL_SECONDS = 25;

export function nextCursor(cursor: number, events: RuntimeEvent[]): number {
  return events.reduce((acc, e) => Math.max(acc, e.seq), cursor);
}

export class EventFeed {
  private cursor = 0;
  private stopped = false;
  fallbackActive = false;

  constructor(
    private api: ApiClient,
    private onEvents: (events: RuntimeEvent[]) => void,
    private onFallbackTick?: () => void,
  ) {}

  start(): void {
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      try {
        const events = await this.api.events(this.cursor, LONG_POLL_SECONDS);
        this.fallbackActive = false;
        this.cursor = nextCursor(this.cursor, events);
        if (events.length > 0) this.onEvents(events);
      } catch {
        // stream unavailable: degrade to interval polling of the GET surfaces
        this.fallbackActive = true;
        this.onFallbackTick?.();
        await new Promise((resolve) => setTimeout(resolve, FALLBACK_POLL_MS));
      }
    }
  }
}
