import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ConnectionWatchdog } from "../src/watchdog.js";

describe("ConnectionWatchdog", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("raises the banner within the silence window", () => {
    let down = 0;
    const dog = new ConnectionWatchdog(2000, () => down++, () => {});
    dog.kick();
    vi.advanceTimersByTime(1999);
    expect(down).toBe(0);
    vi.advanceTimersByTime(1);
    expect(down).toBe(1);
    dog.stop();
  });

  it("messages keep the banner away", () => {
    let down = 0;
    const dog = new ConnectionWatchdog(2000, () => down++, () => {});
    for (let i = 0; i < 20; i++) {
      dog.kick();
      vi.advanceTimersByTime(500);
    }
    expect(down).toBe(0);
    dog.stop();
  });

  it("recovery fires onAlive once per outage", () => {
    let up = 0;
    let down = 0;
    const dog = new ConnectionWatchdog(2000, () => down++, () => up++);
    dog.kick(); // initial connect counts as alive
    expect(up).toBe(1);
    dog.kick();
    expect(up).toBe(1);
    vi.advanceTimersByTime(2500);
    expect(down).toBe(1);
    dog.kick();
    expect(up).toBe(2);
    dog.stop();
  });
});
