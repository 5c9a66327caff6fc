export interface Point {
  t: number;
  v: number;
}

/**
 * Rolling chart buffer. Points arrive time-ordered from the stream; on a
 * reconnect the stream may replay recent samples, so anything at or before
 * the newest accepted timestamp is dropped rather than duplicated.
 */
export class SampleBuffer {
  private points: Point[] = [];

  constructor(private readonly horizonS: number) {}

  get lastT(): number | null {
    return this.points.length ? this.points[this.points.length - 1].t : null;
  }

  push(t: number, v: number): boolean {
    const last = this.lastT;
    if (last !== null && t <= last) {
      return false;
    }
    this.points.push({ t, v });
    const cutoff = t - this.horizonS;
    let drop = 0;
    while (drop < this.points.length && this.points[drop].t < cutoff) {
      drop++;
    }
    if (drop > 0) {
      this.points.splice(0, drop);
    }
    return true;
  }

  values(): readonly Point[] {
    return this.points;
  }

  clear(): void {
    this.points = [];
  }
}
