import type { Point } from "./buffer.js";

/** Minimal canvas strip chart: one polyline over a rolling window. */
export class StripChart {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly color: string,
    private readonly horizonS: number,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  draw(points: readonly Point[]): void {
    const { width: w, height: h } = this.canvas;
    const ctx = this.ctx;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#333";
    ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
    if (points.length < 2) return;

    const tEnd = points[points.length - 1].t;
    const tStart = tEnd - this.horizonS;
    let lo = Math.min(...points.map((p) => p.v));
    let hi = Math.max(...points.map((p) => p.v));
    if (hi - lo < 1e-6) {
      lo -= 0.5;
      hi += 0.5;
    }
    const pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    const x = (t: number) => ((t - tStart) / this.horizonS) * (w - 2) + 1;
    const y = (v: number) => h - 1 - ((v - lo) / (hi - lo)) * (h - 2);

    if (lo < 0 && hi > 0) {
      ctx.strokeStyle = "#555";
      ctx.setLineDash([3, 3]);
      ctx.beginPath();
      ctx.moveTo(1, y(0));
      ctx.lineTo(w - 1, y(0));
      ctx.stroke();
      ctx.setLineDash([]);
    }

    ctx.strokeStyle = this.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((p, i) => {
      if (i === 0) ctx.moveTo(x(p.t), y(p.v));
      else ctx.lineTo(x(p.t), y(p.v));
    });
    ctx.stroke();

    ctx.fillStyle = "#999";
    ctx.font = "10px monospace";
    ctx.fillText(hi.toFixed(2), 4, 12);
    ctx.fillText(lo.toFixed(2), 4, h - 4);
  }
}
