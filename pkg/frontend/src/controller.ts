import type { EngineApi } from "./api.js";
import type { EngineState, Sample } from "./types.js";

export interface PanelView {
  netKw: string;
  evKw: string;
  socPct: string;
  mode: string;
  chargerState: string;
  banner: boolean;
  message: string;
  busy: boolean;
}

/**
 * Control-panel state machine, kept free of the DOM so it is unit-testable.
 *
 * Button routing: Set Power posts /setpoint when the engine is already in
 * manual mode (or idle, where it first enters manual); while an automated
 * mode is active the 409 from /setpoint is surfaced inline instead of
 * silently stealing the mode. Buttons stay optimistically disabled until
 * the next state or sample confirms the engine heard us.
 */
export class PanelController {
  mode = "unknown";
  chargerState = "unknown";
  banner = false;
  message = "";
  busy = false;
  private latest: Sample | null = null;
  private render: () => void = () => {};

  constructor(private readonly api: EngineApi) {}

  onRender(fn: () => void): void {
    this.render = fn;
  }

  onState(state: EngineState): void {
    this.mode = state.mode;
    this.chargerState = state.charger_state;
    this.busy = false;
    this.render();
  }

  onSample(sample: Sample): void {
    this.latest = sample;
    this.mode = sample.mode;
    this.busy = false;
    this.render();
  }

  onStreamDown(): void {
    this.banner = true;
    this.render();
  }

  onStreamUp(): void {
    this.banner = false;
    this.render();
  }

  async setPower(text: string): Promise<void> {
    const kw = Number(text);
    if (!text.trim() || !Number.isFinite(kw)) {
      this.message = `setpoint must be a number, got "${text}"`;
      this.render();
      return;
    }
    if (this.mode === "idle" || this.mode === "unknown") {
      await this.act(() => this.api.manualMode(kw));
    } else {
      await this.act(() => this.api.setpoint(kw));
    }
  }

  async zeroExport(): Promise<void> {
    await this.act(() => this.api.zeroExportMode());
  }

  async stop(): Promise<void> {
    await this.act(() => this.api.idleMode());
  }

  private async act(call: () => Promise<{ ok: boolean; error?: string }>): Promise<void> {
    this.busy = true;
    this.message = "";
    this.render();
    const result = await call();
    if (!result.ok) {
      this.busy = false;
      this.message = result.error ?? "request failed";
    }
    this.render();
  }

  view(): PanelView {
    const s = this.latest;
    return {
      netKw: s ? s.p_net_kw.toFixed(3) : "--",
      evKw: s ? s.p_ev_kw.toFixed(3) : "--",
      socPct: s ? s.soc_pct.toFixed(1) : "--",
      mode: this.mode,
      chargerState: this.chargerState,
      banner: this.banner,
      message: this.message,
      busy: this.busy,
    };
  }
}
