import type { ApiResult, EngineState } from "./types.js";

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Thin client for the engine's HTTP control API. */
export class EngineApi {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  async state(): Promise<EngineState> {
    const res = await this.fetchFn(`${this.base}/state`);
    return (await res.json()) as EngineState;
  }

  private async post(path: string, body: unknown): Promise<ApiResult> {
    try {
      const res = await this.fetchFn(`${this.base}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
      if (res.status >= 200 && res.status < 300) {
        return { ok: true, status: res.status };
      }
      let error = `HTTP ${res.status}`;
      try {
        const payload = (await res.json()) as { error?: string };
        if (payload.error) error = payload.error;
      } catch {
        /* non-JSON error body */
      }
      return { ok: false, status: res.status, error };
    } catch (e) {
      return { ok: false, status: 0, error: `engine unreachable: ${e}` };
    }
  }

  /** Manual setpoint; the engine accepts this in manual mode only. */
  setpoint(kw: number): Promise<ApiResult> {
    return this.post("/setpoint", { kw });
  }

  manualMode(setpointKw: number): Promise<ApiResult> {
    return this.post("/mode", { mode: "manual", setpoint_kw: setpointKw });
  }

  /** Tolerance comes from engine config, not from the panel. */
  zeroExportMode(): Promise<ApiResult> {
    return this.post("/mode", { mode: "zero_export" });
  }

  idleMode(): Promise<ApiResult> {
    return this.post("/mode", { mode: "idle" });
  }
}
