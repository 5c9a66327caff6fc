export interface Sample {
  t: number;
  p_net_kw: number;
  p_ev_kw: number;
  soc_pct: number;
  mode: string;
  setpoint_kw: number;
}

export interface EngineState {
  sample: {
    t: number;
    p_net_kw: number;
    p_ev_kw: number;
    soc_pct: number;
    house_load_kw: number;
  } | null;
  mode: string;
  mode_params: Record<string, number>;
  charger_state: string;
  setpoint_kw: number | null;
  alpha_kw: number;
}

export interface ApiResult {
  ok: boolean;
  status: number;
  error?: string;
}
