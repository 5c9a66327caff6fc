import { EngineApi } from "./api.js";
import { SampleBuffer } from "./buffer.js";
import { StripChart } from "./chart.js";
import { PanelController } from "./controller.js";
import type { Sample } from "./types.js";
import { ConnectionWatchdog } from "./watchdog.js";

const HORIZON_S = 600; // 10 min of rolling chart
const BANNER_AFTER_MS = 2000;

const base = window.location.origin;
const api = new EngineApi(base);
const controller = new PanelController(api);

const el = (id: string) => document.getElementById(id)!;
const netBuf = new SampleBuffer(HORIZON_S);
const evBuf = new SampleBuffer(HORIZON_S);
const socBuf = new SampleBuffer(HORIZON_S);
const netChart = new StripChart(el("chart-net") as HTMLCanvasElement, "#4cc2ff", HORIZON_S);
const evChart = new StripChart(el("chart-ev") as HTMLCanvasElement, "#ffb454", HORIZON_S);
const socChart = new StripChart(el("chart-soc") as HTMLCanvasElement, "#7ce87c", HORIZON_S);

function render(): void {
  const v = controller.view();
  el("net-kw").textContent = v.netKw;
  el("ev-kw").textContent = v.evKw;
  el("soc-pct").textContent = v.socPct;
  el("mode").textContent = v.mode;
  el("charger-state").textContent = v.chargerState;
  el("banner").style.display = v.banner ? "block" : "none";
  el("message").textContent = v.message;
  for (const id of ["btn-set", "btn-zero", "btn-stop"]) {
    (el(id) as HTMLButtonElement).disabled = v.busy;
  }
  netChart.draw(netBuf.values());
  evChart.draw(evBuf.values());
  socChart.draw(socBuf.values());
}

controller.onRender(render);

const watchdog = new ConnectionWatchdog(
  BANNER_AFTER_MS,
  () => controller.onStreamDown(),
  () => controller.onStreamUp(),
);

const stream = new EventSource(`${base}/stream`);
stream.onmessage = (ev) => {
  watchdog.kick();
  const sample = JSON.parse(ev.data) as Sample;
  // the buffer drops replayed timestamps, so a reconnect cannot duplicate points
  if (netBuf.push(sample.t, sample.p_net_kw)) {
    evBuf.push(sample.t, sample.p_ev_kw);
    socBuf.push(sample.t, sample.soc_pct);
  }
  controller.onSample(sample);
};
stream.addEventListener("ping", () => watchdog.kick());
stream.onerror = () => {
  /* EventSource reconnects on its own; the watchdog raises the banner */
};

el("btn-set").addEventListener("click", () => {
  void controller.setPower((el("setpoint") as HTMLInputElement).value);
});
el("btn-zero").addEventListener("click", () => void controller.zeroExport());
el("btn-stop").addEventListener("click", () => void controller.stop());

void api.state().then((s) => controller.onState(s));
render();
