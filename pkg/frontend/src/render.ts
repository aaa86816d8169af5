/** DOM rendering of a session state snapshot.
 *
 * Pure repaint: panels are rebuilt from state on every render event, so
 * the view can never drift from what the service streamed. Interactive
 * controls call back through `actions` and never touch state directly.
 */

import { AttackProfileDoc } from "./protocol.js";
import { UiSessionState } from "./session.js";
import { sparklinePoints } from "./sparkline.js";

export interface ConsoleActions {
  startAttack(profile: AttackProfileDoc): void;
  stopAttack(handle: string): void;
  resetNode(node: string): void;
  setSensor(node: string, sensor: string, value: unknown): void;
  run(): void;
  pause(): void;
}

const SVG_NS = "http://www.w3.org/2000/svg";

export const ATTACK_BUTTONS: { label: string; profile: AttackProfileDoc }[] = [
  { label: "DoS flood", profile: { kind: "DosFlood" } },
  { label: "Fuzz", profile: { kind: "Fuzz", fuzz_rate: 500.0 } },
  {
    label: "Spoof brake release",
    profile: {
      kind: "Spoof",
      spoof_target: {
        id: 0x301,
        payload: "00ffffffffffffff",
        period_us: 1500.0,
      },
    },
  },
];

export function renderConsole(
  root: HTMLElement,
  state: UiSessionState,
  actions: ConsoleActions,
): void {
  root.textContent = "";
  root.append(
    renderBanner(state),
    renderScenario(state, actions),
    renderEcuGrid(state, actions),
    renderAttackPanel(state, actions),
    renderLatencyGauge(state),
    renderVerdictFeed(state),
    renderTrace(state),
  );
}

function el(
  tag: string,
  className: string,
  text?: string,
): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderBanner(state: UiSessionState): HTMLElement {
  const banner = el("div", "banner");
  banner.dataset.connection = state.connection;
  if (state.banner !== null) {
    banner.classList.add("banner-alert");
    banner.textContent = state.banner;
  } else {
    banner.textContent = state.connection;
  }
  for (const toast of state.toasts.slice(-3)) {
    banner.append(el("span", "toast", toast));
  }
  return banner;
}

function renderScenario(
  state: UiSessionState,
  actions: ConsoleActions,
): HTMLElement {
  const box = el("section", "scenario");
  if (state.scenario === null) {
    box.append(el("p", "scenario-empty", "no scenario loaded"));
    return box;
  }
  const stop =
    state.scenario.stopTimeUs === null
      ? ""
      : ` / ${(state.scenario.stopTimeUs / 1000).toFixed(0)} ms`;
  box.append(
    el("h2", "scenario-name", state.scenario.name),
    el(
      "p",
      "scenario-clock",
      `t = ${(state.nowUs / 1000).toFixed(1)} ms${stop}` +
        (state.running ? " (running)" : "") +
        (state.finished ? ` (finished: ${state.passed ? "PASS" : "FAIL"})` : ""),
    ),
    el("p", "scenario-anomalies", `anomalies: ${state.anomalies}`),
  );
  const run = el("button", "run-button", state.running ? "pause" : "run");
  run.addEventListener("click", () =>
    state.running ? actions.pause() : actions.run(),
  );
  box.append(run);
  return box;
}

function renderEcuGrid(
  state: UiSessionState,
  actions: ConsoleActions,
): HTMLElement {
  const grid = el("section", "ecu-grid");
  for (const card of Object.values(state.ecus)) {
    const box = el("article", "ecu-card");
    box.dataset.node = card.name;
    if (card.lifeFlat) {
      box.classList.add("life-flat");
    }
    box.append(el("h3", "ecu-name", card.name));

    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("class", "sparkline");
    svg.setAttribute("viewBox", "0 0 120 28");
    const line = document.createElementNS(SVG_NS, "polyline");
    line.setAttribute("points", sparklinePoints(card.life, 120, 28));
    svg.append(line);
    box.append(svg);

    const badges = el("div", "actuators");
    for (const [name, on] of Object.entries(card.actuators)) {
      const badge = el("span", "badge", name);
      badge.classList.add(on ? "badge-on" : "badge-off");
      badges.append(badge);
    }
    box.append(badges);

    const sensors = el("div", "sensors");
    for (const [name, value] of Object.entries(card.sensors)) {
      const toggle = el("button", "sensor", `${name}: ${String(value)}`);
      if (typeof value === "boolean") {
        toggle.addEventListener("click", () =>
          actions.setSensor(card.name, name, !value),
        );
      }
      sensors.append(toggle);
    }
    box.append(sensors);

    const reset = el("button", "reset-button", "reset");
    reset.addEventListener("click", () => actions.resetNode(card.name));
    box.append(reset);
    grid.append(box);
  }
  return grid;
}

function renderAttackPanel(
  state: UiSessionState,
  actions: ConsoleActions,
): HTMLElement {
  const panel = el("section", "attack-panel");
  const launchers = el("div", "attack-launchers");
  for (const { label, profile } of ATTACK_BUTTONS) {
    const button = el("button", "attack-button", label);
    button.dataset.kind = profile.kind;
    button.addEventListener("click", () => actions.startAttack(profile));
    launchers.append(button);
  }
  panel.append(launchers);

  const chips = el("div", "attack-chips");
  for (const chip of state.attacks) {
    const box = el("span", "attack-chip", `${chip.kind} [${chip.handle}]`);
    box.dataset.handle = chip.handle;
    box.classList.add(chip.active ? "chip-active" : "chip-stopped");
    if (chip.active) {
      const stop = el("button", "chip-stop", "stop");
      stop.addEventListener("click", () => actions.stopAttack(chip.handle));
      box.append(stop);
    }
    chips.append(box);
  }
  panel.append(chips);
  return panel;
}

function renderLatencyGauge(state: UiSessionState): HTMLElement {
  const gauge = el("section", "latency-gauge");
  const lat = state.latency;
  const label =
    lat.lastUs === null
      ? "no verdicts yet"
      : `last ${lat.lastUs.toFixed(0)} us / mean ${lat.meanUs!.toFixed(0)}` +
        ` / max ${lat.maxUs!.toFixed(0)} / budget ${lat.budgetUs} us` +
        ` (${(lat.withinBudget! * 100).toFixed(0)}% within)`;
  gauge.append(el("p", "latency-label", label));

  const bar = el("div", "latency-bar");
  const fill = el("div", "latency-fill");
  // the bar spans twice the budget so over-budget strategies overflow
  // past the visible budget mark instead of clipping at full scale
  const frac = lat.lastUs === null ? 0 : Math.min(lat.lastUs / (2 * lat.budgetUs), 1);
  fill.style.width = `${(frac * 100).toFixed(1)}%`;
  if (lat.lastUs !== null && lat.lastUs > lat.budgetUs) {
    fill.classList.add("over-budget");
  }
  const budgetMark = el("div", "budget-line");
  budgetMark.style.left = "50%";
  bar.append(fill, budgetMark);
  gauge.append(bar);
  return gauge;
}

function renderVerdictFeed(state: UiSessionState): HTMLElement {
  const feed = el("section", "verdict-feed");
  const list = el("ol", "verdict-list");
  // stream order, newest last; the array is already bounded
  for (const v of state.verdicts) {
    const item = el(
      "li",
      "verdict",
      `${(v.atUs / 1000).toFixed(1)} ms  0x${v.canId
        .toString(16)
        .padStart(3, "0")}  ${v.label}  (${v.elapsedUs.toFixed(0)} us)`,
    );
    item.dataset.label = v.label;
    item.dataset.seq = String(v.seq);
    list.append(item);
  }
  feed.append(list);
  if (state.droppedDocs > 0) {
    feed.append(
      el("p", "dropped-note", `${state.droppedDocs} documents dropped`),
    );
  }
  return feed;
}

function renderTrace(state: UiSessionState): HTMLElement {
  const section = el("section", "trace-view");
  const table = document.createElement("table");
  table.className = "trace-table";
  for (const row of state.trace.slice(-40)) {
    const tr = document.createElement("tr");
    tr.dataset.label = row.label;
    for (const cell of [
      `${(row.atUs / 1000).toFixed(2)} ms`,
      `0x${row.canId.toString(16).padStart(3, "0")}`,
      String(row.dlc),
      row.payload,
      row.source,
      row.label,
    ]) {
      const td = document.createElement("td");
      td.textContent = cell;
      tr.append(td);
    }
    table.append(tr);
  }
  section.append(table);
  return section;
}
