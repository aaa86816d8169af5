/** Browser bootstrap: one socket to the service, one render loop.
 *
 * Endpoint and token come from the query string
 * (`?endpoint=ws://host:port/ws&token=...`); the default endpoint is the
 * `/ws` path of whatever host served this page.
 */

import { renderConsole, ConsoleActions } from "./render.js";
import { UiSession } from "./session.js";

const params = new URLSearchParams(window.location.search);
const endpoint =
  params.get("endpoint") ?? `ws://${window.location.host}/ws`;
const token = params.get("token") ?? undefined;

const session = new UiSession({
  url: endpoint,
  token,
  socketFactory: (url) => new WebSocket(url),
});

const actions: ConsoleActions = {
  startAttack: (profile) => void session.startAttack(profile).catch(toast),
  stopAttack: (handle) => void session.stopAttack(handle).catch(toast),
  resetNode: (node) => void session.resetNode(node).catch(toast),
  setSensor: (node, sensor, value) =>
    void session.setSensor(node, sensor, value).catch(toast),
  run: () => void session.run().catch(toast),
  pause: () => void session.pause().catch(toast),
};

function toast(err: unknown): void {
  session.state.toasts.push(String(err));
}

const root = document.getElementById("console")!;
session.onRender((state) => renderConsole(root, state, actions));
session.connect();
