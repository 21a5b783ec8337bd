/** Browser entry point: wires the viewer to the real DOM and URL. */

import { RenderClient } from "./net.js";
import { Viewer } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? `http://${window.location.hostname}:8090`;

const viewer = new Viewer(document, new RenderClient(server), {
  fragment: window.location.hash,
  onFragment: (fragment) => {
    window.history.replaceState(null, "", `#${fragment}`);
  },
});

viewer.start();

window.addEventListener("keydown", (ev) => {
  const step = 0.1;
  if (ev.key === "ArrowLeft") viewer.orbitBy(-step, 0);
  else if (ev.key === "ArrowRight") viewer.orbitBy(step, 0);
  else if (ev.key === "ArrowUp") viewer.orbitBy(0, step);
  else if (ev.key === "ArrowDown") viewer.orbitBy(0, -step);
  else if (ev.key === "+") viewer.orbitBy(0, 0, -0.25);
  else if (ev.key === "-") viewer.orbitBy(0, 0, 0.25);
});
