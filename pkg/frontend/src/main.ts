import { Viewer } from "./viewer.js";

const viewer = new Viewer(
  {
    canvas: document.getElementById("frame") as HTMLCanvasElement,
    overlay: document.getElementById("overlay") as HTMLCanvasElement,
    sidebar: document.getElementById("layers")!,
    promptInput: document.getElementById("prompt") as HTMLInputElement,
    status: document.getElementById("status")!,
    toast: document.getElementById("toast")!,
  },
  window.location.search,
);
viewer.start();

(document.getElementById("rect-mode") as HTMLInputElement).addEventListener(
  "change", (ev) => viewer.setRectMode((ev.target as HTMLInputElement).checked));
document.getElementById("commit")!.addEventListener("click", () => viewer.commitZoom());
