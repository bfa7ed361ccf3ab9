import init, { Demo } from "./pkg/semflash_wasm.js";

const SCALE = 2;
const HANDLE = 6;
const $ = (id) => document.getElementById(id);

let demo = null;
let corners = null; // [x0, y0, ... x3, y3] in TL, TR, BL, BR order, image pixels
let dragging = -1;

function num(id) {
  return Number($(id).value);
}

function synthesize() {
  if (demo) demo.free();
  try {
    demo = new Demo(num("rows"), num("cols"), num("sigma"), num("seed"));
  } catch (e) {
    $("error").textContent = e.message ?? String(e);
    return;
  }
  $("radius").value = demo.default_window_radius();
  const view = $("view");
  view.width = demo.width() * SCALE;
  view.height = demo.height() * SCALE;
  corners = Array.from(demo.oracle_corners());
  update();
}

function drawImage(rgba) {
  const w = demo.width();
  const h = demo.height();
  const img = new ImageData(new Uint8ClampedArray(rgba), w, h);
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(img, 0, 0);
  const ctx = $("view").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, w * SCALE, h * SCALE);
  ctx.strokeStyle = "#ffcc00";
  ctx.lineWidth = 2;
  for (let i = 0; i < 4; i++) {
    const x = (corners[2 * i] + 0.5) * SCALE;
    const y = (corners[2 * i + 1] + 0.5) * SCALE;
    ctx.strokeRect(x - HANDLE, y - HANDLE, 2 * HANDLE, 2 * HANDLE);
  }
}

function drawHistogram(counts, boundary) {
  const c = $("hist");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const max = Math.max(...counts, 1);
  const bw = c.width / counts.length;
  counts.forEach((n, i) => {
    const h = (Math.sqrt(n) / Math.sqrt(max)) * (c.height - 4);
    ctx.fillStyle = i < boundary ? "#7a4ad8" : "#2a9d3a";
    ctx.fillRect(i * bw, c.height - h, Math.max(bw - 0.5, 0.5), h);
  });
  ctx.fillStyle = "#c00";
  ctx.fillRect(boundary * bw - 1, 0, 2, c.height);
}

function update() {
  if (!demo) return;
  const radius = num("radius");
  const problem = demo.check(new Float64Array(corners), radius);
  if (problem) {
    $("error").textContent = problem;
    drawImage(demo.image_rgba());
    return;
  }
  try {
    const a = demo.analyze(new Float64Array(corners), radius, num("bins"));
    $("error").textContent = "";
    drawImage(a.overlay_rgba());
    drawHistogram(Array.from(a.histogram()), a.boundary());
    $("t").textContent = a.threshold().toFixed(2);
    $("gap").textContent = a.gap();
    $("sep").textContent = a.separability().toFixed(4);
    $("ber").textContent = a.ber().toExponential(2);
    a.free();
  } catch (e) {
    $("error").textContent = e.message ?? String(e);
    drawImage(demo.image_rgba());
  }
}

function toImage(ev) {
  const r = $("view").getBoundingClientRect();
  return [(ev.clientX - r.left) / SCALE - 0.5, (ev.clientY - r.top) / SCALE - 0.5];
}

$("view").addEventListener("mousedown", (ev) => {
  if (!corners) return;
  const [x, y] = toImage(ev);
  let best = -1;
  let bestD = (2 * HANDLE) / SCALE;
  for (let i = 0; i < 4; i++) {
    const d = Math.hypot(corners[2 * i] - x, corners[2 * i + 1] - y);
    if (d < bestD) {
      best = i;
      bestD = d;
    }
  }
  dragging = best;
});

window.addEventListener("mousemove", (ev) => {
  if (dragging < 0) return;
  const [x, y] = toImage(ev);
  corners[2 * dragging] = Math.min(Math.max(Math.round(x), 0), demo.width() - 1);
  corners[2 * dragging + 1] = Math.min(Math.max(Math.round(y), 0), demo.height() - 1);
  update();
});

window.addEventListener("mouseup", () => {
  dragging = -1;
});

$("synth").addEventListener("click", synthesize);
$("reset").addEventListener("click", () => {
  corners = Array.from(demo.oracle_corners());
  update();
});
$("jiggle").addEventListener("click", () => {
  corners = corners.map((v) => v + Math.round(Math.random() * 4 - 2));
  update();
});
$("refine").addEventListener("click", () => {
  try {
    corners = Array.from(demo.refine(new Float64Array(corners), num("radius"), 2));
    update();
  } catch (e) {
    $("error").textContent = e.message ?? String(e);
  }
});
for (const id of ["radius", "bins"]) $(id).addEventListener("change", update);

await init();
synthesize();
