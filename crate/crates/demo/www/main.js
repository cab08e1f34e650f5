// Built with `wasm-pack build crates/demo --target web --out-dir www/pkg`.
import init, { mixture_trajectories, bound_curve, rd_sample } from "./pkg/ccfm_demo.js";

const $ = (id) => document.getElementById(id);
const SAMPLES = 40;

function axes(ctx, view) {
  const { w, h } = view;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(view.x(0), 0); ctx.lineTo(view.x(0), h);
  ctx.moveTo(0, view.y(0)); ctx.lineTo(w, view.y(0));
  ctx.stroke();
}

function viewport(canvas, [x0, x1], [y0, y1]) {
  const w = canvas.width, h = canvas.height;
  return {
    w, h,
    x: (v) => ((v - x0) / (x1 - x0)) * w,
    y: (v) => h - ((v - y0) / (y1 - y0)) * h,
  };
}

function drawTrajectories(flat, steps, b) {
  const canvas = $("traj"), ctx = canvas.getContext("2d");
  const view = viewport(canvas, [-4, 4], [-3, 3]);
  axes(ctx, view);
  ctx.fillStyle = "rgba(200, 40, 40, 0.08)";
  ctx.fillRect(view.x(b), 0, view.w - view.x(b), view.h);
  const stride = (steps + 1) * 2;
  ctx.strokeStyle = "rgba(30, 90, 200, 0.35)";
  for (let s = 0; s * stride < flat.length; s++) {
    ctx.beginPath();
    for (let k = 0; k <= steps; k++) {
      const i = s * stride + 2 * k;
      const px = view.x(flat[i]), py = view.y(flat[i + 1]);
      k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    }
    ctx.stroke();
    const end = s * stride + 2 * steps;
    ctx.fillStyle = "#123";
    ctx.fillRect(view.x(flat[end]) - 2, view.y(flat[end + 1]) - 2, 4, 4);
  }
}

function drawCurve(flat, b) {
  const canvas = $("curve"), ctx = canvas.getContext("2d");
  const view = viewport(canvas, [0, 1], [b - 3, b + 3]);
  axes(ctx, view);
  ctx.strokeStyle = "#aaa";
  ctx.beginPath(); ctx.moveTo(0, view.y(b)); ctx.lineTo(view.w, view.y(b)); ctx.stroke();
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  let pen = false;
  for (let i = 0; i < flat.length; i += 2) {
    const t = flat[i], v = flat[i + 1];
    if (!Number.isFinite(v)) { pen = false; continue; }
    const py = view.y(Math.max(b - 3, Math.min(b + 3, v)));
    pen ? ctx.lineTo(view.x(t), py) : ctx.moveTo(view.x(t), py);
    pen = true;
  }
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText("bound on the clean estimate vs t", 8, 14);
}

function heat(canvas, field, ns, nt, lo, hi) {
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / ns, ch = canvas.height / nt;
  for (let k = 0; k < nt; k++) {
    for (let j = 0; j < ns; j++) {
      const u = Math.max(0, Math.min(1, (field[k * ns + j] - lo) / (hi - lo)));
      ctx.fillStyle = `hsl(${240 - 240 * u}, 70%, 50%)`;
      ctx.fillRect(j * cw, k * ch, cw + 1, ch + 1);
    }
  }
}

function sampleMixture() {
  const b = parseFloat($("bound").value);
  const steps = parseInt($("steps").value, 10);
  const n = parseFloat($("exponent").value);
  $("bval").textContent = b.toFixed(1);
  try {
    drawTrajectories(mixture_trajectories($("alg").value, n, steps, b, SAMPLES, 0n), steps, b);
    drawCurve(bound_curve(n, b, 400), b);
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
}

function sampleField() {
  try {
    const out = rd_sample($("rdalg").value, 100, BigInt($("rdseed").value));
    const ns = out[0], nt = out[1];
    const sample = out.subarray(2, 2 + ns * nt), reference = out.subarray(2 + ns * nt);
    const lo = Math.min(...reference), hi = Math.max(...reference);
    heat($("rd"), sample, ns, nt, lo, hi);
    heat($("rdref"), reference, ns, nt, lo, hi);
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
}

await init();
$("go").addEventListener("click", sampleMixture);
$("bound").addEventListener("input", sampleMixture);
$("rdgo").addEventListener("click", sampleField);
sampleMixture();
