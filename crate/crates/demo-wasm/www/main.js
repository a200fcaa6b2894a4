import init, { projectPoints, ogconvStep, propagateMask } from "./pkg/ogpcl_demo.js";

const DIMS = [10, 32, 32];
const BOUNDS = new Float64Array([0.5, 2.5, -1.0, 1.0, 0.0, 2.0]);
const N = 16;
const $ = (id) => document.getElementById(id);

// Value in [0, 1] -> grey-to-blue; NaN -> background.
function paint(canvas, data, rows, cols, scale) {
  const ctx = canvas.getContext("2d");
  canvas.width = cols * scale;
  canvas.height = rows * scale;
  ctx.fillStyle = "#f4f4f4";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const v = data[r * cols + c];
      if (Number.isNaN(v)) continue;
      const t = Math.max(0, Math.min(1, v));
      ctx.fillStyle = `rgb(${230 - 200 * t}, ${230 - 150 * t}, ${240 - 40 * t})`;
      ctx.fillRect(c * scale, r * scale, scale, scale);
    }
  }
}

function normalize(a) {
  let max = 0;
  for (const v of a) max = Math.max(max, Math.abs(v));
  return Array.from(a, (v) => (max > 0 ? v / max : 0));
}

// Torso, head and two arms raised by `angle` degrees, standing ~1.5 m away.
function figure(n, angle, rand) {
  const xyz = new Float32Array(n * 3);
  const a = (angle * Math.PI) / 180;
  for (let i = 0; i < n; i++) {
    let y, z;
    const u = rand();
    const part = rand();
    if (part < 0.5) {
      y = (rand() - 0.5) * 0.3;
      z = 0.2 + u * 1.2;
    } else if (part < 0.65) {
      y = (rand() - 0.5) * 0.15;
      z = 1.45 + rand() * 0.2;
    } else {
      const side = part < 0.825 ? -1 : 1;
      y = side * (0.15 + u * 0.6 * Math.cos(a));
      z = 1.3 + u * 0.6 * Math.sin(a) - 0.3 * (1 - Math.sin(a)) * u;
    }
    xyz[i * 3] = 1.5 + (rand() - 0.5) * 0.3;
    xyz[i * 3 + 1] = y + (rand() - 0.5) * 0.05;
    xyz[i * 3 + 2] = z + (rand() - 0.5) * 0.05;
  }
  return xyz;
}

function mulberry32(seed) {
  return () => {
    seed |= 0;
    seed = (seed + 0x6d2b79f5) | 0;
    let t = Math.imul(seed ^ (seed >>> 15), 1 | seed);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

let seed = 1;
const mask = new Uint8Array(N * N);

function drawProjection() {
  const n = +$("npts").value;
  const angle = +$("arms").value;
  $("npts-v").textContent = n;
  $("arms-v").textContent = `${angle} deg`;
  const p = projectPoints(figure(n, angle, mulberry32(seed)), BOUNDS, ...DIMS);
  const [x, y, z] = p.dims;
  paint($("top"), normalize(p.top), y, z, 6);
  paint($("front"), normalize(p.front), x, z, 6);
  paint($("side"), normalize(p.side), x, y, 6);
  $("kept").textContent = `${p.kept} of ${n} points inside the grid`;
}

function drawConv() {
  const value = +$("value").value;
  $("value-v").textContent = value;
  const s = ogconvStep(mask, N, N, value, $("comp").checked);
  paint($("mask"), Array.from(mask), N, N, 16);
  paint($("count"), Array.from(s.count, (d) => (d > 0 ? d / 9 : NaN)), N, N, 16);
  // map [-18, 18] onto [0, 1]
  paint($("out"), Array.from(s.output, (v, i) => (s.mask[i] > 0 ? 0.5 + v / 36 : NaN)), N, N, 16);
  drawLevels();
}

function drawLevels() {
  const st = propagateMask(mask, N, N, 4, 2);
  const sizes = st.sizes;
  const masks = st.masks;
  const row = $("levels");
  row.replaceChildren();
  let off = 0;
  for (let i = 0; i < sizes.length; i += 2) {
    const [h, w] = [sizes[i], sizes[i + 1]];
    const fig = document.createElement("figure");
    const c = document.createElement("canvas");
    paint(c, Array.from(masks.slice(off, off + h * w)), h, w, 128 / h);
    const cap = document.createElement("figcaption");
    cap.textContent = i === 0 ? `input ${h} x ${w}` : `block ${i / 2}: ${h} x ${w}`;
    fig.append(c, cap);
    row.append(fig);
    off += h * w;
  }
}

async function main() {
  try {
    await init();
  } catch (e) {
    $("status").textContent = `Could not load pkg/ogpcl_demo.js: build it with wasm-pack first (${e})`;
    return;
  }
  $("status").textContent = "";
  const rand = mulberry32(7);
  for (let i = 0; i < N * N; i++) mask[i] = rand() < 0.2 ? 1 : 0;

  $("npts").oninput = drawProjection;
  $("arms").oninput = drawProjection;
  $("resample").onclick = () => {
    seed += 1;
    drawProjection();
  };
  $("value").oninput = drawConv;
  $("comp").onchange = drawConv;
  $("clear").onclick = () => {
    mask.fill(0);
    drawConv();
  };
  $("random").onclick = () => {
    for (let i = 0; i < N * N; i++) mask[i] = Math.random() < 0.2 ? 1 : 0;
    drawConv();
  };
  $("mask").onclick = (ev) => {
    const r = ev.target.getBoundingClientRect();
    const c = Math.floor(((ev.clientX - r.left) / r.width) * N);
    const row = Math.floor(((ev.clientY - r.top) / r.height) * N);
    mask[row * N + c] ^= 1;
    drawConv();
  };
  drawProjection();
  drawConv();
}

main();
