import init, { density_snapshot, gradients, mollified_field } from "./pkg/wdiff_web.js";

const num = (id) => Number(document.getElementById(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c"];

function plot(canvas, xs, ys, labels) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  let lo = Infinity, hi = -Infinity;
  for (const y of ys) for (const v of y) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const sx = (x) => pad + (x - x0) / (x1 - x0) * (w - 2 * pad);
  const sy = (y) => h - pad - (y - lo) / (hi - lo) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(hi.toPrecision(3), 2, pad + 4);
  ctx.fillText(lo.toPrecision(3), 2, h - pad);
  ys.forEach((y, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    y.forEach((v, j) => (j ? ctx.lineTo(sx(xs[j]), sy(v)) : ctx.moveTo(sx(xs[j]), sy(v))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(labels[i], w - pad - 140, pad + 16 * (i + 1));
  });
}

function split(v, parts, n) {
  return Array.from({ length: parts }, (_, i) => Array.from(v.slice(i * n, (i + 1) * n)));
}

function guard(out, f) {
  try { f(); } catch (e) { out.textContent = "error: " + e; }
}

async function main() {
  await init();
  const dOut = document.getElementById("density-out");
  document.getElementById("run-density").onclick = () => guard(dOut, () => {
    const v = density_snapshot(num("alpha"), num("amp"), num("t"), num("seed"), num("replicas"));
    const n = (v.length - 1) / 3;
    const [xs, spde, kde] = split(v, 3, n);
    plot(document.getElementById("density"), xs, [spde, kde], ["spectral", "particle KDE"]);
    dOut.textContent = `L1 distance = ${v[v.length - 1].toFixed(4)}`;
  });
  const gOut = document.getElementById("gradient-out");
  document.getElementById("run-gradient").onclick = () => guard(gOut, () => {
    const v = gradients(num("alpha"), num("amp"), num("t"), num("eps"), num("mw"), num("seed"));
    const f = (x) => x.toExponential(3);
    gOut.textContent =
      `direct  ${f(v[0])} ± ${f(v[1])}\n` +
      `fd      ${f(v[2])} ± ${f(v[3])}\n` +
      `BEL     ${f(v[4])} ± ${f(v[5])}   (I1 ${f(v[6])}, I2 ${f(v[7])})`;
  });
  document.getElementById("run-field").onclick = () => {
    const v = mollified_field(num("amp"), num("eps-field"));
    const n = v.length / 3;
    const [xs, a, s] = split(v, 3, n);
    plot(document.getElementById("field"), xs, [a, s], ["A", "A mollified"]);
  };
}

main();
