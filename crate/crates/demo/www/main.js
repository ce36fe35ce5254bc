import init, { sigma_histogram, small_ball, foobi_noise_sweep } from "./pkg/smoothed_demo.js";

const SVG = "http://www.w3.org/2000/svg";
const PAD = 45;

const num = (id) => Number(document.getElementById(id).value);

function el(name, attrs, text) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function frame(svg, xr, yr, xlabel, ylabel) {
  svg.replaceChildren();
  const w = svg.width.baseVal.value;
  const h = svg.height.baseVal.value;
  const sx = (x) => PAD + ((x - xr[0]) / (xr[1] - xr[0])) * (w - 2 * PAD);
  const sy = (y) => h - PAD + ((y - yr[0]) / (yr[1] - yr[0])) * (2 * PAD - h);
  svg.append(el("line", { x1: PAD, y1: h - PAD, x2: w - PAD, y2: h - PAD, stroke: "#444" }));
  svg.append(el("line", { x1: PAD, y1: PAD, x2: PAD, y2: h - PAD, stroke: "#444" }));
  for (let i = 0; i <= 4; i++) {
    const x = xr[0] + ((xr[1] - xr[0]) * i) / 4;
    const y = yr[0] + ((yr[1] - yr[0]) * i) / 4;
    svg.append(el("text", { x: sx(x), y: h - PAD + 16, "text-anchor": "middle", "font-size": 11 }, x.toFixed(1)));
    svg.append(el("text", { x: PAD - 6, y: sy(y) + 4, "text-anchor": "end", "font-size": 11 }, y.toFixed(1)));
  }
  svg.append(el("text", { x: w / 2, y: h - 6, "text-anchor": "middle", "font-size": 12 }, xlabel));
  svg.append(el("text", { x: 12, y: PAD - 12, "font-size": 12 }, ylabel));
  return { sx, sy };
}

function polyline(svg, pts, colour) {
  const d = pts.map(([x, y]) => `${x},${y}`).join(" ");
  svg.append(el("polyline", { points: d, fill: "none", stroke: colour, "stroke-width": 2 }));
  for (const [x, y] of pts) svg.append(el("circle", { cx: x, cy: y, r: 3, fill: colour }));
}

function report(id, fn) {
  const out = document.getElementById(id);
  out.className = "";
  try {
    out.textContent = fn();
  } catch (e) {
    out.className = "err";
    out.textContent = String(e);
  }
}

function median(xs) {
  const s = [...xs].sort((a, b) => a - b);
  const k = s.length;
  return k % 2 ? s[(k - 1) / 2] : 0.5 * (s[k / 2 - 1] + s[k / 2]);
}

function runSigma() {
  report("sigma-out", () => {
    const res = sigma_histogram(num("sigma-n"), num("sigma-ell"), num("sigma-k"), num("sigma-rho"), num("sigma-trials"), num("sigma-seed"));
    const vals = Array.from(res.log10_sigma);
    const tol = median(Array.from(res.log10_tol));
    const lo = Math.floor(Math.min(tol, ...vals)) - 1;
    const hi = Math.ceil(Math.max(tol, ...vals)) + 1;
    const bins = 40;
    const counts = new Array(bins).fill(0);
    for (const v of vals) counts[Math.min(bins - 1, Math.floor(((v - lo) / (hi - lo)) * bins))]++;
    const svg = document.getElementById("sigma-plot");
    const { sx, sy } = frame(svg, [lo, hi], [0, Math.max(...counts)], "log10 sigma_k", "trials");
    const bw = (hi - lo) / bins;
    counts.forEach((c, i) => {
      const x0 = sx(lo + i * bw);
      svg.append(el("rect", { x: x0, y: sy(c), width: sx(lo + (i + 1) * bw) - x0 - 1, height: sy(0) - sy(c), fill: "#4a7ab7" }));
    });
    svg.append(el("line", { x1: sx(tol), x2: sx(tol), y1: sy(0), y2: PAD, stroke: "#c33", "stroke-dasharray": "4 3" }));
    const above = res.count_above(1e3);
    const k = num("sigma-k");
    return `${above}/${vals.length} trials have σ_k above 10³ × tolerance (k = ${k}, symmetric dimension ${res.dimension}).`;
  });
}

function runBall() {
  report("ball-out", () => {
    const res = small_ball(num("ball-r"), num("ball-rho"), num("ball-samples"), num("ball-seed"));
    const eps = Array.from(res.eps);
    const prob = Array.from(res.probability);
    const pts = eps.map((e, i) => [Math.log10(e), prob[i]]).filter(([, p]) => p > 0).map(([x, p]) => [x, Math.log10(p)]);
    const ys = pts.map(([, y]) => y);
    const svg = document.getElementById("ball-plot");
    const yr = ys.length ? [Math.floor(Math.min(...ys)), Math.ceil(Math.max(...ys))] : [-6, 0];
    const { sx, sy } = frame(svg, [-3, -1], yr[0] === yr[1] ? [yr[0] - 1, yr[1]] : yr, "log10 eps", "log10 Pr");
    polyline(svg, pts.map(([x, y]) => [sx(x), sy(y)]), "#2a8a4a");
    return `fitted slope ${res.slope.toFixed(3)} (r = ${num("ball-r")}); ${pts.length} of ${eps.length} grid points have hits.`;
  });
}

function runFoobi() {
  report("foobi-out", () => {
    const flat = foobi_noise_sweep(num("foobi-n"), num("foobi-r"), num("foobi-lo"), num("foobi-hi"), num("foobi-points"), num("foobi-trials"), num("foobi-seed"));
    const pts = [];
    for (let i = 0; i < flat.length; i += 2) pts.push([Math.log10(flat[i]), Math.log10(Math.max(flat[i + 1], 1e-17))]);
    const finite = pts.filter(([, y]) => Number.isFinite(y));
    const ys = finite.map(([, y]) => y);
    const svg = document.getElementById("foobi-plot");
    const { sx, sy } = frame(svg, [num("foobi-lo"), num("foobi-hi")], [Math.floor(Math.min(...ys)), Math.ceil(Math.max(...ys, 0))], "log10 ||Err||_F", "log10 error");
    polyline(svg, finite.map(([x, y]) => [sx(x), sy(y)]), "#8a4a9a");
    const last = finite[finite.length - 1];
    return `median matched error ${(10 ** finite[0][1]).toExponential(2)} at the lowest noise, ${(10 ** last[1]).toExponential(2)} at the highest.`;
  });
}

await init();
document.getElementById("sigma-run").addEventListener("click", runSigma);
document.getElementById("ball-run").addEventListener("click", runBall);
document.getElementById("foobi-run").addEventListener("click", runFoobi);
runSigma();
runBall();
runFoobi();
