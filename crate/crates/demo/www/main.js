import init, { class_names, synth_log_mel, lr_curve, mixture_histogram } from "./pkg/audapt_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = String(e.message ?? e);
    }
  };
}

// viridis-ish ramp from dark blue to yellow
function colour(t) {
  const r = Math.round(255 * Math.min(1, Math.max(0, 1.6 * t - 0.4)));
  const g = Math.round(255 * Math.min(1, Math.max(0, 0.2 + 0.8 * t)));
  const b = Math.round(255 * Math.min(1, Math.max(0, 0.55 - 0.5 * t)));
  return [r, g, b];
}

function fillClasses() {
  const select = $("mel-class");
  select.replaceChildren(
    ...class_names($("mel-domain").value).map((name, i) => new Option(name, String(i))),
  );
}

function drawHeatmap() {
  const h = synth_log_mel($("mel-domain").value, num("mel-class"), BigInt(num("mel-seed")), num("mel-window"));
  const { n_mels, n_frames } = h;
  const values = h.values;
  $("mel-caption").textContent = `caption: "${h.caption}"`;
  const canvas = $("mel-canvas");
  canvas.width = n_frames;
  canvas.height = n_mels;
  canvas.style.width = "900px";
  canvas.style.height = `${n_mels * 2}px`;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n_frames, n_mels);
  let lo = Infinity, hi = -Infinity;
  for (const v of values) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const span = hi - lo || 1;
  for (let m = 0; m < n_mels; m++) {
    for (let t = 0; t < n_frames; t++) {
      const [r, g, b] = colour((values[m * n_frames + t] - lo) / span);
      // low frequencies at the bottom
      const p = 4 * ((n_mels - 1 - m) * n_frames + t);
      img.data[p] = r; img.data[p + 1] = g; img.data[p + 2] = b; img.data[p + 3] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
  h.free();
}

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
}

function drawSchedule() {
  const total = num("lr-total");
  const peak = num("lr-peak");
  const curve = lr_curve(total, peak, num("lr-warm"));
  const canvas = $("lr-canvas");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  axes(ctx, w, h, pad);
  ctx.strokeStyle = "#1f5fa8";
  ctx.beginPath();
  curve.forEach((lr, s) => {
    const x = pad + (s / total) * (w - 1.5 * pad);
    const y = h - pad - (lr / peak) * (h - 1.5 * pad);
    s === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.fillText(peak.toExponential(1), 2, pad / 2 + 4);
  ctx.fillText("0", pad - 10, h - pad + 4);
  ctx.fillText(String(total), w - pad, h - pad + 14);
}

function drawHistogram() {
  const weights = [num("mix-speech"), num("mix-sound"), num("mix-music")];
  const draws = num("mix-draws");
  const counts = mixture_histogram(...weights, draws, BigInt(num("mix-seed")));
  const total = weights.reduce((a, b) => a + b, 0);
  const canvas = $("mix-canvas");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  axes(ctx, w, h, pad);
  const names = ["speech", "sound", "music"];
  const slot = (w - 1.5 * pad) / 3;
  counts.forEach((c, i) => {
    const frac = c / draws;
    const x = pad + i * slot + slot * 0.2;
    const barH = frac * (h - 1.5 * pad);
    ctx.fillStyle = "#1f5fa8";
    ctx.fillRect(x, h - pad - barH, slot * 0.6, barH);
    // expected fraction
    const ey = h - pad - (weights[i] / total) * (h - 1.5 * pad);
    ctx.strokeStyle = "#c33";
    ctx.beginPath();
    ctx.moveTo(x - 6, ey);
    ctx.lineTo(x + slot * 0.6 + 6, ey);
    ctx.stroke();
    ctx.fillStyle = "#444";
    ctx.fillText(`${names[i]} ${frac.toFixed(4)}`, x, h - pad + 14);
  });
}

await init();
fillClasses();
$("mel-domain").addEventListener("change", report(() => { fillClasses(); drawHeatmap(); }));
$("mel-go").addEventListener("click", report(drawHeatmap));
$("lr-go").addEventListener("click", report(drawSchedule));
$("mix-go").addEventListener("click", report(drawHistogram));
report(drawHeatmap)();
report(drawSchedule)();
report(drawHistogram)();
